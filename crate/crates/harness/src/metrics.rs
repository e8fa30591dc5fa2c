//! Sample-based evaluation: mode coverage, histogram divergences and
//! held-out evidence bounds.

use serde::Serialize;
use unigen_core::models::{
    decoder_loglik, encode_with_noise, gaussian_kl_to_prior, gaussian_log_density, Mlp,
};
use unigen_core::tabular::{jsd, kl, TabularDist};
use unigen_core::{RngStream, Tape, Tensor};

use crate::config::MixtureSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeCoverage {
    /// Fraction of all samples whose nearest mode is `i` and that lie within
    /// that mode's radius.
    pub per_mode_hit: Vec<f64>,
    /// Modes whose hit fraction reaches the threshold.
    pub covered: usize,
    /// Fraction of samples within radius of some mode.
    pub high_quality: f64,
    pub radii: Vec<f64>,
}

/// Coverage of a 2-D mixture by `samples` (`[n, 2]`). `radius = None` uses
/// 3 std per mode.
pub fn mode_coverage(
    samples: &Tensor,
    spec: &MixtureSpec,
    radius: Option<f64>,
    threshold: f64,
) -> Result<ModeCoverage> {
    if let Some(r) = radius {
        if !(r > 0.0) {
            return Err(Error::Config(format!(
                "coverage radius must be positive, got {r}"
            )));
        }
    }
    if samples.rank() != 2 || samples.row_len() != 2 {
        return Err(Error::Config(format!(
            "mode coverage needs [n, 2] samples, got {:?}",
            samples.shape()
        )));
    }
    let radii: Vec<f64> = spec
        .stds
        .iter()
        .map(|s| radius.unwrap_or(3.0 * s))
        .collect();
    let m = spec.num_modes();
    let n = samples.rows();
    let mut hits = vec![0usize; m];
    let mut good = 0usize;
    for i in 0..n {
        let p = samples.row(i);
        let dist: Vec<f64> = spec
            .means
            .iter()
            .map(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt())
            .collect();
        let mut nearest = 0;
        for j in 1..m {
            if dist[j] < dist[nearest] {
                nearest = j;
            }
        }
        if dist[nearest] <= radii[nearest] {
            hits[nearest] += 1;
        }
        if dist.iter().zip(&radii).any(|(d, r)| d <= r) {
            good += 1;
        }
    }
    let denom = n.max(1) as f64;
    let per_mode_hit: Vec<f64> = hits.iter().map(|&h| h as f64 / denom).collect();
    let covered = if n == 0 {
        0
    } else {
        per_mode_hit.iter().filter(|&&f| f >= threshold).count()
    };
    Ok(ModeCoverage {
        per_mode_hit,
        covered,
        high_quality: good as f64 / denom,
        radii,
    })
}

/// Axis-aligned bounded grid with `bins` cells per axis. Points outside are
/// clipped into the edge cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: usize,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: usize) -> Result<Self> {
        if lo.len() != hi.len()
            || lo.is_empty()
            || bins == 0
            || lo.iter().zip(&hi).any(|(a, b)| !(a < b))
        {
            return Err(Error::Config(format!(
                "bad grid lo={lo:?} hi={hi:?} bins={bins}"
            )));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Box spanning every mean ± 4 std, at least one unit wide per side.
    pub fn around(spec: &MixtureSpec, bins: usize) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; 2];
        let mut hi = vec![f64::NEG_INFINITY; 2];
        for (m, s) in spec.means.iter().zip(&spec.stds) {
            let pad = (4.0 * s).max(1.0);
            for d in 0..2 {
                lo[d] = lo[d].min(m[d] - pad);
                hi[d] = hi[d].max(m[d] + pad);
            }
        }
        Self::new(lo, hi, bins)
    }

    pub fn num_cells(&self) -> usize {
        self.bins.pow(self.lo.len() as u32)
    }

    pub fn cell(&self, p: &[f64]) -> usize {
        let mut idx = 0;
        for d in 0..self.lo.len() {
            let t = (p[d] - self.lo[d]) / (self.hi[d] - self.lo[d]);
            let b = ((t * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1);
            idx = idx * self.bins + b;
        }
        idx
    }

    /// Histogram with `alpha` added to every cell, normalized.
    pub fn smoothed_histogram(&self, samples: &Tensor, alpha: f64) -> Result<TabularDist> {
        if samples.rank() != 2 || samples.rows() == 0 {
            return Err(Error::Config("histogram of an empty sample set".into()));
        }
        if samples.row_len() != self.lo.len() {
            return Err(Error::Config(format!(
                "samples have {} columns, grid has {} axes",
                samples.row_len(),
                self.lo.len()
            )));
        }
        let mut counts = vec![alpha; self.num_cells()];
        for i in 0..samples.rows() {
            counts[self.cell(samples.row(i))] += 1.0;
        }
        Ok(TabularDist::from_weights(&counts)?)
    }
}

pub const LAPLACE_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Divergences {
    /// `KL(p̂ || q̂)`.
    pub kl_hat: f64,
    pub jsd_hat: f64,
}

/// Divergences between Laplace-smoothed histograms of two sample sets on
/// a common grid.
pub fn histogram_divergences(
    samples_p: &Tensor,
    samples_q: &Tensor,
    grid: &Grid,
) -> Result<Divergences> {
    let p = grid.smoothed_histogram(samples_p, LAPLACE_ALPHA)?;
    let q = grid.smoothed_histogram(samples_q, LAPLACE_ALPHA)?;
    Ok(Divergences {
        kl_hat: kl(&p, &q)?,
        jsd_hat: jsd(&p, &q)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ElboEstimate {
    /// Mean over examples and draws of `log p(x|z) - KL(q(z|x) || p(z))`.
    pub mean_elbo: f64,
    /// Mean over examples of `log (1/S) Σ_s p(x, z_s) / q(z_s|x)`; equal to
    /// a single-draw bound for `S = 1` and tighter in expectation as `S`
    /// grows.
    pub iw_bound: f64,
    pub samples_per_x: usize,
    pub examples: usize,
}

const EVAL_BATCH: usize = 500;

/// Held-out bounds for a gaussian-head encoder and any decoder.
pub fn test_elbo(
    encoder: &Mlp,
    decoder: &Mlp,
    x: &Tensor,
    rng: &mut RngStream,
    samples_per_x: usize,
) -> Result<ElboEstimate> {
    if samples_per_x == 0 {
        return Err(Error::Config("samples_per_x must be at least 1".into()));
    }
    let n = x.rows();
    if n == 0 {
        return Err(Error::Config("empty test set".into()));
    }
    let dz = encoder.spec().output_dim();
    let mut elbo_total = 0.0;
    let mut iw_total = 0.0;
    let mut start = 0;
    while start < n {
        let len = EVAL_BATCH.min(n - start);
        let idx: Vec<usize> = (start..start + len).collect();
        let xb = x.gather_rows(&idx)?;
        let mut log_w = vec![Vec::with_capacity(samples_per_x); len];
        for _ in 0..samples_per_x {
            let mut tape = Tape::new();
            let eb = encoder.bind_frozen(&mut tape);
            let db = decoder.bind_frozen(&mut tape);
            let xv = tape.constant(xb.clone());
            let r = encode_with_noise(&mut tape, encoder, &eb, xv, rng.normal_tensor(&[len, dz]))?;
            let out = decoder.forward(&mut tape, &db, r.z)?;
            let recon = decoder_loglik(&mut tape, out, xv)?;
            let klv = gaussian_kl_to_prior(&mut tape, r.mean, r.logvar)?;
            let log_q = gaussian_log_density(&mut tape, r.z, r.mean, r.logvar)?;
            let zeros = tape.constant(Tensor::zeros(&[len, dz]));
            let log_p = gaussian_log_density(&mut tape, r.z, zeros, zeros)?;
            let (rc, k, q, p) = (
                tape.value(recon),
                tape.value(klv),
                tape.value(log_q),
                tape.value(log_p),
            );
            for i in 0..len {
                elbo_total += rc.data()[i] - k.data()[i];
                log_w[i].push(rc.data()[i] + p.data()[i] - q.data()[i]);
            }
        }
        for lw in &log_w {
            iw_total += log_mean_exp(lw);
        }
        start += len;
    }
    let est = ElboEstimate {
        mean_elbo: elbo_total / (n * samples_per_x) as f64,
        iw_bound: iw_total / n as f64,
        samples_per_x,
        examples: n,
    };
    if !(est.mean_elbo.is_finite() && est.iw_bound.is_finite()) {
        return Err(Error::Core(unigen_core::Error::NonFinite {
            context: "test_elbo".into(),
        }));
    }
    Ok(est)
}

pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
