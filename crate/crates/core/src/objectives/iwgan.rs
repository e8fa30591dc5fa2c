//! Importance-weighted generator update.
//!
//! Generated samples come in groups of `k`. Within a group each sample's
//! log-probability of being judged real is weighted by
//! `ŵ_i = w_i / Σ_j w_j` with `w_i = D(x_i) / (1 - D(x_i))`, the ratio
//! `q^r(y=0|x) / q(y=0|x)`. The weights are constants: no gradient flows
//! through them.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{discriminate, generate, Mlp};
use crate::params::Bound;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IwReport {
    pub k: usize,
    /// `w_i`, in sample order.
    pub raw_weights: Vec<f64>,
    /// `ŵ_i`; each group of `k` sums to 1.
    pub normalized: Vec<f64>,
    /// `1 / Σ ŵ²` per group.
    pub ess: Vec<f64>,
    /// Groups whose weights were all zero or non-finite and fell back to
    /// uniform.
    pub degenerate_groups: usize,
}

impl IwReport {
    pub fn mean_ess(&self) -> f64 {
        self.ess.iter().sum::<f64>() / self.ess.len() as f64
    }

    pub fn max_weight(&self) -> f64 {
        self.normalized.iter().copied().fold(0.0, f64::max)
    }
}

/// Weights for discriminator outputs `d` laid out as consecutive groups of
/// `k`.
pub fn importance_weights(d: &[f64], k: usize) -> Result<IwReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if d.is_empty() || d.len() % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} samples do not split into groups of {k}",
            d.len()
        )));
    }
    if let Some(p) = d.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain {
            op: "importance_weights",
            detail: format!("discriminator output {p} outside [0, 1]"),
        });
    }
    let raw: Vec<f64> = d.iter().map(|&p| p / (1.0 - p)).collect();
    let mut normalized = Vec::with_capacity(raw.len());
    let mut ess = Vec::with_capacity(raw.len() / k);
    let mut degenerate = 0;
    for group in raw.chunks(k) {
        let s: f64 = group.iter().sum();
        let start = normalized.len();
        if s > 0.0 && s.is_finite() {
            normalized.extend(group.iter().map(|w| w / s));
        } else {
            degenerate += 1;
            normalized.extend(std::iter::repeat_n(1.0 / k as f64, k));
        }
        let sq: f64 = normalized[start..].iter().map(|w| w * w).sum();
        ess.push(1.0 / sq);
    }
    if degenerate > 0 {
        warn!("{degenerate} importance-weight group(s) degenerate; using uniform weights");
    }
    Ok(IwReport {
        k,
        raw_weights: raw,
        normalized,
        ess,
        degenerate_groups: degenerate,
    })
}

#[derive(Clone, Debug)]
pub struct IwStep {
    /// `-(1/G) Σ_groups Σ_i ŵ_i log D(x_i)`.
    pub loss: Var,
    pub report: IwReport,
}

/// Generator loss for latent rows `z` (groups of `k` consecutive rows).
/// Bind `disc` frozen; with `k = 1` this is the unsaturated GAN loss.
pub fn iw_gan_gen_loss(
    tape: &mut Tape,
    gen: &Mlp,
    gen_bound: &Bound,
    disc: &Mlp,
    disc_bound: &Bound,
    z: Var,
    k: usize,
) -> Result<IwStep> {
    let x = generate(tape, gen, gen_bound, z)?;
    let d = discriminate(tape, disc, disc_bound, x)?;
    let report = importance_weights(tape.value(d).data(), k)?;
    let groups = report.ess.len();
    let w = tape.constant(Tensor::from_parts(
        vec![report.normalized.len()],
        report.normalized.clone(),
    )?);
    let logd = tape.log(d)?;
    let weighted = tape.mul(w, logd)?;
    let s = tape.sum(weighted);
    let loss = tape.scale(s, -1.0 / groups as f64);
    Ok(IwStep { loss, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_arithmetic() {
        let r = importance_weights(&[0.8, 0.2], 2).unwrap();
        assert!((r.raw_weights[0] - 4.0).abs() < 1e-15);
        assert!((r.raw_weights[1] - 0.25).abs() < 1e-15);
        assert!((r.normalized[0] - 16.0 / 17.0).abs() < 1e-15);
        assert!((r.normalized[1] - 1.0 / 17.0).abs() < 1e-15);
        assert!(r.ess[0] >= 1.0 && r.ess[0] <= 2.0);
    }

    #[test]
    fn equal_discriminator_gives_uniform_weights() {
        for k in 1..6 {
            let r = importance_weights(&vec![0.5; 3 * k], k).unwrap();
            assert!(r.normalized.iter().all(|&w| w == 1.0 / k as f64));
            assert!(r.ess.iter().all(|&e| (e - k as f64).abs() < 1e-12));
        }
    }

    #[test]
    fn degenerate_group_falls_back() {
        let r = importance_weights(&[0.0, 0.0, 0.3, 0.6], 2).unwrap();
        assert_eq!(r.degenerate_groups, 1);
        assert_eq!(&r.normalized[..2], &[0.5, 0.5]);
        assert!(importance_weights(&[0.5; 3], 2).is_err());
        assert!(importance_weights(&[0.5; 2], 0).is_err());
    }
}
