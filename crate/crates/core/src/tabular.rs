//! Exact distributions over small finite supports.
//!
//! Everything here is a closed-form sum. These are the oracles the lemma
//! checks and several property tests are built on, so they avoid any
//! sampling and validate their inputs strictly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Normalization slack accepted by [`TabularDist::new`].
pub const SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TabularDist {
    probs: Vec<f64>,
}

impl TabularDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} at support point {i}"
            )));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {s}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let z: f64 = weights.iter().sum();
        if !(z > 0.0) {
            return Err(Error::ZeroNormalizer("all weights are zero".into()));
        }
        Self::new(weights.iter().map(|w| w / z).collect())
    }

    /// `softmax(logits)`.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::new(softmax(logits)?)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::InvalidArgument(format!(
                "point {at} outside support of size {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    /// Symmetric Dirichlet(1) draw.
    pub fn random(rng: &mut RngStream, n: usize) -> Self {
        Self {
            probs: rng.dirichlet_ones(n),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// `w·self + (1-w)·other`.
    pub fn mix(&self, other: &TabularDist, w: f64) -> Result<Self> {
        same_support("mix", self, other)?;
        Ok(Self {
            probs: self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| w * a + (1.0 - w) * b)
                .collect(),
        })
    }

    /// `Σ p(i) f(i)`.
    pub fn expect(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| p * f(i))
            .sum()
    }

    pub fn max_abs_diff(&self, other: &TabularDist) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// A conditional table `p(target | condition)`, one row per condition value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TabularConditional {
    rows: Vec<TabularDist>,
}

impl TabularConditional {
    pub fn new(rows: Vec<TabularDist>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidDistribution("conditional has no rows".into()));
        };
        let n = first.len();
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidDistribution(format!(
                "row {i} has support {} but row 0 has {n}",
                rows[i].len()
            )));
        }
        Ok(Self { rows })
    }

    /// Binary conditional over `y ∈ {0, 1}` from `q(y=1 | x)` per row.
    pub fn from_bernoulli(p_one: &[f64]) -> Result<Self> {
        let rows = p_one
            .iter()
            .map(|&p| TabularDist::new(vec![1.0 - p, p]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Rows drawn from Dirichlet(1).
    pub fn random(rng: &mut RngStream, conditions: usize, targets: usize) -> Self {
        Self {
            rows: (0..conditions)
                .map(|_| TabularDist::random(rng, targets))
                .collect(),
        }
    }

    /// Rows are `softmax` of the given logit rows.
    pub fn from_logit_rows(logits: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            logits
                .iter()
                .map(|l| TabularDist::from_logits(l))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn rows(&self) -> &[TabularDist] {
        &self.rows
    }

    pub fn row(&self, condition: usize) -> &TabularDist {
        &self.rows[condition]
    }

    pub fn num_conditions(&self) -> usize {
        self.rows.len()
    }

    pub fn target_size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn prob(&self, condition: usize, target: usize) -> f64 {
        self.rows[condition].probs[target]
    }

    /// For binary tables: `q(y=1 | x)` for every `x`.
    pub fn p_one(&self) -> Result<Vec<f64>> {
        if self.target_size() != 2 {
            return Err(Error::InvalidArgument("p_one needs a binary target".into()));
        }
        Ok(self.rows.iter().map(|r| r.probs[1]).collect())
    }

    /// Marginal `Σ_c w(c) p(·|c)`.
    pub fn marginalize(&self, weights: &TabularDist) -> Result<TabularDist> {
        if weights.len() != self.num_conditions() {
            return Err(Error::ShapeMismatch {
                op: "marginalize",
                lhs: vec![self.num_conditions()],
                rhs: vec![weights.len()],
            });
        }
        let mut out = vec![0.0; self.target_size()];
        for (w, row) in weights.probs.iter().zip(&self.rows) {
            for (o, p) in out.iter_mut().zip(&row.probs) {
                *o += w * p;
            }
        }
        TabularDist::from_weights(&out)
    }
}

/// The GAN as a tabular latent-variable model: `x | y=0` is the generator
/// `softmax(θ)`, `x | y=1` is the fixed data distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GanTabularModel {
    pub p_data: TabularDist,
    pub p_y: TabularDist,
}

impl GanTabularModel {
    /// Model with uniform `p(y)`.
    pub fn new(p_data: TabularDist) -> Self {
        Self {
            p_data,
            p_y: TabularDist {
                probs: vec![0.5, 0.5],
            },
        }
    }

    pub fn support_size(&self) -> usize {
        self.p_data.len()
    }

    pub fn p_g(&self, theta: &[f64]) -> Result<TabularDist> {
        if theta.len() != self.support_size() {
            return Err(Error::ShapeMismatch {
                op: "p_g",
                lhs: vec![self.support_size()],
                rhs: vec![theta.len()],
            });
        }
        TabularDist::from_logits(theta)
    }

    /// `p_θ(x | y)`.
    pub fn conditional(&self, theta: &[f64], y: usize) -> Result<TabularDist> {
        match y {
            0 => self.p_g(theta),
            1 => Ok(self.p_data.clone()),
            _ => Err(Error::InvalidArgument(format!("label {y} is not 0 or 1"))),
        }
    }

    fn check_uniform_y(&self) -> Result<()> {
        if self.p_y.len() != 2 || (self.p_y.probs[0] - 0.5).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(
                "tabular GAN requires uniform p(y)".into(),
            ));
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "softmax needs finite, non-empty logits".into(),
        ));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

fn same_support(op: &'static str, p: &TabularDist, q: &TabularDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    Ok(())
}

/// `KL(p || q) = Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl(p: &TabularDist, q: &TabularDist) -> Result<f64> {
    same_support("kl", p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::AbsoluteContinuity { index: i, p: pi });
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave tiny negatives when p == q.
    Ok(total.max(0.0))
}

/// Jensen-Shannon divergence `½KL(p||m) + ½KL(q||m)`, `m = (p+q)/2`.
pub fn jsd(p: &TabularDist, q: &TabularDist) -> Result<f64> {
    same_support("jsd", p, q)?;
    let m = p.mix(q, 0.5)?;
    Ok(0.5 * kl(p, &m)? + 0.5 * kl(q, &m)?)
}

/// `p_θ0(x) = Σ_y p(y) p_θ0(x|y) = (p_gθ0 + p_data) / 2`.
pub fn marginal_prior(model: &GanTabularModel, theta0: &[f64]) -> Result<TabularDist> {
    model.check_uniform_y()?;
    model.p_g(theta0)?.mix(&model.p_data, 0.5)
}

/// Unnormalized `q^r_φ0(y|x) p_θ0(x)` and its normalizer. The reversed
/// discriminator is `q^r(y|x) = q_φ0(1-y|x)`.
pub fn reversed_kernel(
    model: &GanTabularModel,
    theta0: &[f64],
    phi0: &TabularConditional,
    y: usize,
) -> Result<(Vec<f64>, f64)> {
    if y > 1 {
        return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
    }
    if phi0.num_conditions() != model.support_size() || phi0.target_size() != 2 {
        return Err(Error::ShapeMismatch {
            op: "reversed_posterior",
            lhs: vec![model.support_size(), 2],
            rhs: vec![phi0.num_conditions(), phi0.target_size()],
        });
    }
    let prior = marginal_prior(model, theta0)?;
    let k: Vec<f64> = (0..model.support_size())
        .map(|x| phi0.prob(x, 1 - y) * prior.probs[x])
        .collect();
    let z = k.iter().sum();
    Ok((k, z))
}

/// `q^r(x|y) ∝ q^r_φ0(y|x) p_θ0(x)`.
pub fn reversed_posterior(
    model: &GanTabularModel,
    theta0: &[f64],
    phi0: &TabularConditional,
    y: usize,
) -> Result<TabularDist> {
    let (k, z) = reversed_kernel(model, theta0, phi0, y)?;
    if !(z > 0.0) {
        return Err(Error::ZeroNormalizer(format!(
            "reversed posterior for y={y}: discriminator gives the label zero mass on the prior's support"
        )));
    }
    TabularDist::new(k.into_iter().map(|v| v / z).collect())
}

/// Optimal discriminator table with the rows where it is undefined.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalDiscriminator {
    /// Undefined rows hold the uniform `[0.5, 0.5]`.
    pub table: TabularConditional,
    pub undefined: Vec<usize>,
}

/// `q(y=1|x) = p_data(x) / (p_g(x) + p_data(x))`.
pub fn optimal_discriminator(
    p_g: &TabularDist,
    p_data: &TabularDist,
) -> Result<OptimalDiscriminator> {
    same_support("optimal_discriminator", p_g, p_data)?;
    let mut undefined = Vec::new();
    let p_one: Vec<f64> = p_g
        .probs
        .iter()
        .zip(&p_data.probs)
        .enumerate()
        .map(|(i, (g, d))| {
            let s = g + d;
            if s > 0.0 {
                d / s
            } else {
                undefined.push(i);
                0.5
            }
        })
        .collect();
    Ok(OptimalDiscriminator {
        table: TabularConditional::from_bernoulli(&p_one)?,
        undefined,
    })
}

/// Random lemma instance: Dirichlet(1) data, `θ0 ~ N(0, I)` logits and a
/// discriminator `q(y=1|x) = σ(u)`, `u ~ U(-4, 4)`.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub model: GanTabularModel,
    pub theta0: Vec<f64>,
    pub phi0: TabularConditional,
}

impl RandomInstance {
    pub fn draw(rng: &mut RngStream, n: usize) -> Self {
        let model = GanTabularModel::new(TabularDist::random(rng, n));
        let theta0 = (0..n).map(|_| rng.normal()).collect();
        let p_one: Vec<f64> = (0..n)
            .map(|_| crate::tape::sigmoid(rng.uniform_range(-4.0, 4.0)))
            .collect();
        let phi0 = TabularConditional::from_bernoulli(&p_one).expect("σ(u) lies in (0, 1)");
        Self {
            model,
            theta0,
            phi0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(p: &[f64]) -> TabularDist {
        TabularDist::new(p.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = d(&[0.3, 0.7]);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let k = kl(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap();
        assert!((k - 2f64.ln()).abs() < 1e-15);
        let want = 0.3 * 0.5f64.ln() + 0.7 * 1.75f64.ln();
        let k = kl(&p, &d(&[0.6, 0.4])).unwrap();
        assert!((k - want).abs() < 1e-15);
        assert!((k - 0.18378).abs() < 1e-5);
        match kl(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])) {
            Err(Error::AbsoluteContinuity { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsd_examples() {
        let p = d(&[0.3, 0.7]);
        let q = d(&[0.6, 0.4]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap() - 2f64.ln()).abs() < 1e-15);
        // Brute force from the definition.
        let m = [0.45, 0.55];
        let want = 0.5 * (0.3 * (0.3f64 / m[0]).ln() + 0.7 * (0.7f64 / m[1]).ln())
            + 0.5 * (0.6 * (0.6f64 / m[0]).ln() + 0.4 * (0.4f64 / m[1]).ln());
        assert!((jsd(&p, &q).unwrap() - want).abs() < 1e-15);
        assert!((jsd(&p, &q).unwrap() - jsd(&q, &p).unwrap()).abs() < 1e-16);
    }

    #[test]
    fn validation() {
        assert!(TabularDist::new(vec![0.5, 0.6]).is_err());
        assert!(TabularDist::new(vec![-0.1, 1.1]).is_err());
        assert!(TabularDist::new(vec![]).is_err());
        assert!(TabularDist::from_weights(&[0.0, 0.0]).is_err());
        assert!(TabularConditional::new(vec![d(&[1.0]), d(&[0.5, 0.5])]).is_err());
    }

    #[test]
    fn marginal_prior_cases() {
        let m = GanTabularModel::new(d(&[0.0, 1.0]));
        // softmax cannot reach an exact point mass; use a huge logit gap.
        let prior = marginal_prior(&m, &[800.0, 0.0]).unwrap();
        assert!(prior.max_abs_diff(&d(&[0.5, 0.5])) < 1e-15);
        let m = GanTabularModel::new(d(&[0.2, 0.3, 0.5]));
        let theta: Vec<f64> = [0.2f64, 0.3, 0.5].iter().map(|p| p.ln()).collect();
        assert!(marginal_prior(&m, &theta).unwrap().max_abs_diff(&m.p_data) < 1e-15);
    }

    #[test]
    fn reversed_posterior_cases() {
        let mut rng = RngStream::new(4, "tabular");
        let inst = RandomInstance::draw(&mut rng, 16);
        let prior = marginal_prior(&inst.model, &inst.theta0).unwrap();
        let uniform = TabularConditional::from_bernoulli(&[0.5; 16]).unwrap();
        for y in 0..2 {
            let post = reversed_posterior(&inst.model, &inst.theta0, &uniform, y).unwrap();
            assert!(post.max_abs_diff(&prior) < 1e-15);
        }
        let p_g = inst.model.p_g(&inst.theta0).unwrap();
        let opt = optimal_discriminator(&p_g, &inst.model.p_data).unwrap();
        assert!(opt.undefined.is_empty());
        let q0 = reversed_posterior(&inst.model, &inst.theta0, &opt.table, 0).unwrap();
        assert!(q0.max_abs_diff(&inst.model.p_data) < 1e-12);
        let q1 = reversed_posterior(&inst.model, &inst.theta0, &opt.table, 1).unwrap();
        assert!(q1.max_abs_diff(&p_g) < 1e-12);

        let ones = TabularConditional::from_bernoulli(&[0.0; 16]).unwrap();
        assert!(matches!(
            reversed_posterior(&inst.model, &inst.theta0, &ones, 0),
            Err(Error::ZeroNormalizer(_))
        ));
    }

    #[test]
    fn optimal_discriminator_cases() {
        let o =
            optimal_discriminator(&d(&[0.2, 0.0, 0.8, 0.0]), &d(&[0.6, 0.4, 0.0, 0.0])).unwrap();
        let p1 = o.table.p_one().unwrap();
        assert!((p1[0] - 0.75).abs() < 1e-15);
        assert_eq!(p1[1], 1.0);
        assert_eq!(p1[2], 0.0);
        assert_eq!(o.undefined, vec![3]);
        let p = d(&[0.25; 4]);
        let o = optimal_discriminator(&p, &p).unwrap();
        assert!(o.table.p_one().unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn marginal_prior_matches_sampling() {
        let mut rng = RngStream::new(9, "tabular-mc");
        let inst = RandomInstance::draw(&mut rng, 8);
        let prior = marginal_prior(&inst.model, &inst.theta0).unwrap();
        let p_g = inst.model.p_g(&inst.theta0).unwrap();
        let n = 200_000;
        let mut counts = vec![0usize; 8];
        for _ in 0..n {
            let src = if rng.bernoulli(0.5) {
                &inst.model.p_data
            } else {
                &p_g
            };
            counts[rng.categorical(src.probs())] += 1;
        }
        for (c, p) in counts.iter().zip(prior.probs()) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * sigma + 1e-12);
        }
    }
}
