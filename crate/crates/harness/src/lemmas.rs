//! The verification suite behind `unigen verify-lemmas`: gradient checks,
//! the tabular identities, degenerations and the wake-sleep
//! correspondences, each reduced to a worst-case error and a tolerance.

use serde::{Deserialize, Serialize};
use unigen_core::gradcheck::{Composition, LossKind};
use unigen_core::lemma::{
    degeneration_checks, jsd_bound_check, lemma1_check, lemma2_check, optimal_specialization_check,
    wake_sleep_checks, TabularVae, BOUND_SLACK, DEFAULT_STEP, DEFAULT_TOL,
};
use unigen_core::objectives::importance_weights;
use unigen_core::tabular::RandomInstance;
use unigen_core::RngStream;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteConfig {
    pub seed: u64,
    /// Instances for the gradient identity, the specialization and the VAE
    /// rewrite.
    pub instances: usize,
    pub jsd_instances: usize,
    pub support: usize,
    pub gradcheck_compositions: usize,
    /// Tolerance of the two finite-difference identities.
    pub tol: f64,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            jsd_instances: 1000,
            support: 16,
            gradcheck_compositions: 56,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Largest error over instances (for the bound: largest violation, so
    /// `<= 0` means it held everywhere).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, instances: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub config: LemmaSuiteConfig,
    pub checks: Vec<CheckResult>,
    /// Instances where the bound fails against the normalized reversed
    /// posterior (reported, not a pass criterion).
    pub jsd_normalized_violations: usize,
    pub all_passed: bool,
}

impl LemmaSuiteReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({:.3e} > {:.1e})", c.name, c.worst, c.tolerance))
            .collect()
    }
}

pub const GRADCHECK_REL_TOL: f64 = 1e-4;
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-7;
pub const LEMMA2_TOL: f64 = 1e-10;
pub const DEGENERATE_IW_TOL: f64 = 1e-12;
pub const DEGENERATE_AAVAE_TOL: f64 = 1e-12;
pub const CORRESPONDENCE_TOL: f64 = 1e-12;
/// In ulps from `(4, 1/4, 16/17, 1/17)`. `0.8` is not representable, so
/// the odds `0.8 / (1 - 0.8)` are already one ulp above 4 before any
/// normalization; correctly rounded arithmetic on the stored inputs lands
/// at most two ulps from the ideal values.
pub const IW_ARITHMETIC_ULPS: f64 = 2.0;

pub fn gradcheck_suite(seed: u64, n: usize) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, "gradcheck");
    let mut worst: f64 = 0.0;
    let mut all = true;
    for i in 0..n {
        let c = Composition::random(LossKind::ALL[i % LossKind::ALL.len()], &mut rng)?;
        let r = c.check(1e-5, GRADCHECK_REL_TOL, GRADCHECK_ABS_FLOOR, 40)?;
        worst = worst.max(r.max_rel_err);
        all &= r.passed;
    }
    let mut res = CheckResult::new("autodiff", n, worst, GRADCHECK_REL_TOL);
    // A composition passes on relative error or on the absolute floor.
    res.passed = all;
    Ok(res)
}

pub fn lemma1_suite(seed: u64, n: usize, support: usize, tol: f64) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, "lemma1");
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let inst = RandomInstance::draw(&mut rng, support);
        let r = lemma1_check(&inst.model, &inst.theta0, &inst.phi0, DEFAULT_STEP, tol)?;
        worst = worst.max(r.max_abs_diff);
    }
    Ok(CheckResult::new("lemma1_identity", n, worst, tol))
}

/// Returns the check and the count of normalized-posterior violations.
pub fn jsd_bound_suite(seed: u64, n: usize, support: usize) -> Result<(CheckResult, usize)> {
    let mut rng = RngStream::new(seed, "jsd-bound");
    let mut worst = f64::NEG_INFINITY;
    let mut normalized_fail = 0;
    for i in 0..n {
        let inst = RandomInstance::draw(&mut rng, support);
        // The bound is tightest near the frozen parameters: cycle through
        // θ = θ0, a small perturbation of θ0, and an independent draw.
        let theta: Vec<f64> = match i % 3 {
            0 => inst.theta0.clone(),
            1 => inst.theta0.iter().map(|t| t + 0.3 * rng.normal()).collect(),
            _ => (0..support).map(|_| rng.normal()).collect(),
        };
        let r = jsd_bound_check(&inst.model, &theta, &inst.theta0, &inst.phi0)?;
        worst = worst.max(r.jsd - r.expected_kl);
        if !r.holds_normalized {
            normalized_fail += 1;
        }
    }
    Ok((
        CheckResult::new("jsd_bound", n, worst, BOUND_SLACK),
        normalized_fail,
    ))
}

pub fn specialization_suite(seed: u64, n: usize, support: usize, tol: f64) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, "specialization");
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let inst = RandomInstance::draw(&mut rng, support);
        let r = optimal_specialization_check(&inst.model, &inst.theta0, DEFAULT_STEP, tol)?;
        worst = worst.max(r.max_abs_diff);
    }
    Ok(CheckResult::new("optimal_specialization", n, worst, tol))
}

pub fn lemma2_suite(seed: u64, n: usize) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, "lemma2");
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let vae = TabularVae::random(&mut rng, 16, 8);
        let r = lemma2_check(&vae)?;
        worst = worst.max(r.diff).max(r.kl_form_residual);
    }
    Ok(CheckResult::new("lemma2_equivalence", n, worst, LEMMA2_TOL))
}

pub fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

pub fn iw_arithmetic() -> Result<CheckResult> {
    let r = importance_weights(&[0.8, 0.2], 2)?;
    let err = ulps(r.raw_weights[0], 4.0)
        .max(ulps(r.raw_weights[1], 0.25))
        .max(ulps(r.normalized[0], 16.0 / 17.0))
        .max(ulps(r.normalized[1], 1.0 / 17.0));
    Ok(CheckResult::new(
        "iw_arithmetic",
        1,
        err as f64,
        IW_ARITHMETIC_ULPS,
    ))
}

pub fn verify_lemmas(cfg: &LemmaSuiteConfig) -> Result<LemmaSuiteReport> {
    let s = cfg.seed;
    let mut checks = vec![
        gradcheck_suite(s, cfg.gradcheck_compositions)?,
        lemma1_suite(s, cfg.instances, cfg.support, cfg.tol)?,
    ];
    let (jsd, normalized_fail) = jsd_bound_suite(s, cfg.jsd_instances, cfg.support)?;
    checks.push(jsd);
    checks.push(specialization_suite(
        s,
        cfg.instances,
        cfg.support,
        cfg.tol,
    )?);
    checks.push(lemma2_suite(s, cfg.instances)?);
    let d = degeneration_checks(s)?;
    checks.push(CheckResult::new(
        "iwgan_k1",
        1,
        d.iw_k1_grad_diff,
        DEGENERATE_IW_TOL,
    ));
    checks.push(CheckResult::new(
        "aavae_perfect",
        1,
        d.aavae_neural_diff.max(d.aavae_tabular_diff),
        DEGENERATE_AAVAE_TOL,
    ));
    checks.push(CheckResult::new(
        "iw_uniform",
        1,
        d.uniform_weight_diff,
        0.0,
    ));
    checks.push(iw_arithmetic()?);
    let ws = wake_sleep_checks(s)?;
    checks.push(CheckResult::new(
        "wake_recon",
        1,
        ws.wake_vs_recon,
        CORRESPONDENCE_TOL,
    ));
    checks.push(CheckResult::new(
        "sleep_disc",
        1,
        ws.sleep_vs_disc,
        CORRESPONDENCE_TOL,
    ));
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(LemmaSuiteReport {
        config: cfg.clone(),
        checks,
        jsd_normalized_violations: normalized_fail,
        all_passed,
    })
}
