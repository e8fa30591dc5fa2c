//! Experiment configuration, validation and the canonical config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unigen_core::models::Activation;
use unigen_core::AdamConfig;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Gan,
    Iwgan,
    Infogan,
    Aae,
    Vae,
    Aavae,
    Wakesleep,
    VerifyLemmas,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Gan => "gan",
            ExperimentKind::Iwgan => "iwgan",
            ExperimentKind::Infogan => "infogan",
            ExperimentKind::Aae => "aae",
            ExperimentKind::Vae => "vae",
            ExperimentKind::Aavae => "aavae",
            ExperimentKind::Wakesleep => "wakesleep",
            ExperimentKind::VerifyLemmas => "verify-lemmas",
        }
    }

    /// Kinds whose samples come from a generator network fed prior noise,
    /// as opposed to a likelihood decoder.
    pub fn is_adversarial_generator(self) -> bool {
        matches!(
            self,
            ExperimentKind::Gan | ExperimentKind::Iwgan | ExperimentKind::Infogan
        )
    }
}

/// Finite 2-D Gaussian mixture with isotropic components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub means: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub stds: Vec<f64>,
}

impl MixtureSpec {
    /// Two modes at (−2, 0) and (+2, 0) with weights 0.75 / 0.25 and
    /// std 0.3. The second mode is the small one.
    pub fn asymmetric_two_mode() -> Self {
        Self {
            means: vec![[-2.0, 0.0], [2.0, 0.0]],
            weights: vec![0.75, 0.25],
            stds: vec![0.3, 0.3],
        }
    }

    pub fn num_modes(&self) -> usize {
        self.means.len()
    }

    /// Index of the lowest-weight mode (first one on ties).
    pub fn smallest_mode(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w < self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.weights.len() != n || self.stds.len() != n {
            return Err(Error::Config(format!(
                "mixture has {n} means, {} weights, {} stds",
                self.weights.len(),
                self.stds.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "mixture weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("mixture stds must be finite and >= 0".into()));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        Ok(())
    }
}

/// MNIST-format IDX files. The test pair is optional; without it no
/// held-out bound is reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default = "one")]
    pub subset_fraction: f64,
    /// Pixels above this value become 1, the rest 0. `None` keeps
    /// grey levels in [0, 1].
    #[serde(default = "half")]
    pub binarize_threshold: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn half() -> Option<f64> {
    Some(0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    #[serde(rename = "gaussian-mixture-2d")]
    GaussianMixture2d(MixtureSpec),
    MnistIdx(MnistSpec),
    /// One-hot draws from a random categorical distribution over
    /// `support_size` outcomes, generated from the run seed.
    TabularSynthetic {
        support_size: usize,
    },
}

impl DatasetSpec {
    pub fn validate(&self, base: &Path) -> Result<()> {
        match self {
            DatasetSpec::GaussianMixture2d(m) => m.validate(),
            DatasetSpec::MnistIdx(m) => {
                if !(m.subset_fraction > 0.0 && m.subset_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "subset_fraction {} outside (0, 1]",
                        m.subset_fraction
                    )));
                }
                if let Some(t) = m.binarize_threshold {
                    if !(0.0..1.0).contains(&t) {
                        return Err(Error::Config(format!(
                            "binarize_threshold {t} outside [0, 1)"
                        )));
                    }
                }
                if m.test_images.is_some() != m.test_labels.is_some() {
                    return Err(Error::Config(
                        "test_images and test_labels go together".into(),
                    ));
                }
                let paths = [
                    Some(&m.images),
                    Some(&m.labels),
                    m.test_images.as_ref(),
                    m.test_labels.as_ref(),
                ];
                for p in paths.into_iter().flatten() {
                    let full = resolve(base, p);
                    if !full.is_file() {
                        return Err(Error::Config(format!("{} does not exist", full.display())));
                    }
                }
                Ok(())
            }
            DatasetSpec::TabularSynthetic { support_size } => {
                if *support_size < 2 {
                    return Err(Error::Config("support_size must be at least 2".into()));
                }
                Ok(())
            }
        }
    }

    /// Copy with relative paths made absolute against `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        match self {
            DatasetSpec::MnistIdx(m) => DatasetSpec::MnistIdx(MnistSpec {
                images: resolve(base, &m.images),
                labels: resolve(base, &m.labels),
                test_images: m.test_images.as_ref().map(|p| resolve(base, p)),
                test_labels: m.test_labels.as_ref().map(|p| resolve(base, p)),
                ..m.clone()
            }),
            other => other.clone(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Hidden widths shared by every network in the run.
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples drawn from the trained model for sample-based metrics.
    #[serde(default = "default_eval_samples")]
    pub samples: usize,
    /// Mode radius; `None` means 3 std of each component.
    #[serde(default)]
    pub coverage_radius: Option<f64>,
    #[serde(default = "default_coverage_threshold")]
    pub coverage_threshold: f64,
    /// Histogram bins per axis for the divergence estimates.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "one_usize")]
    pub elbo_samples: usize,
}

fn default_eval_samples() -> usize {
    2000
}
fn default_coverage_threshold() -> f64 {
    0.01
}
fn default_bins() -> usize {
    20
}
fn one_usize() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: default_eval_samples(),
            coverage_radius: None,
            coverage_threshold: default_coverage_threshold(),
            bins: default_bins(),
            elbo_samples: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: DatasetSpec,
    /// No default: every run names its seed.
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "AdamConfig::dcgan")]
    pub optim: AdamConfig,
    /// Importance samples per group (`iwgan`).
    #[serde(default = "one_usize")]
    pub k: usize,
    /// Weight temperature (`aavae`).
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Size of the fixed training set drawn for generated datasets.
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    /// 0 means only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Relative to the output root; defaults to `{kind}-seed{seed}-{hash8}`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_temperature() -> f64 {
    3.0
}
fn default_steps() -> usize {
    1000
}
fn default_batch() -> usize {
    64
}
fn default_log_every() -> usize {
    50
}
fn default_train_size() -> usize {
    10_000
}

impl ExperimentConfig {
    /// Defaults for everything except the three required fields.
    pub fn new(kind: ExperimentKind, dataset: DatasetSpec, seed: u64) -> Self {
        Self {
            kind,
            dataset,
            seed,
            model: ModelConfig::default(),
            optim: AdamConfig::dcgan(),
            k: 1,
            temperature: default_temperature(),
            steps: default_steps(),
            batch_size: default_batch(),
            log_every: default_log_every(),
            train_size: default_train_size(),
            checkpoint_every: 0,
            eval: EvalConfig::default(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, validates and resolves relative dataset paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.validate_at(base)?;
        cfg.dataset = cfg.dataset.resolved(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(Path::new("."))
    }

    pub fn validate_at(&self, base: &Path) -> Result<()> {
        self.dataset.validate(base)?;
        let positive = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
            ("k", self.k),
            ("train_size", self.train_size),
            ("model.latent_dim", self.model.latent_dim),
            ("eval.samples", self.eval.samples),
            ("eval.bins", self.eval.bins),
            ("eval.elbo_samples", self.eval.elbo_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.temperature >= 1.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be >= 1, got {}",
                self.temperature
            )));
        }
        let o = &self.optim;
        if !(o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0)
        {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        if let Some(r) = self.eval.coverage_radius {
            if !(r > 0.0) {
                return Err(Error::Config("coverage_radius must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.eval.coverage_threshold) {
            return Err(Error::Config("coverage_threshold outside [0, 1]".into()));
        }
        if let Some(dir) = &self.output_dir {
            if dir.is_absolute()
                || dir
                    .components()
                    .any(|c| c == std::path::Component::ParentDir)
            {
                return Err(Error::Config(
                    "output_dir must be a relative path inside the output root".into(),
                ));
            }
        }
        Ok(())
    }

    /// JSON with object keys sorted and no whitespace.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex sha256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn run_dir_name(&self) -> PathBuf {
        match &self.output_dir {
            Some(d) => d.clone(),
            None => PathBuf::from(format!(
                "{}-seed{}-{}",
                self.kind.as_str(),
                self.seed,
                &self.hash()[..8]
            )),
        }
    }
}

/// Environment variable that overrides the output root.
pub const OUTPUT_ROOT_ENV: &str = "UNIGEN_OUTPUT_ROOT";

/// `UNIGEN_OUTPUT_ROOT` if set, else `fallback`.
pub fn output_root(fallback: &Path) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| fallback.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture_cfg() -> ExperimentConfig {
        ExperimentConfig::new(
            ExperimentKind::Gan,
            DatasetSpec::GaussianMixture2d(MixtureSpec::asymmetric_two_mode()),
            7,
        )
    }

    #[test]
    fn seed_is_required() {
        let text = r#"{"kind":"gan","dataset":{"kind":"tabular-synthetic","support_size":4}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn json_round_trip_and_stable_hash() {
        let cfg = mixture_cfg();
        let back = ExperimentConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let j = mixture_cfg().canonical_json();
        let keys: Vec<_> = [
            "\"batch_size\"",
            "\"dataset\"",
            "\"kind\"",
            "\"seed\"",
            "\"temperature\"",
        ]
        .iter()
        .map(|k| j.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = mixture_cfg();
        c.temperature = 0.5;
        assert!(c.validate().is_err());
        let mut c = mixture_cfg();
        c.dataset = DatasetSpec::GaussianMixture2d(MixtureSpec {
            weights: vec![0.5, 0.4],
            ..MixtureSpec::asymmetric_two_mode()
        });
        assert!(c.validate().is_err());
        let mut c = mixture_cfg();
        c.dataset = DatasetSpec::MnistIdx(MnistSpec {
            images: "missing-images".into(),
            labels: "missing-labels".into(),
            test_images: None,
            test_labels: None,
            subset_fraction: 0.5,
            binarize_threshold: Some(0.5),
        });
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("does not exist"));
        let mut c = mixture_cfg();
        c.k = 0;
        assert!(c.validate().is_err());
        let mut c = mixture_cfg();
        c.output_dir = Some("../escape".into());
        assert!(c.validate().is_err());
        assert!(mixture_cfg().validate().is_ok());
    }

    #[test]
    fn smallest_mode() {
        assert_eq!(MixtureSpec::asymmetric_two_mode().smallest_mode(), 1);
    }
}
