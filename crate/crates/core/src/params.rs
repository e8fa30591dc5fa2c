//! Named parameter collections, Adam updates and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// Parameters keyed by unique name. Shapes are fixed at insertion; each
/// entry carries its own Adam moments and step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Entry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// lr 2e-4, betas (0.5, 0.999).
    pub fn dcgan() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Tape handles for every parameter of a [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients of the bound parameters, keyed by name.
    pub fn grads(&self, g: &Gradients) -> GradMap {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), g.get(*v)))
            .collect()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let zeros = Tensor::zeros(value.shape());
        self.entries.insert(
            name,
            Entry {
                value,
                m: zeros.clone(),
                v: zeros,
                step: 0,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replaces a value; the shape must match the existing one.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet::set",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn moments(&self, name: &str) -> Result<(&Tensor, &Tensor, u64)> {
        self.entries
            .get(name)
            .map(|e| (&e.m, &e.v, e.step))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Records every parameter as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), tape.param(e.value.clone())))
            .collect();
        Bound { vars }
    }

    /// Records every parameter as a constant (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), tape.constant(e.value.clone())))
            .collect();
        Bound { vars }
    }

    /// One bias-corrected Adam update for every parameter present in
    /// `grads`. Nothing is modified if any gradient is non-finite or names an
    /// unknown parameter.
    pub fn adam_step(&mut self, grads: &GradMap, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let e = self
                .entries
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if e.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: e.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                    index,
                });
            }
        }
        for (name, g) in grads {
            let e = self.entries.get_mut(name).expect("checked above");
            e.step += 1;
            let t = e.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let n = g.numel();
            let mut m = e.m.data().to_vec();
            let mut v = e.v.data().to_vec();
            let mut w = e.value.data().to_vec();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
            let shape = e.value.shape().to_vec();
            e.m = Tensor::raw(shape.clone(), m);
            e.v = Tensor::raw(shape.clone(), v);
            e.value = Tensor::raw(shape, w);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .entries
            .iter()
            .map(|(k, e)| {
                (
                    k.clone(),
                    ParamRecord {
                        shape: e.value.shape().to_vec(),
                        values: e.value.data().to_vec(),
                        m: e.m.data().to_vec(),
                        v: e.v.data().to_vec(),
                        step: e.step,
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        let mut entries = BTreeMap::new();
        for (name, r) in ck.params {
            let value = Tensor::new(r.shape.clone(), r.values)?;
            let m = Tensor::new(r.shape.clone(), r.m)?;
            let v = Tensor::new(r.shape, r.v)?;
            entries.insert(
                name,
                Entry {
                    value,
                    m,
                    v,
                    step: r.step,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "unigen-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a [`ParamSet`]. Values are written with shortest
/// round-trip formatting, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: BTreeMap<String, ParamRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}
