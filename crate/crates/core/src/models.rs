//! MLP building blocks for generators, discriminators and inference nets.
//!
//! A model owns its [`ParamSet`]; each training iteration binds the set onto
//! a fresh [`Tape`] (trainable or frozen) and runs [`Mlp::forward`]. Weights
//! are stored `[fan_in, fan_out]`, so a layer is `x · W + b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 4.0;
/// Discriminator probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Identity output.
    Linear,
    /// Output is a logit; probabilities come from the logistic function.
    Sigmoid,
    /// Output splits into mean and log-variance of equal width.
    GaussianParams,
}

/// Architecture description. `widths` runs from input to output; for a
/// [`Head::GaussianParams`] head the last width is the latent dimension and
/// the final layer emits twice that many values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, head: Head) -> Result<Self> {
        let spec = Self {
            widths,
            hidden,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP widths must have at least two positive entries, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let n = self.widths.len() - 1;
        (0..n)
            .map(|i| {
                let out = if i == n - 1 && self.head == Head::GaussianParams {
                    2 * self.widths[i + 1]
                } else {
                    self.widths[i + 1]
                };
                (self.widths[i], out)
            })
            .collect()
    }
}

/// Stored alongside checkpoints so a parameter file can be rebuilt into a
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub name: String,
    pub spec: MlpSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    spec: MlpSpec,
    params: ParamSet,
}

#[derive(Clone, Copy, Debug)]
pub enum MlpOutput {
    Linear(Var),
    Logits(Var),
    Gaussian { mean: Var, logvar: Var },
}

impl MlpOutput {
    pub fn linear(self) -> Result<Var> {
        match self {
            MlpOutput::Linear(v) => Ok(v),
            _ => Err(Error::InvalidArgument("expected a linear head".into())),
        }
    }

    pub fn logits(self) -> Result<Var> {
        match self {
            MlpOutput::Logits(v) => Ok(v),
            _ => Err(Error::InvalidArgument("expected a sigmoid head".into())),
        }
    }

    pub fn gaussian(self) -> Result<(Var, Var)> {
        match self {
            MlpOutput::Gaussian { mean, logvar } => Ok((mean, logvar)),
            _ => Err(Error::InvalidArgument(
                "expected a gaussian-params head".into(),
            )),
        }
    }
}

impl Mlp {
    /// Scaled-uniform fan-in initialization: `U(-a, a)` with
    /// `a = sqrt(3 / fan_in)`, zero biases.
    pub fn new(name: &str, spec: MlpSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let a = (3.0 / fan_in as f64).sqrt();
            params.insert(
                weight_name(name, i),
                rng.uniform_tensor(&[fan_in, fan_out], -a, a),
            )?;
            params.insert(bias_name(name, i), Tensor::zeros(&[fan_out]))?;
        }
        Ok(Self {
            name: name.to_string(),
            spec,
            params,
        })
    }

    /// Rebuilds a model from a card and a parameter set, checking that every
    /// expected parameter exists with the right shape.
    pub fn from_parts(card: ModelCard, params: ParamSet) -> Result<Self> {
        card.spec.validate()?;
        for (i, (fan_in, fan_out)) in card.spec.layer_dims().into_iter().enumerate() {
            let w = params.get(&weight_name(&card.name, i))?;
            let b = params.get(&bias_name(&card.name, i))?;
            if w.shape() != [fan_in, fan_out] || b.shape() != [fan_out] {
                return Err(Error::ShapeMismatch {
                    op: "Mlp::from_parts",
                    lhs: vec![fan_in, fan_out],
                    rhs: w.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            name: card.name,
            spec: card.spec,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn card(&self) -> ModelCard {
        ModelCard {
            name: self.name.clone(),
            spec: self.spec.clone(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.spec.widths.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        weight_name(&self.name, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        bias_name(&self.name, layer)
    }

    /// Sets the last layer's weights and bias to zero.
    pub fn zero_last_layer(&mut self) -> Result<()> {
        let last = self.num_layers() - 1;
        for name in [self.weight_name(last), self.bias_name(last)] {
            let shape = self.params.get(&name)?.shape().to_vec();
            self.params.set(&name, Tensor::zeros(&shape))?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        self.params.bind_frozen(tape)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<MlpOutput> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.spec.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "Mlp::forward",
                lhs: vec![shape.first().copied().unwrap_or(0), self.spec.input_dim()],
                rhs: shape,
            });
        }
        let n = self.num_layers();
        let mut h = x;
        for i in 0..n {
            let w = bound.get(&self.weight_name(i))?;
            let b = bound.get(&self.bias_name(i))?;
            let xw = tape.matmul(h, w)?;
            h = tape.add(xw, b)?;
            if i + 1 < n {
                h = match self.spec.hidden {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(match self.spec.head {
            Head::Linear => MlpOutput::Linear(h),
            Head::Sigmoid => MlpOutput::Logits(h),
            Head::GaussianParams => {
                let d = self.spec.output_dim();
                let mean = tape.slice(h, 1, 0, d)?;
                let raw = tape.slice(h, 1, d, d)?;
                let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
                MlpOutput::Gaussian { mean, logvar }
            }
        })
    }
}

fn weight_name(model: &str, layer: usize) -> String {
    format!("{model}.{layer}.weight")
}

fn bias_name(model: &str, layer: usize) -> String {
    format!("{model}.{layer}.bias")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    StandardNormal,
    /// Uniform on `[-1, 1]^dim`.
    UniformHypercube,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub dim: usize,
}

impl PriorSpec {
    pub fn standard_normal(dim: usize) -> Self {
        Self {
            kind: PriorKind::StandardNormal,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("prior dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Tensor {
        match self.kind {
            PriorKind::StandardNormal => rng.normal_tensor(&[n, self.dim]),
            PriorKind::UniformHypercube => rng.uniform_tensor(&[n, self.dim], -1.0, 1.0),
        }
    }
}

/// `x = G(z)`. Sigmoid heads return probabilities, gaussian heads their mean.
pub fn generate(tape: &mut Tape, gen: &Mlp, bound: &Bound, z: Var) -> Result<Var> {
    match gen.forward(tape, bound, z)? {
        MlpOutput::Linear(x) => Ok(x),
        MlpOutput::Logits(l) => Ok(tape.sigmoid(l)),
        MlpOutput::Gaussian { mean, .. } => Ok(mean),
    }
}

/// Raw discriminator logits as a `[batch]` vector.
pub fn disc_logits(tape: &mut Tape, disc: &Mlp, bound: &Bound, x: Var) -> Result<Var> {
    if disc.spec().head != Head::Sigmoid || disc.spec().output_dim() != 1 {
        return Err(Error::InvalidArgument(
            "discriminator needs a sigmoid head of width 1".into(),
        ));
    }
    let l = disc.forward(tape, bound, x)?.logits()?;
    let b = tape.shape(l)[0];
    tape.reshape(l, &[b])
}

/// `q_φ(y=1|x) = D(x)`, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn discriminate(tape: &mut Tape, disc: &Mlp, bound: &Bound, x: Var) -> Result<Var> {
    discriminate_tempered(tape, disc, bound, x, 1.0)
}

/// `σ(logit / τ)`, clamped like [`discriminate`].
pub fn discriminate_tempered(
    tape: &mut Tape,
    disc: &Mlp,
    bound: &Bound,
    x: Var,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut l = disc_logits(tape, disc, bound, x)?;
    if temperature != 1.0 {
        l = tape.scale(l, 1.0 / temperature);
    }
    let p = tape.sigmoid(l);
    Ok(tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS))
}

/// `q^r(y|x) = q(1-y|x)`: the reversed probability `1 - p`.
pub fn reverse_prob(tape: &mut Tape, p: Var) -> Var {
    let n = tape.neg(p);
    tape.add_scalar(n, 1.0)
}

#[derive(Clone, Copy, Debug)]
pub struct Reparam {
    pub z: Var,
    pub mean: Var,
    pub logvar: Var,
}

/// `z = mean + exp(logvar / 2) · ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn encode_reparam(
    tape: &mut Tape,
    enc: &Mlp,
    bound: &Bound,
    x: Var,
    rng: &mut RngStream,
) -> Result<Reparam> {
    let (mean, logvar) = enc.forward(tape, bound, x)?.gaussian()?;
    let eps = rng.normal_tensor(tape.shape(mean));
    reparam_with_noise(tape, mean, logvar, eps)
}

/// [`encode_reparam`] with caller-supplied noise.
pub fn encode_with_noise(
    tape: &mut Tape,
    enc: &Mlp,
    bound: &Bound,
    x: Var,
    eps: Tensor,
) -> Result<Reparam> {
    let (mean, logvar) = enc.forward(tape, bound, x)?.gaussian()?;
    reparam_with_noise(tape, mean, logvar, eps)
}

pub fn reparam_with_noise(tape: &mut Tape, mean: Var, logvar: Var, eps: Tensor) -> Result<Reparam> {
    if eps.shape() != tape.shape(mean) {
        return Err(Error::ShapeMismatch {
            op: "reparam",
            lhs: tape.shape(mean).to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let eps = tape.constant(eps);
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, eps)?;
    let z = tape.add(mean, noise)?;
    Ok(Reparam { z, mean, logvar })
}

/// Per-example `Σ_d [x log σ(l) + (1-x) log(1-σ(l))]`, evaluated as
/// `Σ_d [x·l - softplus(l)]`.
pub fn bernoulli_loglik(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(logits) {
        return Err(Error::ShapeMismatch {
            op: "bernoulli_loglik",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(logits).to_vec(),
        });
    }
    if let Some(v) = tape
        .value(x)
        .data()
        .iter()
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Domain {
            op: "bernoulli_loglik",
            detail: format!("target {v} outside [0, 1]"),
        });
    }
    let xl = tape.mul(x, logits)?;
    let sp = tape.softplus(logits);
    let terms = tape.sub(xl, sp)?;
    tape.sum_rows(terms)
}

/// Per-example `KL(N(mean, exp(logvar)) || N(0, I))
/// = ½ Σ_d (exp(logvar) + mean² - 1 - logvar)`.
pub fn gaussian_kl_to_prior(tape: &mut Tape, mean: Var, logvar: Var) -> Result<Var> {
    let var = tape.exp(logvar);
    let m2 = tape.mul(mean, mean)?;
    let a = tape.add(var, m2)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum_rows(c)?;
    Ok(tape.scale(s, 0.5))
}

/// Per-example diagonal Gaussian log-density
/// `-½ Σ_d [(t - mean)² / exp(logvar) + logvar + log 2π]`.
pub fn gaussian_log_density(tape: &mut Tape, target: Var, mean: Var, logvar: Var) -> Result<Var> {
    let diff = tape.sub(target, mean)?;
    let sq = tape.mul(diff, diff)?;
    let neg_lv = tape.neg(logvar);
    let prec = tape.exp(neg_lv);
    let scaled = tape.mul(sq, prec)?;
    let t = tape.add(scaled, logvar)?;
    let t = tape.add_scalar(t, LN_2PI);
    let s = tape.sum_rows(t)?;
    Ok(tape.scale(s, -0.5))
}

/// Per-example log-likelihood of `x` under a decoder output:
/// Bernoulli for sigmoid heads, diagonal Gaussian for gaussian heads, and a
/// unit-variance Gaussian around the output for linear heads.
pub fn decoder_loglik(tape: &mut Tape, out: MlpOutput, x: Var) -> Result<Var> {
    match out {
        MlpOutput::Logits(l) => bernoulli_loglik(tape, x, l),
        MlpOutput::Gaussian { mean, logvar } => gaussian_log_density(tape, x, mean, logvar),
        MlpOutput::Linear(mean) => {
            let zero = tape.constant(Tensor::zeros(tape.shape(mean)));
            gaussian_log_density(tape, x, mean, zero)
        }
    }
}

/// Draws `x ~ p(x | out)` from evaluated decoder outputs (values only),
/// using the same likelihood as [`decoder_loglik`].
pub fn sample_decoder(tape: &Tape, out: MlpOutput, rng: &mut RngStream) -> Result<Tensor> {
    match out {
        MlpOutput::Logits(l) => {
            let v = tape.value(l);
            let data = v
                .data()
                .iter()
                .map(|&logit| f64::from(u8::from(rng.bernoulli(crate::tape::sigmoid(logit)))))
                .collect();
            Tensor::from_parts(v.shape().to_vec(), data)
        }
        MlpOutput::Gaussian { mean, logvar } => {
            let m = tape.value(mean);
            let lv = tape.value(logvar);
            let eps = rng.normal_tensor(m.shape());
            let data = m
                .data()
                .iter()
                .zip(lv.data())
                .zip(eps.data())
                .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
                .collect();
            Tensor::from_parts(m.shape().to_vec(), data)
        }
        MlpOutput::Linear(mean) => {
            let m = tape.value(mean);
            let eps = rng.normal_tensor(m.shape());
            m.zip_map(&eps, |a, e| a + e)
        }
    }
}
