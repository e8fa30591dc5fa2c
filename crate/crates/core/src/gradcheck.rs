//! Finite-difference checks of tape gradients on random model/loss
//! compositions.
//!
//! A [`Composition`] is a handful of small MLPs, some fixed data and one of
//! the training losses. Models marked trainable are bound to the tape and
//! differentiated; the rest are bound frozen, so detached paths and
//! stop-gradient weights stay consistent with perturbing only trainable
//! parameters.

use serde::Serialize;

use crate::error::Result;
use crate::models::{
    bernoulli_loglik, generate, reparam_with_noise, Activation, Head, Mlp, MlpSpec, PriorSpec,
};
use crate::objectives::{
    aae_disc_loss, aae_gen_loss, aavae_gen_loss, gan_disc_loss, gan_gen_loss_unsaturated,
    infogan_losses, iw_gan_gen_loss, sleep_label_loss, sleep_loss, vae_elbo_with_noise,
    wake_loss_with_noise, AavaeWeighting,
};
use crate::params::Bound;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LossKind {
    Regression,
    GanDisc,
    GanGen,
    IwGenK1,
    InfoGanGen,
    InfoGanDisc,
    Vae,
    AaeGen,
    AaeDisc,
    Wake,
    SleepLabel,
    Sleep,
    Aavae,
    Reparam,
}

impl LossKind {
    pub const ALL: [LossKind; 14] = [
        LossKind::Regression,
        LossKind::GanDisc,
        LossKind::GanGen,
        LossKind::IwGenK1,
        LossKind::InfoGanGen,
        LossKind::InfoGanDisc,
        LossKind::Vae,
        LossKind::AaeGen,
        LossKind::AaeDisc,
        LossKind::Wake,
        LossKind::SleepLabel,
        LossKind::Sleep,
        LossKind::Aavae,
        LossKind::Reparam,
    ];
}

#[derive(Clone, Debug)]
pub struct Composition {
    pub kind: LossKind,
    pub models: Vec<Mlp>,
    pub trainable: Vec<bool>,
    data: Vec<Tensor>,
    seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub kind: LossKind,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: String,
    pub passed: bool,
}

fn mlp(rng: &mut RngStream, name: &str, input: usize, output: usize, head: Head) -> Result<Mlp> {
    let depth = 1 + rng.below(2);
    let mut widths = vec![input];
    for _ in 0..depth {
        widths.push(3 + rng.below(6));
    }
    widths.push(output);
    let act = if rng.bernoulli(0.7) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let mut m = Mlp::new(name, MlpSpec::new(widths, act, head)?, rng)?;
    // Zero biases put ReLU pre-activations exactly on the kink for all-zero
    // inputs, where central differences are meaningless.
    for layer in 0..m.num_layers() {
        let name = m.bias_name(layer);
        let shape = m.params().get(&name)?.shape().to_vec();
        m.params_mut()
            .set(&name, rng.uniform_tensor(&shape, -0.5, 0.5))?;
    }
    Ok(m)
}

fn binary(rng: &mut RngStream, n: usize, d: usize) -> Tensor {
    rng.uniform_tensor(&[n, d], 0.0, 1.0)
        .map(|v| if v < 0.5 { 0.0 } else { 1.0 })
}

impl Composition {
    /// Random sizes and weights for the given loss.
    pub fn random(kind: LossKind, rng: &mut RngStream) -> Result<Self> {
        let seed = rng.next_u64();
        let n = 4 + rng.below(3);
        let dx = 2 + rng.below(3);
        let dz = 1 + rng.below(3);
        let (models, trainable, data) = match kind {
            LossKind::Regression => (
                vec![mlp(rng, "f", dx, dz, Head::Linear)?],
                vec![true],
                vec![rng.normal_tensor(&[n, dx]), rng.normal_tensor(&[n, dz])],
            ),
            LossKind::GanDisc | LossKind::SleepLabel => (
                vec![
                    mlp(rng, "gen", dz, dx, Head::Linear)?,
                    mlp(rng, "disc", dx, 1, Head::Sigmoid)?,
                ],
                vec![false, true],
                vec![rng.normal_tensor(&[n, dx]), rng.normal_tensor(&[n, dz])],
            ),
            LossKind::GanGen | LossKind::IwGenK1 => (
                vec![
                    mlp(rng, "gen", dz, dx, Head::Linear)?,
                    mlp(rng, "disc", dx, 1, Head::Sigmoid)?,
                ],
                vec![true, false],
                vec![rng.normal_tensor(&[n, dz])],
            ),
            LossKind::InfoGanGen | LossKind::InfoGanDisc => {
                let gen_side = kind == LossKind::InfoGanGen;
                (
                    vec![
                        mlp(rng, "gen", dz, dx, Head::Linear)?,
                        mlp(rng, "disc", dx, 1, Head::Sigmoid)?,
                        mlp(rng, "code", dx, dz, Head::GaussianParams)?,
                    ],
                    vec![gen_side, !gen_side, true],
                    vec![rng.normal_tensor(&[n, dx]), rng.normal_tensor(&[n, dz])],
                )
            }
            LossKind::Vae | LossKind::Wake => (
                vec![
                    mlp(rng, "enc", dx, dz, Head::GaussianParams)?,
                    mlp(rng, "dec", dz, dx, Head::Sigmoid)?,
                ],
                vec![kind == LossKind::Vae, true],
                vec![binary(rng, n, dx), rng.normal_tensor(&[n, dz])],
            ),
            LossKind::AaeGen | LossKind::AaeDisc => {
                let gen_side = kind == LossKind::AaeGen;
                (
                    vec![
                        mlp(rng, "enc", dx, dz, Head::Linear)?,
                        mlp(rng, "dec", dz, dx, Head::Sigmoid)?,
                        mlp(rng, "disc", dz, 1, Head::Sigmoid)?,
                    ],
                    vec![gen_side, gen_side, !gen_side],
                    vec![binary(rng, n, dx), rng.normal_tensor(&[n, dz])],
                )
            }
            LossKind::Sleep => (
                vec![
                    mlp(rng, "gen", dz, dx, Head::GaussianParams)?,
                    mlp(rng, "inf", dx, dz, Head::GaussianParams)?,
                ],
                vec![false, true],
                vec![],
            ),
            LossKind::Aavae => (
                vec![
                    mlp(rng, "enc", dx, dz, Head::GaussianParams)?,
                    mlp(rng, "dec", dz, dx, Head::Sigmoid)?,
                    mlp(rng, "disc", dx, 1, Head::Sigmoid)?,
                ],
                vec![true, true, false],
                vec![binary(rng, n, dx), binary(rng, n, dx)],
            ),
            LossKind::Reparam => (
                vec![mlp(rng, "enc", dx, dz, Head::GaussianParams)?],
                vec![true],
                vec![rng.normal_tensor(&[n, dx]), rng.normal_tensor(&[n, dz])],
            ),
        };
        Ok(Self {
            kind,
            models,
            trainable,
            data,
            seed,
        })
    }

    fn bind(&self, models: &[Mlp], tape: &mut Tape) -> Vec<Bound> {
        models
            .iter()
            .zip(&self.trainable)
            .map(|(m, &t)| if t { m.bind(tape) } else { m.bind_frozen(tape) })
            .collect()
    }

    fn loss(&self, models: &[Mlp], b: &[Bound], tape: &mut Tape) -> Result<Var> {
        let d = |i: usize, tape: &mut Tape| tape.constant(self.data[i].clone());
        let mut rng = RngStream::new(self.seed, "gradcheck");
        let m = models;
        Ok(match self.kind {
            LossKind::Regression => {
                let x = d(0, tape);
                let t = d(1, tape);
                let y = m[0].forward(tape, &b[0], x)?.linear()?;
                let e = tape.sub(y, t)?;
                let sq = tape.mul(e, e)?;
                tape.mean(sq)
            }
            LossKind::GanDisc => {
                let real = d(0, tape);
                let z = d(1, tape);
                let fake = generate(tape, &m[0], &b[0], z)?;
                gan_disc_loss(tape, &m[1], &b[1], real, fake)?.loss
            }
            LossKind::SleepLabel => {
                let real = d(0, tape);
                let z = d(1, tape);
                let fake = generate(tape, &m[0], &b[0], z)?;
                sleep_label_loss(tape, &m[1], &b[1], real, fake)?
            }
            LossKind::GanGen => {
                let z = d(0, tape);
                let fake = generate(tape, &m[0], &b[0], z)?;
                gan_gen_loss_unsaturated(tape, &m[1], &b[1], fake)?
            }
            LossKind::IwGenK1 => {
                let z = d(0, tape);
                iw_gan_gen_loss(tape, &m[0], &b[0], &m[1], &b[1], z, 1)?.loss
            }
            LossKind::InfoGanGen | LossKind::InfoGanDisc => {
                let real = d(0, tape);
                let z = d(1, tape);
                let fake = generate(tape, &m[0], &b[0], z)?;
                let l = infogan_losses(tape, &m[1], &b[1], &m[2], &b[2], real, fake, z)?;
                if self.kind == LossKind::InfoGanGen {
                    l.gen_total
                } else {
                    l.disc_total
                }
            }
            LossKind::Vae => {
                let x = d(0, tape);
                let v =
                    vae_elbo_with_noise(tape, &m[0], &b[0], &m[1], &b[1], x, self.data[1].clone())?;
                tape.neg(v.elbo)
            }
            LossKind::Wake => {
                let x = d(0, tape);
                wake_loss_with_noise(tape, &m[1], &b[1], &m[0], &b[0], x, self.data[1].clone())?
            }
            LossKind::AaeGen => {
                let x = d(0, tape);
                aae_gen_loss(tape, &m[0], &b[0], &m[1], &b[1], &m[2], &b[2], x)?.total
            }
            LossKind::AaeDisc => {
                let x = d(0, tape);
                let z = d(1, tape);
                aae_disc_loss(tape, &m[0], &b[0], &m[2], &b[2], x, z)?.loss
            }
            LossKind::Sleep => {
                let prior = PriorSpec::standard_normal(m[0].spec().input_dim());
                sleep_loss(tape, &m[0], &b[0], &m[1], &b[1], &prior, 5, &mut rng)?
            }
            LossKind::Aavae => {
                let real = d(0, tape);
                let fake = d(1, tape);
                let w = AavaeWeighting::Discriminator { temperature: 3.0 };
                aavae_gen_loss(
                    tape, &m[0], &b[0], &m[1], &b[1], &m[2], &b[2], real, fake, &mut rng, w,
                )?
                .gen_loss
            }
            LossKind::Reparam => {
                // E[z²] through the reparameterization with a frozen ε.
                let x = d(0, tape);
                let (mean, logvar) = m[0].forward(tape, &b[0], x)?.gaussian()?;
                let r = reparam_with_noise(tape, mean, logvar, self.data[1].clone())?;
                let sq = tape.mul(r.z, r.z)?;
                let s = tape.mean(sq);
                let p = tape.sigmoid(mean);
                let bl = bernoulli_loglik(tape, p, logvar)?;
                let bm = tape.mean(bl);
                tape.sub(s, bm)?
            }
        })
    }

    /// Loss value at the given parameters.
    pub fn value(&self, models: &[Mlp]) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(models, &mut tape);
        let l = self.loss(models, &b, &mut tape)?;
        tape.item(l)
    }

    /// Compares tape gradients with central differences on up to
    /// `max_coords` randomly chosen trainable coordinates.
    pub fn check(
        &self,
        h: f64,
        rel_tol: f64,
        abs_floor: f64,
        max_coords: usize,
    ) -> Result<GradcheckReport> {
        let mut tape = Tape::new();
        let bounds = self.bind(&self.models, &mut tape);
        let loss = self.loss(&self.models, &bounds, &mut tape)?;
        let grads = tape.backward(loss)?;

        let mut coords = Vec::new();
        for (mi, m) in self.models.iter().enumerate() {
            if !self.trainable[mi] {
                continue;
            }
            for name in m.params().names() {
                let n = m.params().get(name)?.numel();
                coords.extend((0..n).map(|i| (mi, name.clone(), i)));
            }
        }
        let mut pick = RngStream::new(self.seed, "gradcheck/coords");
        pick.shuffle(&mut coords);
        coords.truncate(max_coords);

        let mut report = GradcheckReport {
            kind: self.kind,
            coords_checked: coords.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst: String::new(),
            passed: true,
        };
        for (mi, name, i) in coords {
            let var = bounds[mi].get(&name)?;
            let auto = grads.get(var).data()[i];
            let mut shifted = self.models.clone();
            let base = shifted[mi].params().get(&name)?.clone();
            let mut eval = |delta: f64| -> Result<f64> {
                let mut data = base.data().to_vec();
                data[i] += delta;
                shifted[mi]
                    .params_mut()
                    .set(&name, Tensor::from_parts(base.shape().to_vec(), data)?)?;
                self.value(&shifted)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let abs = (auto - fd).abs();
            let rel = abs / auto.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
            let ok = abs <= abs_floor || rel < rel_tol;
            report.max_abs_err = report.max_abs_err.max(abs);
            // Relative error is only meaningful away from zero gradients.
            if auto.abs().max(fd.abs()) > abs_floor && rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]: tape {auto:e}, fd {fd:e}");
            }
            report.passed &= ok;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_builds_and_checks() {
        let mut rng = RngStream::new(0, "gc-unit");
        for kind in LossKind::ALL {
            let c = Composition::random(kind, &mut rng).unwrap();
            let r = c.check(1e-5, 1e-4, 1e-7, 12).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.coords_checked > 0);
        }
    }
}
