//! VAE whose perfect real-vs-generated oracle is replaced by a learned
//! discriminator.
//!
//! Real samples and samples from a frozen generator snapshot both enter the
//! ELBO, each weighted by `q^r_φ(y=0|x) = q_φ(y=1|x)`. With a perfect
//! discriminator real samples get weight 1 and generated ones 0, which is
//! the plain VAE. The `y = 1` branch (data likelihood, degenerate code) and
//! the label KL carry no gradient for the encoder or decoder and are left
//! out.

use crate::error::{Error, Result};
use crate::models::{discriminate_tempered, Mlp};
use crate::params::Bound;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::gan::{gan_disc_loss, DiscLoss};
use super::vae::vae_elbo;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AavaeWeighting {
    /// `σ(logit / τ)` from the discriminator, `τ >= 1`.
    Discriminator { temperature: f64 },
    /// Oracle weights: 1 on real samples, 0 on generated ones.
    Perfect,
}

#[derive(Clone, Debug)]
pub struct AavaeTerms {
    /// `mean_real[w ELBO] + mean_fake[w ELBO]`; maximized.
    pub objective: Var,
    /// `-objective`.
    pub gen_loss: Var,
    pub real_weights: Vec<f64>,
    pub fake_weights: Vec<f64>,
    pub real_elbo: Var,
    pub fake_elbo: Var,
}

fn weights(
    tape: &mut Tape,
    disc: &Mlp,
    disc_bound: &Bound,
    x: Var,
    weighting: AavaeWeighting,
    real: bool,
) -> Result<Vec<f64>> {
    let n = tape.shape(x)[0];
    match weighting {
        AavaeWeighting::Perfect => Ok(vec![if real { 1.0 } else { 0.0 }; n]),
        AavaeWeighting::Discriminator { temperature } => {
            let d = discriminate_tempered(tape, disc, disc_bound, x, temperature)?;
            Ok(tape.value(d).data().to_vec())
        }
    }
}

/// Encoder/decoder side. `fake_x` is detached; the ELBO noise is drawn for
/// the real batch first, then for the generated batch.
#[allow(clippy::too_many_arguments)]
pub fn aavae_gen_loss(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_bound: &Bound,
    decoder: &Mlp,
    dec_bound: &Bound,
    disc: &Mlp,
    disc_bound: &Bound,
    real_x: Var,
    fake_x: Var,
    rng: &mut RngStream,
    weighting: AavaeWeighting,
) -> Result<AavaeTerms> {
    if let AavaeWeighting::Discriminator { temperature } = weighting {
        if !(temperature >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be at least 1, got {temperature}"
            )));
        }
    }
    let fake_x = tape.detach(fake_x);
    let real = vae_elbo(tape, encoder, enc_bound, decoder, dec_bound, real_x, rng)?;
    let fake = vae_elbo(tape, encoder, enc_bound, decoder, dec_bound, fake_x, rng)?;
    let real_weights = weights(tape, disc, disc_bound, real_x, weighting, true)?;
    let fake_weights = weights(tape, disc, disc_bound, fake_x, weighting, false)?;

    let mut weighted_mean = |e: Var, w: &[f64]| -> Result<Var> {
        let wv = tape.constant(Tensor::from_parts(vec![w.len()], w.to_vec())?);
        let p = tape.mul(wv, e)?;
        Ok(tape.mean(p))
    };
    let r = weighted_mean(real.per_example, &real_weights)?;
    let f = weighted_mean(fake.per_example, &fake_weights)?;
    let objective = tape.add(r, f)?;
    let gen_loss = tape.neg(objective);
    Ok(AavaeTerms {
        objective,
        gen_loss,
        real_weights,
        fake_weights,
        real_elbo: real.per_example,
        fake_elbo: fake.per_example,
    })
}

/// Discriminator side: ordinary binary classification of real against
/// generated samples, at temperature 1.
pub fn aavae_disc_loss(
    tape: &mut Tape,
    disc: &Mlp,
    disc_bound: &Bound,
    real_x: Var,
    fake_x: Var,
) -> Result<DiscLoss> {
    gan_disc_loss(tape, disc, disc_bound, real_x, fake_x)
}
