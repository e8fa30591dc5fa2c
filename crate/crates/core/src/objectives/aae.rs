//! Adversarial autoencoder losses.
//!
//! The discriminator works in code space: prior draws are its positive
//! class, codes `E_η(x)` of real data the negative class. Exchanging the
//! roles of `x` and `z` turns this into the InfoGAN wiring, with the decoder
//! playing the code network.

use crate::error::Result;
use crate::models::{decoder_loglik, Mlp};
use crate::params::Bound;
use crate::tape::{Tape, Var};

use super::gan::{gan_disc_loss, gan_gen_loss_unsaturated, DiscLoss};

fn encode(tape: &mut Tape, encoder: &Mlp, bound: &Bound, x: Var) -> Result<Var> {
    use crate::models::MlpOutput;
    Ok(match encoder.forward(tape, bound, x)? {
        MlpOutput::Linear(z) => z,
        MlpOutput::Logits(l) => tape.sigmoid(l),
        MlpOutput::Gaussian { mean, .. } => mean,
    })
}

/// `-[mean log D(z_prior) + mean log(1 - D(E(x)))]`.
pub fn aae_disc_loss(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_bound: &Bound,
    disc_z: &Mlp,
    disc_bound: &Bound,
    real_x: Var,
    prior_z: Var,
) -> Result<DiscLoss> {
    let code = encode(tape, encoder, enc_bound, real_x)?;
    gan_disc_loss(tape, disc_z, disc_bound, prior_z, code)
}

#[derive(Clone, Copy, Debug)]
pub struct AaeGen {
    /// `-mean log p(x | E(x))`.
    pub recon: Var,
    /// `-mean log D(E(x))`.
    pub adversarial: Var,
    pub total: Var,
}

/// Reconstruction plus the reversed adversarial term on codes.
#[allow(clippy::too_many_arguments)]
pub fn aae_gen_loss(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_bound: &Bound,
    decoder: &Mlp,
    dec_bound: &Bound,
    disc_z: &Mlp,
    disc_bound: &Bound,
    real_x: Var,
) -> Result<AaeGen> {
    let code = encode(tape, encoder, enc_bound, real_x)?;
    let adversarial = gan_gen_loss_unsaturated(tape, disc_z, disc_bound, code)?;
    let out = decoder.forward(tape, dec_bound, code)?;
    let ll = decoder_loglik(tape, out, real_x)?;
    let m = tape.mean(ll);
    let recon = tape.neg(m);
    let total = tape.add(adversarial, recon)?;
    Ok(AaeGen {
        recon,
        adversarial,
        total,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct AaeLosses {
    pub disc_loss: DiscLoss,
    pub gen_recon_loss: AaeGen,
}

/// Both sides on one tape, for evaluation.
#[allow(clippy::too_many_arguments)]
pub fn aae_losses(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_bound: &Bound,
    decoder: &Mlp,
    dec_bound: &Bound,
    disc_z: &Mlp,
    disc_bound: &Bound,
    real_x: Var,
    prior_z: Var,
) -> Result<AaeLosses> {
    let disc_loss = aae_disc_loss(
        tape, encoder, enc_bound, disc_z, disc_bound, real_x, prior_z,
    )?;
    let gen_recon_loss = aae_gen_loss(
        tape, encoder, enc_bound, decoder, dec_bound, disc_z, disc_bound, real_x,
    )?;
    Ok(AaeLosses {
        disc_loss,
        gen_recon_loss,
    })
}
