//! Single-sample reparameterized ELBO.

use crate::error::Result;
use crate::models::{decoder_loglik, encode_with_noise, gaussian_kl_to_prior, Mlp};
use crate::params::Bound;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct VaeTerms {
    /// Batch mean of `per_example`; maximized.
    pub elbo: Var,
    /// `recon - kl`, shape `[batch]`.
    pub per_example: Var,
    /// `log p(x | z)`, shape `[batch]`.
    pub recon: Var,
    /// `KL(q(z|x) || N(0, I))`, shape `[batch]`.
    pub kl: Var,
    pub z: Var,
}

/// ELBO with `ε ~ N(0, I)` drawn from `rng`, one row per example.
pub fn vae_elbo(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_bound: &Bound,
    decoder: &Mlp,
    dec_bound: &Bound,
    real_x: Var,
    rng: &mut RngStream,
) -> Result<VaeTerms> {
    let eps = rng.normal_tensor(&[tape.shape(real_x)[0], encoder.spec().output_dim()]);
    vae_elbo_with_noise(tape, encoder, enc_bound, decoder, dec_bound, real_x, eps)
}

pub fn vae_elbo_with_noise(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_bound: &Bound,
    decoder: &Mlp,
    dec_bound: &Bound,
    real_x: Var,
    eps: Tensor,
) -> Result<VaeTerms> {
    let r = encode_with_noise(tape, encoder, enc_bound, real_x, eps)?;
    let out = decoder.forward(tape, dec_bound, r.z)?;
    let recon = decoder_loglik(tape, out, real_x)?;
    let kl = gaussian_kl_to_prior(tape, r.mean, r.logvar)?;
    let per_example = tape.sub(recon, kl)?;
    let elbo = tape.mean(per_example);
    Ok(VaeTerms {
        elbo,
        per_example,
        recon,
        kl,
        z: r.z,
    })
}
