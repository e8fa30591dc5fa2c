//! Wake and sleep phases.
//!
//! Wake fits the generative model `p_θ(x|h)` on real data with `h` inferred
//! by `q_λ(h|x)`; sleep fits `q_λ` on dreamed pairs `(h, x)` from the prior
//! and `p_θ`. Samples crossing between the phases are detached.

use serde::Serialize;

use crate::error::Result;
use crate::models::{
    decoder_loglik, discriminate, encode_with_noise, gaussian_log_density, reverse_prob,
    sample_decoder, Mlp, PriorSpec,
};
use crate::objectives::{backward_into, neg_mean_log};
use crate::params::{AdamConfig, Bound};
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `-mean log p_θ(x | h)` with `h ~ q_λ(h|x)` drawn from `rng`.
pub fn wake_loss(
    tape: &mut Tape,
    gen: &Mlp,
    gen_bound: &Bound,
    inf: &Mlp,
    inf_bound: &Bound,
    real_x: Var,
    rng: &mut RngStream,
) -> Result<Var> {
    let eps = rng.normal_tensor(&[tape.shape(real_x)[0], inf.spec().output_dim()]);
    wake_loss_with_noise(tape, gen, gen_bound, inf, inf_bound, real_x, eps)
}

pub fn wake_loss_with_noise(
    tape: &mut Tape,
    gen: &Mlp,
    gen_bound: &Bound,
    inf: &Mlp,
    inf_bound: &Bound,
    real_x: Var,
    eps: Tensor,
) -> Result<Var> {
    let r = encode_with_noise(tape, inf, inf_bound, real_x, eps)?;
    let h = tape.detach(r.z);
    let out = gen.forward(tape, gen_bound, h)?;
    let ll = decoder_loglik(tape, out, real_x)?;
    let m = tape.mean(ll);
    Ok(tape.neg(m))
}

/// `-mean log q_λ(h | x)` on `n` dreamed pairs `h ~ p(h)`, `x ~ p_θ(x|h)`.
pub fn sleep_loss(
    tape: &mut Tape,
    gen: &Mlp,
    gen_bound: &Bound,
    inf: &Mlp,
    inf_bound: &Bound,
    prior: &PriorSpec,
    n: usize,
    rng: &mut RngStream,
) -> Result<Var> {
    let h = prior.sample(rng, n);
    let hv = tape.constant(h);
    let out = gen.forward(tape, gen_bound, hv)?;
    let x = sample_decoder(tape, out, rng)?;
    let xv = tape.constant(x);
    let (mean, logvar) = inf.forward(tape, inf_bound, xv)?.gaussian()?;
    let ll = gaussian_log_density(tape, hv, mean, logvar)?;
    let m = tape.mean(ll);
    Ok(tape.neg(m))
}

/// Sleep phase with the label `y` as the latent and the discriminator as the
/// inference model: `-Σ_y mean_{x ~ p(x|y)} log q_φ(y | x)`, with
/// `p(x|y=1)` the real batch and `p(x|y=0)` the generated one.
pub fn sleep_label_loss(
    tape: &mut Tape,
    disc: &Mlp,
    disc_bound: &Bound,
    real_x: Var,
    fake_x: Var,
) -> Result<Var> {
    let mut total = None;
    for (y, x) in [(1, real_x), (0, fake_x)] {
        let x = tape.detach(x);
        let q1 = discriminate(tape, disc, disc_bound, x)?;
        let qy = if y == 1 { q1 } else { reverse_prob(tape, q1) };
        let term = neg_mean_log(tape, qy)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("two branches"))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WakeSleepLosses {
    pub wake: f64,
    pub sleep: f64,
}

/// One wake update of `gen` followed by one sleep update of `inf`.
pub fn wake_sleep_step(
    gen: &mut Mlp,
    inf: &mut Mlp,
    real_x: &Tensor,
    prior: &PriorSpec,
    rng: &mut RngStream,
    adam: &AdamConfig,
) -> Result<WakeSleepLosses> {
    let mut tape = Tape::new();
    let gb = gen.bind(&mut tape);
    let ib = inf.bind_frozen(&mut tape);
    let x = tape.constant(real_x.clone());
    let wake = wake_loss(&mut tape, gen, &gb, inf, &ib, x, rng)?;
    let wake_v = tape.item(wake)?;
    let g = backward_into(&mut tape, wake, &gb)?;
    gen.params_mut().adam_step(&g, adam)?;

    let mut tape = Tape::new();
    let gb = gen.bind_frozen(&mut tape);
    let ib = inf.bind(&mut tape);
    let sleep = sleep_loss(&mut tape, gen, &gb, inf, &ib, prior, real_x.rows(), rng)?;
    let sleep_v = tape.item(sleep)?;
    let g = backward_into(&mut tape, sleep, &ib)?;
    inf.params_mut().adam_step(&g, adam)?;
    Ok(WakeSleepLosses {
        wake: wake_v,
        sleep: sleep_v,
    })
}
