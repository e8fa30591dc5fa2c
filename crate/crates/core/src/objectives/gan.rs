//! Binary adversarial losses with `q_φ(y=1|x) = D(x)`.

use crate::error::Result;
use crate::models::{discriminate, reverse_prob, Mlp};
use crate::params::Bound;
use crate::tape::{Tape, Var};

use super::neg_mean_log;

#[derive(Clone, Copy, Debug)]
pub struct DiscLoss {
    pub loss: Var,
    /// `-mean log D(real)`.
    pub real_term: Var,
    /// `-mean log(1 - D(fake))`.
    pub fake_term: Var,
}

/// `-[mean log D(real) + mean log(1 - D(fake))]`. `fake_x` is detached
/// before use so no gradient reaches the generator.
pub fn gan_disc_loss(
    tape: &mut Tape,
    disc: &Mlp,
    bound: &Bound,
    real_x: Var,
    fake_x: Var,
) -> Result<DiscLoss> {
    let fake_x = tape.detach(fake_x);
    let d_real = discriminate(tape, disc, bound, real_x)?;
    let real_term = neg_mean_log(tape, d_real)?;
    let d_fake = discriminate(tape, disc, bound, fake_x)?;
    let r_fake = reverse_prob(tape, d_fake);
    let fake_term = neg_mean_log(tape, r_fake)?;
    let loss = tape.add(real_term, fake_term)?;
    Ok(DiscLoss {
        loss,
        real_term,
        fake_term,
    })
}

/// Unsaturated generator loss `-mean log D(G(z))`. Bind `disc` frozen.
pub fn gan_gen_loss_unsaturated(
    tape: &mut Tape,
    disc: &Mlp,
    disc_bound: &Bound,
    fake_x: Var,
) -> Result<Var> {
    let d = discriminate(tape, disc, disc_bound, fake_x)?;
    neg_mean_log(tape, d)
}
