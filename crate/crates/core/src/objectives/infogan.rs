//! Code reconstruction on generated samples.
//!
//! Only the generated branch carries a code network; real data has no latent
//! code to recover, so no conditional over `z` is built for it.

use crate::error::Result;
use crate::models::{gaussian_log_density, Mlp};
use crate::params::Bound;
use crate::tape::{Tape, Var};

use super::gan::{gan_disc_loss, gan_gen_loss_unsaturated, DiscLoss};

/// `-mean log q_η(z | x)` for a gaussian-params code network.
pub fn infogan_code_loss(
    tape: &mut Tape,
    code_net: &Mlp,
    bound: &Bound,
    fake_x: Var,
    z: Var,
) -> Result<Var> {
    let (mean, logvar) = code_net.forward(tape, bound, fake_x)?.gaussian()?;
    let ll = gaussian_log_density(tape, z, mean, logvar)?;
    let m = tape.mean(ll);
    Ok(tape.neg(m))
}

#[derive(Clone, Copy, Debug)]
pub struct InfoGanLosses {
    pub disc: DiscLoss,
    pub gen_adversarial: Var,
    pub code: Var,
    /// `disc.loss + code`.
    pub disc_total: Var,
    /// `gen_adversarial + code`.
    pub gen_total: Var,
}

/// Both sides of the objective on one tape. `fake_x` should be `G(z)`; the
/// discriminator side sees it detached while the code term is added to both
/// sides.
#[allow(clippy::too_many_arguments)]
pub fn infogan_losses(
    tape: &mut Tape,
    disc: &Mlp,
    disc_bound: &Bound,
    code_net: &Mlp,
    code_bound: &Bound,
    real_x: Var,
    fake_x: Var,
    z: Var,
) -> Result<InfoGanLosses> {
    let disc_l = gan_disc_loss(tape, disc, disc_bound, real_x, fake_x)?;
    let gen_adv = gan_gen_loss_unsaturated(tape, disc, disc_bound, fake_x)?;
    let code = infogan_code_loss(tape, code_net, code_bound, fake_x, z)?;
    let disc_total = tape.add(disc_l.loss, code)?;
    let gen_total = tape.add(gen_adv, code)?;
    Ok(InfoGanLosses {
        disc: disc_l,
        gen_adversarial: gen_adv,
        code,
        disc_total,
        gen_total,
    })
}
