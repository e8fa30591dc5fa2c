//! Training objectives as losses built on a [`Tape`](crate::Tape).
//!
//! Loss builders only record the graph. The caller decides what is trainable
//! by binding each model with [`Mlp::bind`](crate::models::Mlp::bind) or
//! [`Mlp::bind_frozen`](crate::models::Mlp::bind_frozen), runs `backward`,
//! and collects gradients from the trainable bindings. Every loss is
//! minimized; constant terms and overall scale factors are dropped.

pub mod aae;
pub mod aavae;
pub mod gan;
pub mod infogan;
pub mod iwgan;
pub mod vae;
pub mod wake_sleep;

use crate::error::{Error, Result};
use crate::params::{Bound, GradMap};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use aae::{aae_disc_loss, aae_gen_loss, aae_losses, AaeLosses};
pub use aavae::{aavae_disc_loss, aavae_gen_loss, AavaeTerms, AavaeWeighting};
pub use gan::{gan_disc_loss, gan_gen_loss_unsaturated, DiscLoss};
pub use infogan::{infogan_code_loss, infogan_losses, InfoGanLosses};
pub use iwgan::{importance_weights, iw_gan_gen_loss, IwReport, IwStep};
pub use vae::{vae_elbo, vae_elbo_with_noise, VaeTerms};
pub use wake_sleep::{sleep_label_loss, sleep_loss, wake_loss, wake_loss_with_noise};

/// One training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub real_x: Tensor,
    pub z: Tensor,
    /// Importance samples per group; 1 outside importance-weighted training.
    pub k: usize,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.real_x.rank() != 2 || self.z.rank() != 2 {
            return Err(Error::InvalidArgument(
                "batch tensors must be [n, d]".into(),
            ));
        }
        if self.z.rows() != self.real_x.rows() * self.k {
            return Err(Error::InvalidArgument(format!(
                "{} latent rows for {} real rows with k = {}",
                self.z.rows(),
                self.real_x.rows(),
                self.k
            )));
        }
        Ok(())
    }
}

/// Backpropagates `loss` and returns the gradients of every variable in
/// `bound`.
pub fn backward_into(tape: &mut Tape, loss: Var, bound: &Bound) -> Result<GradMap> {
    let g = tape.backward(loss)?;
    Ok(bound.grads(&g))
}

/// `-mean(log p)` over a probability vector.
pub(crate) fn neg_mean_log(tape: &mut Tape, p: Var) -> Result<Var> {
    let l = tape.log(p)?;
    let m = tape.mean(l);
    Ok(tape.neg(m))
}
