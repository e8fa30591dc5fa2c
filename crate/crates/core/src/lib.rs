//! Numerical core: tensors, a reverse-mode tape, Adam, seeded streams, MLP
//! models, tabular distributions and the training objectives.

pub mod error;
pub mod gradcheck;
pub mod lemma;
pub mod models;
pub mod numdiff;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod tabular;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{AdamConfig, Bound, GradMap, ParamSet};
pub use rng::RngStream;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
