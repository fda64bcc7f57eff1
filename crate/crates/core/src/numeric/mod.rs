//! Dense matrices, seeded randomness, initialization and reverse-mode autodiff.

mod init;
mod matrix;
mod prng;
mod tape;

pub use init::{kaiming_bound, kaiming_uniform_init};
pub use matrix::Matrix;
pub use prng::Prng;
pub use tape::{GradientTape, Gradients, Var, LAYER_NORM_EPS};
