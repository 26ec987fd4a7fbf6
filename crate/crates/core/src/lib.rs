//! Joint speech domain adaptation and bandwidth extension with time-domain
//! GANs: a synthetic three-domain corpus, small differentiable generators and
//! multi-period discriminators, CGAN / CycleGAN objectives and their joint
//! combinations, scheme assembly, a deterministic alternating trainer and
//! speaker-verification style evaluation.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod schemes;
pub mod seeds;
pub mod signals;
pub mod trainer;

pub use error::{Error, Result};
