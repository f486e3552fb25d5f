//! Accelerated conditional diffusion super-resolution at desk scale: an
//! image-predicting conditional denoiser, stochastic and deterministic
//! reverse-process samplers, and analytic oracles validating every
//! numerical component.

pub mod conditioner;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod imaging;
pub mod metrics;
pub mod numerics;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::Tensor;
