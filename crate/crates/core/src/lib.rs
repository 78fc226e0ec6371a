//! Desk-scale rectified-flow laboratory.
//!
//! Building blocks: dense f64 tensors with deterministic kernels, a
//! reverse-mode tape, small MLP velocity fields trained by flow matching,
//! trajectory steering (gradient-skipping and backprop baselines), and the
//! analysis tools that quantify error dynamics, gradient similarity,
//! straightness, and integrator accuracy.

pub mod analysis;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod fields;
pub mod flow;
pub mod guidance;
pub mod io;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
