//! Flow map generative models at desk scale.
//!
//! The crate bundles a small differentiable tensor engine, stochastic
//! interpolants, the flow-map network family, every training objective
//! (flow matching, Lagrangian / Eulerian / Shortcut self-distillation and
//! their guided variants, dynamic weighting, perceptual regularization,
//! relativistic pairing adversarial losses), discrete timestep sampling,
//! synthetic paired data, analytic oracles, and the training / sampling
//! runtime.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod interpolant;
pub mod losses;
pub mod nets;
pub mod oracle;
pub mod runtime;
pub mod schedule;

pub use autodiff::Tensor;
pub use error::{Error, Result};
