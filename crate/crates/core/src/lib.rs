//! Asynchronous parallel stochastic quasi-Newton optimization with variance
//! reduction, sequential and asynchronous baselines, a deterministic delay
//! simulator, and closed-form convergence diagnostics.

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod lbfgs;
pub mod model;
mod reference;
pub mod simsched;
pub mod vecops;
pub mod vr;

pub use error::{Error, Result};
