//! Membership-inference privacy for noisy SGD.
//!
//! The crate computes analytical attacker trade-off curves for one step of
//! (noisy) SGD, composes them across steps, calibrates the gradient noise
//! needed for a target Gaussian privacy level, and audits those guarantees
//! empirically with a gradient likelihood-ratio attack and a closed-form
//! loss-based attack on linear regression.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod calibrator;
pub mod error;
pub mod glir;
pub mod linreg_lrt;
pub mod rng;
pub mod roc;
pub mod sgd;
pub mod specfun;
pub mod trace;
pub mod tradeoff;

pub use error::{Error, Result};
pub use specfun::Probability;
