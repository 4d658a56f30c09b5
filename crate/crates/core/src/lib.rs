//! Extended object tracking with a random-matrix filter whose model-mismatch
//! terms are supplied by a recurrent memory network.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the command
//! line and parallel drivers live in the `memtrack` companion crate.
//!
//! * [`spd`]: small dense matrices, Cholesky/Jacobi kernels, Wishart samplers
//! * [`autodiff`]: plain and taped execution backends
//! * [`models`]: beliefs, measurement frames, nominal motion/measurement models
//! * [`filter`]: the joint kinematic/extension recursion
//! * [`memnet`]: memory network, compensation heads, training
//! * [`simulator`]: CV/CT switching scenarios with elliptical targets
//! * [`metrics`]: position RMSE, ellipse IoU, Gaussian Wasserstein distance

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod filter;
pub mod memnet;
pub mod metrics;
pub mod models;
pub mod simulator;
pub mod spd;

pub use error::{Error, Result};
pub use spd::{Mat, SpdMat};
