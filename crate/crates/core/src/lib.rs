// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod lbfgs;
pub mod linalg;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod probing;
pub mod rng;
pub mod sae;
pub mod scaling;
pub mod source;
pub mod store;
pub mod tensor;

pub use error::{GlpError, Result};
pub use tensor::Matrix;
