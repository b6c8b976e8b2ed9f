//! Desk-scale latent-diffusion personalization.
#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod image;
pub mod kernels;
pub mod nets;
pub mod params;
pub mod personalization;
pub mod prompt;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use image::Image;
pub use params::TensorTable;
pub use tensor::Tensor;
