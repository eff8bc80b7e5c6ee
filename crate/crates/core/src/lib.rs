//! Hybrid Mamba/attention U-Net for image inpainting.

pub mod bench;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
pub use mxt_tensor as tensor;
