//! Deformable 3D image registration with Reptile meta-learning and few-shot
//! test-time optimization.
//!
//! The crate is built bottom-up:
//!
//! - [`tensor`], [`tape`] and [`ops`]: `f32` tensors, reverse-mode
//!   differentiation, 3D convolution and trilinear resampling.
//! - [`transforms`]: displacement fields, warping and affine augmentation.
//! - [`losses`] and [`metrics`]: SSD, bending energy, Dice and TRE.
//! - [`models`]: the direct dense field and the registration network.
//! - [`optim`]: SGD, Adam and the linear meta step-size schedule.
//! - [`meta`]: classical registration, conventional training, Reptile
//!   meta-training and test-time optimization.
//! - [`data`]: synthetic phantoms, dataset splits and file formats.
//! - [`report`] and [`config`]: evaluation records, summaries and presets.

pub mod config;
pub mod data;
pub mod error;
mod io;
pub mod losses;
pub mod meta;
pub mod metrics;
pub mod models;
pub mod ops;
pub mod optim;
pub mod params;
pub mod report;
pub mod seeds;
pub mod tape;
pub mod tensor;
pub mod transforms;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use volume::Volume;
