//! Numeric kernels behind the tape operations.

pub(crate) mod bending;
pub(crate) mod conv;
mod direct;
pub(crate) mod resample;
pub(crate) mod upsample;

pub use conv::conv3d;
pub use resample::trilinear_sample;
pub use upsample::upsample_trilinear;
