//! Dense `f32` tensors.
//!
//! Axes are listed outermost first (`[channel, x, y, z]`), but storage is
//! x-fastest within each channel: the flat index of `(c, x, y, z)` is
//! `x + X·(y + Y·(z + Z·c))`. Volume files and the convolution kernels share
//! this order.

use crate::error::{Error, Result};

pub const MAX_AXES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_AXES {
            return Err(Error::invalid(format!(
                "tensor rank must be 1..={MAX_AXES}, got {}",
                dims.len()
            )));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                expected: vec![len],
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        assert!(!dims.is_empty() && dims.len() <= MAX_AXES, "bad rank");
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f32) -> Self {
        let len: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    /// Trailing three axes, i.e. the spatial extent `(X, Y, Z)`.
    pub fn spatial(&self) -> Result<[usize; 3]> {
        let n = self.dims.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "expected at least 3 axes, got {:?}",
                self.dims
            )));
        }
        Ok([self.dims[n - 3], self.dims[n - 2], self.dims[n - 1]])
    }

    /// Product of all leading (non-spatial) axes.
    pub fn channels(&self) -> usize {
        let n = self.dims.len();
        self.dims[..n.saturating_sub(3)].iter().product()
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() || dims.is_empty() || dims.len() > MAX_AXES {
            return Err(Error::Shape {
                op: "reshape",
                expected: self.dims.clone(),
                actual: dims.to_vec(),
            });
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.expect_dims("zip_map", other.dims())?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub(crate) fn expect_dims(&self, op: &'static str, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Shape {
                op,
                expected: dims.to_vec(),
                actual: self.dims.clone(),
            });
        }
        Ok(())
    }
}

/// Flat index of `(x, y, z)` in an x-fastest grid.
#[inline]
pub fn idx3(extent: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + extent[0] * (y + extent[1] * z)
}
