use crate::error::{Error, Result};
use crate::tensor::{idx3, Tensor};

/// Default isotropic voxel size in millimetres.
pub const DEFAULT_SPACING_MM: f64 = 0.8;

/// A single-channel 3D image on an isotropic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Tensor,
    spacing: f64,
}

impl Volume {
    pub fn new(grid: Tensor, spacing: f64) -> Result<Self> {
        if grid.dims().len() != 3 {
            return Err(Error::invalid(format!(
                "volume grid must be [X, Y, Z], got {:?}",
                grid.dims()
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!("voxel spacing must be positive, got {spacing}")));
        }
        Ok(Self { grid, spacing })
    }

    pub fn zeros(extent: [usize; 3], spacing: f64) -> Self {
        Self::new(Tensor::zeros(&extent), spacing).expect("valid zero volume")
    }

    pub fn from_fn(extent: [usize; 3], spacing: f64, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(extent.iter().product());
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(Tensor::new(&extent, data).expect("extent matches data"), spacing).expect("valid volume")
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn into_grid(self) -> Tensor {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        self.grid.data()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extent(&self) -> [usize; 3] {
        let d = self.grid.dims();
        [d[0], d[1], d[2]]
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.grid.data()[idx3(self.extent(), x, y, z)]
    }

    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::new(self.grid.dims(), data)?, self.spacing)
    }

    pub fn is_binary(&self) -> bool {
        self.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub(crate) fn expect_same_grid(&self, other: &Volume, op: &'static str) -> Result<()> {
        if self.extent() != other.extent() {
            return Err(Error::Shape {
                op,
                expected: self.extent().to_vec(),
                actual: other.extent().to_vec(),
            });
        }
        Ok(())
    }
}
