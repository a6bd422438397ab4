//! Dense displacement fields, warping, and random affine augmentation.
//!
//! Displacements are in voxel units of the fixed grid. All resampling uses
//! backward (pull) mapping with trilinear interpolation and zero padding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::resample::resample_forward;
use crate::tensor::{idx3, Tensor};
use crate::volume::Volume;

/// Per-voxel `(dx, dy, dz)` displacements, stored as `[3, X, Y, Z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    vectors: Tensor,
}

impl DisplacementField {
    pub fn new(vectors: Tensor) -> Result<Self> {
        let d = vectors.dims();
        if d.len() != 4 || d[0] != 3 {
            return Err(Error::invalid(format!(
                "displacement field must be [3, X, Y, Z], got {d:?}"
            )));
        }
        if !vectors.is_finite() {
            return Err(Error::invalid("displacement field has non-finite components"));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(extent: [usize; 3]) -> Self {
        Self {
            vectors: Tensor::zeros(&[3, extent[0], extent[1], extent[2]]),
        }
    }

    pub fn from_fn(extent: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> [f32; 3]) -> Self {
        let n: usize = extent.iter().product();
        let mut data = vec![0.0f32; 3 * n];
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    let i = idx3(extent, x, y, z);
                    let v = f(x, y, z);
                    data[i] = v[0];
                    data[n + i] = v[1];
                    data[2 * n + i] = v[2];
                }
            }
        }
        Self {
            vectors: Tensor::new(&[3, extent[0], extent[1], extent[2]], data).expect("field dims"),
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        let d = self.vectors.dims();
        [d[1], d[2], d[3]]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.vectors
    }

    pub fn into_tensor(self) -> Tensor {
        self.vectors
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        let n = self.vectors.len() / 3;
        let i = idx3(self.extent(), x, y, z);
        let d = self.vectors.data();
        [d[i], d[n + i], d[2 * n + i]]
    }

    /// Displacement at a continuous position (trilinear per component,
    /// zero outside the grid).
    pub fn sample(&self, p: [f32; 3]) -> [f32; 3] {
        let ext = self.extent();
        let n = self.vectors.len() / 3;
        let d = self.vectors.data();
        std::array::from_fn(|c| resample_forward(&d[c * n..(c + 1) * n], ext, &[p[0], p[1], p[2]], [1, 1, 1], false)[0])
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.data().iter().all(|&v| v == 0.0)
    }

    pub fn max_norm(&self) -> f32 {
        let n = self.vectors.len() / 3;
        let d = self.vectors.data();
        (0..n)
            .map(|i| (d[i] * d[i] + d[n + i] * d[n + i] + d[2 * n + i] * d[2 * n + i]).sqrt())
            .fold(0.0, f32::max)
    }
}

fn check_grid(moving: &Volume, ddf: &DisplacementField, op: &'static str) -> Result<()> {
    if moving.extent() != ddf.extent() {
        return Err(Error::Shape {
            op,
            expected: ddf.extent().to_vec(),
            actual: moving.extent().to_vec(),
        });
    }
    Ok(())
}

/// Resamples `moving` at `p + u(p)` for every voxel `p` of the field's grid.
pub fn warp_volume(moving: &Volume, ddf: &DisplacementField) -> Result<Volume> {
    check_grid(moving, ddf, "warp_volume")?;
    let ext = ddf.extent();
    let out = resample_forward(moving.data(), moving.extent(), ddf.tensor().data(), ext, true);
    moving.with_data(out)
}

/// Warps a binary mask and re-binarizes at `threshold`.
pub fn warp_mask(mask: &Volume, ddf: &DisplacementField, threshold: f32) -> Result<Volume> {
    if !mask.is_binary() {
        return Err(Error::invalid("warp_mask expects a binary {0,1} mask"));
    }
    let warped = warp_volume(mask, ddf)?;
    let data = warped
        .data()
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    mask.with_data(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Rotation angles about x, y, z in radians.
    pub rotation: [f64; 3],
    pub scale: [f64; 3],
    /// Translation in voxels.
    pub translation: [f64; 3],
    /// Shear factors `(xy, xz, yz)`.
    pub shear: [f64; 3],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            rotation: [0.0; 3],
            scale: [1.0; 3],
            translation: [0.0; 3],
            shear: [0.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Linear part `R_z·R_y·R_x · Shear · diag(scale)`.
    pub fn linear(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        let [hxy, hxz, hyz] = self.shear;
        let shear = [[1.0, hxy, hxz], [0.0, 1.0, hyz], [0.0, 0.0, 1.0]];
        let scale = [
            [self.scale[0], 0.0, 0.0],
            [0.0, self.scale[1], 0.0],
            [0.0, 0.0, self.scale[2]],
        ];
        matmul(&matmul(&matmul(&rz, &ry), &matmul(&rx, &shear)), &scale)
    }

    /// Maps a point through the forward affine about `center`.
    pub fn apply_point(&self, p: [f64; 3], center: [f64; 3]) -> [f64; 3] {
        let m = self.linear();
        let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        std::array::from_fn(|i| {
            m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2] + center[i] + self.translation[i]
        })
    }

    /// Maps a point through the inverse affine about `center`.
    pub fn invert_point(&self, p: [f64; 3], center: [f64; 3]) -> [f64; 3] {
        let inv = invert3(&self.linear());
        let d: [f64; 3] = std::array::from_fn(|i| p[i] - center[i] - self.translation[i]);
        std::array::from_fn(|i| inv[i][0] * d[0] + inv[i][1] * d[1] + inv[i][2] * d[2] + center[i])
    }
}

pub(crate) fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = det3(m);
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    adj.map(|row| row.map(|v| v / det))
}

/// Half-widths of the uniform augmentation distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    /// Rotation drawn from `±rotation` radians per axis.
    pub rotation: f64,
    /// Scale drawn from `1 ± scale` per axis.
    pub scale: f64,
    /// Translation drawn from `±translation` voxels per axis.
    pub translation: f64,
    /// Shear drawn from `±shear` per component.
    pub shear: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            rotation: 0.1,
            scale: 0.1,
            translation: 2.0,
            shear: 0.05,
        }
    }
}

impl AffineRanges {
    pub fn none() -> Self {
        Self {
            rotation: 0.0,
            scale: 0.0,
            translation: 0.0,
            shear: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.rotation, self.scale, self.translation, self.shear];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("affine ranges must be finite and non-negative: {self:?}")));
        }
        if self.scale >= 1.0 {
            return Err(Error::invalid("affine scale half-width must be below 1 (no flips)"));
        }
        // Keep the sheared linear part comfortably invertible.
        if self.shear >= 0.5 {
            return Err(Error::invalid("affine shear half-width must be below 0.5"));
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.gen_range(-half_width..=half_width)
    }
}

/// Draws affine parameters uniformly within `ranges`. Scales are strictly
/// positive, so the linear part never flips.
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R, ranges: &AffineRanges) -> AffineParams {
    let mut p = AffineParams::identity();
    for v in &mut p.rotation {
        *v = symmetric(rng, ranges.rotation);
    }
    for v in &mut p.scale {
        *v = 1.0 + symmetric(rng, ranges.scale);
    }
    for v in &mut p.translation {
        *v = symmetric(rng, ranges.translation);
    }
    for v in &mut p.shear {
        *v = symmetric(rng, ranges.shear);
    }
    p
}

pub fn volume_center(extent: [usize; 3]) -> [f64; 3] {
    extent.map(|n| (n as f64 - 1.0) / 2.0)
}

/// Resamples `volume` through the inverse of `params` about the volume
/// centre, so content moves forward by the affine.
pub fn apply_affine(volume: &Volume, params: &AffineParams) -> Result<Volume> {
    if params.is_identity() {
        return Ok(volume.clone());
    }
    let field = affine_sampling_field(volume.extent(), params);
    let out = resample_forward(volume.data(), volume.extent(), field.data(), volume.extent(), false);
    volume.with_data(out)
}

/// Absolute sampling coordinates `[3, X, Y, Z]` for the backward mapping.
fn affine_sampling_field(extent: [usize; 3], params: &AffineParams) -> Tensor {
    let center = volume_center(extent);
    let n: usize = extent.iter().product();
    let mut data = vec![0.0f32; 3 * n];
    for z in 0..extent[2] {
        for y in 0..extent[1] {
            for x in 0..extent[0] {
                let i = idx3(extent, x, y, z);
                let q = params.invert_point([x as f64, y as f64, z as f64], center);
                data[i] = q[0] as f32;
                data[n + i] = q[1] as f32;
                data[2 * n + i] = q[2] as f32;
            }
        }
    }
    Tensor::new(&[3, extent[0], extent[1], extent[2]], data).expect("field dims")
}

/// The displacement field that realizes `params` as a pull-back warp.
pub fn affine_ddf(extent: [usize; 3], params: &AffineParams) -> DisplacementField {
    let center = volume_center(extent);
    DisplacementField::from_fn(extent, |x, y, z| {
        let q = params.invert_point([x as f64, y as f64, z as f64], center);
        [(q[0] - x as f64) as f32, (q[1] - y as f64) as f32, (q[2] - z as f64) as f32]
    })
}
