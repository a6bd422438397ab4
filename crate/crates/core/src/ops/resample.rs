//! Trilinear sampling with zero padding outside the grid.

use crate::error::{Error, Result};
use crate::tensor::{idx3, Tensor};

/// Beyond any supported grid extent.
const FAR: f32 = 1.0e7;

#[derive(Clone, Copy)]
struct Stencil {
    base: [isize; 3],
    frac: [f32; 3],
}

impl Stencil {
    /// Positions are clamped to a range that reads only zero corners beyond
    /// the grid, which leaves value and gradient unchanged and keeps the
    /// integer cell index from overflowing on runaway fields.
    #[inline]
    fn at(p: [f32; 3]) -> Self {
        let p = p.map(|v| v.clamp(-2.0, FAR));
        let fl = p.map(f32::floor);
        Self {
            base: fl.map(|v| v as isize),
            frac: [p[0] - fl[0], p[1] - fl[1], p[2] - fl[2]],
        }
    }

    /// The 8 corner values (zero outside), ordered `i + 2j + 4l`.
    #[inline]
    fn corners(&self, volume: &[f32], ext: [usize; 3]) -> [f32; 8] {
        let mut out = [0.0f32; 8];
        for (n, v) in out.iter_mut().enumerate() {
            if let Some(i) = self.corner_index(n, ext) {
                *v = volume[i];
            }
        }
        out
    }

    #[inline]
    fn corner_index(&self, n: usize, ext: [usize; 3]) -> Option<usize> {
        let x = self.base[0] + (n & 1) as isize;
        let y = self.base[1] + ((n >> 1) & 1) as isize;
        let z = self.base[2] + ((n >> 2) & 1) as isize;
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        (x < ext[0] && y < ext[1] && z < ext[2]).then(|| idx3(ext, x, y, z))
    }

    #[inline]
    fn weights(&self) -> [f32; 8] {
        let [fx, fy, fz] = self.frac;
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        std::array::from_fn(|n| wx[n & 1] * wy[(n >> 1) & 1] * wz[(n >> 2) & 1])
    }

    /// Interpolated value as nested lerps (x, then y, then z), which makes
    /// on-grid samples exact.
    #[inline]
    fn value(&self, c: &[f32; 8]) -> f32 {
        let [fx, fy, fz] = self.frac;
        let lx = |a: f32, b: f32| a * (1.0 - fx) + b * fx;
        let y0 = lx(c[0], c[1]) * (1.0 - fy) + lx(c[2], c[3]) * fy;
        let y1 = lx(c[4], c[5]) * (1.0 - fy) + lx(c[6], c[7]) * fy;
        y0 * (1.0 - fz) + y1 * fz
    }

    /// Derivative of the interpolant with respect to the sample position.
    #[inline]
    fn position_grad(&self, c: &[f32; 8]) -> [f32; 3] {
        let [fx, fy, fz] = self.frac;
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let wx = [1.0 - fx, fx];
        let mut g = [0.0f32; 3];
        for l in 0..2 {
            for j in 0..2 {
                let dx = c[1 + 2 * j + 4 * l] - c[2 * j + 4 * l];
                g[0] += dx * wy[j] * wz[l];
            }
            for i in 0..2 {
                let dy = c[i + 2 + 4 * l] - c[i + 4 * l];
                g[1] += dy * wx[i] * wz[l];
            }
        }
        for j in 0..2 {
            for i in 0..2 {
                let dz = c[i + 2 * j + 4] - c[i + 2 * j];
                g[2] += dz * wx[i] * wy[j];
            }
        }
        g
    }
}

/// Samples a single-channel volume at continuous voxel coordinates.
pub fn trilinear_sample(volume: &Tensor, points: &[[f32; 3]]) -> Result<Vec<f32>> {
    let ext = volume_extent(volume)?;
    Ok(points
        .iter()
        .map(|&p| {
            let s = Stencil::at(p);
            s.value(&s.corners(volume.data(), ext))
        })
        .collect())
}

pub(crate) fn volume_extent(volume: &Tensor) -> Result<[usize; 3]> {
    if volume.channels() != 1 {
        return Err(Error::invalid(format!(
            "expected a single-channel volume, got dims {:?}",
            volume.dims()
        )));
    }
    volume.spatial()
}

/// Sample position of output voxel `i`: either `coords` itself or the output
/// grid position plus `coords` when `relative`.
#[inline]
fn position(coords: &[f32], n: usize, out_ext: [usize; 3], i: usize, relative: bool) -> [f32; 3] {
    let c = [coords[i], coords[n + i], coords[2 * n + i]];
    if !relative {
        return c;
    }
    let x = i % out_ext[0];
    let y = (i / out_ext[0]) % out_ext[1];
    let z = i / (out_ext[0] * out_ext[1]);
    [x as f32 + c[0], y as f32 + c[1], z as f32 + c[2]]
}

pub(crate) fn resample_forward(volume: &[f32], ext: [usize; 3], coords: &[f32], out_ext: [usize; 3], relative: bool) -> Vec<f32> {
    let n: usize = out_ext.iter().product();
    (0..n)
        .map(|i| {
            let s = Stencil::at(position(coords, n, out_ext, i, relative));
            s.value(&s.corners(volume, ext))
        })
        .collect()
}

pub(crate) fn resample_backward(
    volume: &[f32],
    ext: [usize; 3],
    coords: &[f32],
    out_ext: [usize; 3],
    relative: bool,
    grad_out: &[f32],
    want_volume: bool,
    want_coords: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let n: usize = out_ext.iter().product();
    let mut gv = want_volume.then(|| vec![0.0f32; volume.len()]);
    let mut gc = want_coords.then(|| vec![0.0f32; 3 * n]);
    for i in 0..n {
        let g = grad_out[i];
        if g == 0.0 {
            continue;
        }
        let s = Stencil::at(position(coords, n, out_ext, i, relative));
        if let Some(gv) = gv.as_mut() {
            let w = s.weights();
            for (corner, &wc) in w.iter().enumerate() {
                if let Some(j) = s.corner_index(corner, ext) {
                    gv[j] += g * wc;
                }
            }
        }
        if let Some(gc) = gc.as_mut() {
            let d = s.position_grad(&s.corners(volume, ext));
            gc[i] += g * d[0];
            gc[n + i] += g * d[1];
            gc[2 * n + i] += g * d[2];
        }
    }
    (gv, gc)
}
