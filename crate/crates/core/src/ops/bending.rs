//! Bending energy of a vector field by central differences on the interior.
//!
//! For every component and interior voxel the energy density is
//! `uxx² + uyy² + uzz² + 2uxy² + 2uxz² + 2uyz²`; the result is the mean over
//! components and interior voxels. Boundary voxels carry no stencil, so every
//! affine field has exactly zero energy.

use crate::tensor::idx3;

/// The six second-derivative stencils evaluated at one voxel.
#[inline]
fn second_derivatives(u: &[f32], ext: [usize; 3], x: usize, y: usize, z: usize) -> [f64; 6] {
    let v = |x: usize, y: usize, z: usize| u[idx3(ext, x, y, z)] as f64;
    let c = v(x, y, z);
    let dxx = v(x + 1, y, z) - 2.0 * c + v(x - 1, y, z);
    let dyy = v(x, y + 1, z) - 2.0 * c + v(x, y - 1, z);
    let dzz = v(x, y, z + 1) - 2.0 * c + v(x, y, z - 1);
    let dxy = (v(x + 1, y + 1, z) - v(x + 1, y - 1, z) - v(x - 1, y + 1, z) + v(x - 1, y - 1, z)) / 4.0;
    let dxz = (v(x + 1, y, z + 1) - v(x + 1, y, z - 1) - v(x - 1, y, z + 1) + v(x - 1, y, z - 1)) / 4.0;
    let dyz = (v(x, y + 1, z + 1) - v(x, y + 1, z - 1) - v(x, y - 1, z + 1) + v(x, y - 1, z - 1)) / 4.0;
    [dxx, dyy, dzz, dxy, dxz, dyz]
}

fn interior_count(ext: [usize; 3]) -> usize {
    ext.iter().map(|&n| n - 2).product()
}

pub(crate) fn bending_forward(field: &[f32], channels: usize, ext: [usize; 3]) -> f32 {
    let n: usize = ext.iter().product();
    let mut total = 0.0f64;
    for c in 0..channels {
        let u = &field[c * n..(c + 1) * n];
        for z in 1..ext[2] - 1 {
            for y in 1..ext[1] - 1 {
                for x in 1..ext[0] - 1 {
                    let [dxx, dyy, dzz, dxy, dxz, dyz] = second_derivatives(u, ext, x, y, z);
                    total += dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * (dxy * dxy + dxz * dxz + dyz * dyz);
                }
            }
        }
    }
    (total / (channels * interior_count(ext)) as f64) as f32
}

pub(crate) fn bending_backward(field: &[f32], channels: usize, ext: [usize; 3], grad_out: f32) -> Vec<f32> {
    let n: usize = ext.iter().product();
    let scale = 2.0 * grad_out as f64 / (channels * interior_count(ext)) as f64;
    let mut grad = vec![0.0f64; field.len()];
    for c in 0..channels {
        let u = &field[c * n..(c + 1) * n];
        let g = &mut grad[c * n..(c + 1) * n];
        for z in 1..ext[2] - 1 {
            for y in 1..ext[1] - 1 {
                for x in 1..ext[0] - 1 {
                    let [dxx, dyy, dzz, dxy, dxz, dyz] = second_derivatives(u, ext, x, y, z);
                    let mut add = |xx: usize, yy: usize, zz: usize, w: f64| g[idx3(ext, xx, yy, zz)] += scale * w;
                    add(x + 1, y, z, dxx);
                    add(x - 1, y, z, dxx);
                    add(x, y + 1, z, dyy);
                    add(x, y - 1, z, dyy);
                    add(x, y, z + 1, dzz);
                    add(x, y, z - 1, dzz);
                    add(x, y, z, -2.0 * (dxx + dyy + dzz));
                    // cross terms carry weight 2 and a 1/4 stencil factor
                    let (a, b, cc) = (dxy / 2.0, dxz / 2.0, dyz / 2.0);
                    add(x + 1, y + 1, z, a);
                    add(x + 1, y - 1, z, -a);
                    add(x - 1, y + 1, z, -a);
                    add(x - 1, y - 1, z, a);
                    add(x + 1, y, z + 1, b);
                    add(x + 1, y, z - 1, -b);
                    add(x - 1, y, z + 1, -b);
                    add(x - 1, y, z - 1, b);
                    add(x, y + 1, z + 1, cc);
                    add(x, y + 1, z - 1, -cc);
                    add(x, y - 1, z + 1, -cc);
                    add(x, y - 1, z - 1, cc);
                }
            }
        }
    }
    grad.into_iter().map(|v| v as f32).collect()
}
