//! ×2 trilinear upsampling with aligned corners.

use crate::error::Result;
use crate::tensor::{idx3, Tensor};

/// Per output index along one axis: lower source index, upper source index,
/// weight of the upper one.
fn axis_taps(n: usize) -> Vec<(usize, usize, f32)> {
    let m = 2 * n;
    (0..m)
        .map(|i| {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let src = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let lo = (src.floor() as usize).min(n - 2);
            (lo, lo + 1, (src - lo as f64) as f32)
        })
        .collect()
}

pub fn upsample_trilinear(input: &Tensor) -> Result<Tensor> {
    let ext = input.spatial()?;
    let c = input.channels();
    let out_ext = ext.map(|n| 2 * n);
    let out = upsample_forward(input.data(), c, ext);
    Tensor::new(&[c, out_ext[0], out_ext[1], out_ext[2]], out)
}

pub(crate) fn upsample_forward(input: &[f32], channels: usize, ext: [usize; 3]) -> Vec<f32> {
    let (tx, ty, tz) = (axis_taps(ext[0]), axis_taps(ext[1]), axis_taps(ext[2]));
    let out_ext = ext.map(|n| 2 * n);
    let n_in: usize = ext.iter().product();
    let n_out: usize = out_ext.iter().product();
    let mut out = vec![0.0f32; channels * n_out];
    for c in 0..channels {
        let src = &input[c * n_in..(c + 1) * n_in];
        let dst = &mut out[c * n_out..(c + 1) * n_out];
        for (z, &(z0, z1, wz)) in tz.iter().enumerate() {
            for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let v = |xi, yi, zi| src[idx3(ext, xi, yi, zi)];
                    let a = v(x0, y0, z0) * (1.0 - wx) + v(x1, y0, z0) * wx;
                    let b = v(x0, y1, z0) * (1.0 - wx) + v(x1, y1, z0) * wx;
                    let cc = v(x0, y0, z1) * (1.0 - wx) + v(x1, y0, z1) * wx;
                    let d = v(x0, y1, z1) * (1.0 - wx) + v(x1, y1, z1) * wx;
                    let lo = a * (1.0 - wy) + b * wy;
                    let hi = cc * (1.0 - wy) + d * wy;
                    dst[idx3(out_ext, x, y, z)] = lo * (1.0 - wz) + hi * wz;
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(grad_out: &[f32], channels: usize, ext: [usize; 3]) -> Vec<f32> {
    let (tx, ty, tz) = (axis_taps(ext[0]), axis_taps(ext[1]), axis_taps(ext[2]));
    let out_ext = ext.map(|n| 2 * n);
    let n_in: usize = ext.iter().product();
    let n_out: usize = out_ext.iter().product();
    let mut grad = vec![0.0f32; channels * n_in];
    for c in 0..channels {
        let g = &grad_out[c * n_out..(c + 1) * n_out];
        let dst = &mut grad[c * n_in..(c + 1) * n_in];
        for (z, &(z0, z1, wz)) in tz.iter().enumerate() {
            for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let go = g[idx3(out_ext, x, y, z)];
                    for (zi, fz) in [(z0, 1.0 - wz), (z1, wz)] {
                        for (yi, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                            for (xi, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                                dst[idx3(ext, xi, yi, zi)] += go * fx * fy * fz;
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::full(&[2, 3, 4, 2], 1.25);
        let up = upsample_trilinear(&t).unwrap();
        assert_eq!(up.dims(), &[2, 6, 8, 4]);
        assert!(up.data().iter().all(|&v| (v - 1.25).abs() < 1e-6));
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        let ext = [4, 3, 2];
        let t = Tensor::from_fn(&[1, 4, 3, 2], |i| (i % ext[0]) as f32 * 3.0);
        let up = upsample_trilinear(&t).unwrap();
        let oext = [8, 6, 4];
        for z in 0..4 {
            for y in 0..6 {
                for x in 0..8 {
                    let want = 3.0 * x as f32 * 3.0 / 7.0;
                    assert!((up.data()[idx3(oext, x, y, z)] - want).abs() < 1e-5);
                }
            }
        }
    }

    /// Oracle: evaluate the trilinear formula directly at the aligned-corner
    /// source coordinate of every output voxel.
    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ext = [3, 4, 5];
        let t = Tensor::from_fn(&[1, 3, 4, 5], |_| rng.gen_range(-1.0..1.0));
        let up = upsample_trilinear(&t).unwrap();
        let oext = [6, 8, 10];
        let val = |x: usize, y: usize, z: usize| t.data()[idx3(ext, x, y, z)] as f64;
        for z in 0..oext[2] {
            for y in 0..oext[1] {
                for x in 0..oext[0] {
                    let s = [x, y, z]
                        .iter()
                        .zip(ext)
                        .map(|(&o, n)| o as f64 * (n - 1) as f64 / (2 * n - 1) as f64)
                        .collect::<Vec<_>>();
                    let mut want = 0.0;
                    for zi in 0..ext[2] {
                        for yi in 0..ext[1] {
                            for xi in 0..ext[0] {
                                let w = (1.0 - (s[0] - xi as f64).abs()).max(0.0)
                                    * (1.0 - (s[1] - yi as f64).abs()).max(0.0)
                                    * (1.0 - (s[2] - zi as f64).abs()).max(0.0);
                                want += w * val(xi, yi, zi);
                            }
                        }
                    }
                    let got = up.data()[idx3(oext, x, y, z)] as f64;
                    assert!((got - want).abs() < 1e-6, "({x},{y},{z}): {got} vs {want}");
                }
            }
        }
    }
}
