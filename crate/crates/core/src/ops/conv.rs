//! 3D convolution with "same" zero padding.
//!
//! Kernels are `[C_out, C_in, k, k, k]`, flattened so that row `o` of the
//! `C_out × (C_in·k³)` weight matrix is contiguous and the tap index within a
//! channel is `dx + k·(dy + k·dz)`.
//!
//! The zero-padded input is split into `stride³` phase volumes, where phase
//! `(a, b, c)` holds the padded voxels `(s·x + a, s·y + b, s·z + c)`. A strided
//! convolution then reads every tap from one phase at a constant offset along
//! the flattened phase grid, so all layers reduce to the shifted correlation
//! kernels in [`super::direct`]. Outputs are computed on the phase grid and the
//! valid voxels extracted afterwards.

use super::direct::{correlate, round_up, weight_grad, LANES};
use crate::error::{Error, Result};
use crate::tensor::{idx3, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Self> {
        if input.dims().len() != 4 {
            return Err(Error::invalid(format!(
                "conv3d input must be [C, X, Y, Z], got {:?}",
                input.dims()
            )));
        }
        let kd = kernel.dims();
        if kd.len() != 5 || kd[2] != kd[3] || kd[3] != kd[4] || kd[2].is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "conv3d kernel must be [C_out, C_in, k, k, k] with odd k, got {kd:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv3d stride must be positive"));
        }
        let cin = input.dims()[0];
        if kd[1] != cin {
            return Err(Error::Shape {
                op: "conv3d",
                expected: vec![kd[0], cin, kd[2], kd[3], kd[4]],
                actual: kd.to_vec(),
            });
        }
        let k = kd[2];
        let pad = k / 2;
        let input_ext = input.spatial()?;
        let output = input_ext.map(|n| (n + 2 * pad - k) / stride + 1);
        Ok(Self {
            cin,
            cout: kd[0],
            k,
            stride,
            pad,
            input: input_ext,
            output,
        })
    }

    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    fn phases(&self) -> usize {
        self.stride.pow(3)
    }

    /// Extent of one phase volume.
    fn phase_extent(&self) -> [usize; 3] {
        self.input.map(|n| (n + 2 * self.pad).div_ceil(self.stride))
    }

    fn phase_len(&self) -> usize {
        self.phase_extent().iter().product()
    }

    /// Flat positions on the phase grid covering every valid output voxel.
    fn shifted_len(&self) -> usize {
        let [px, py, _] = self.phase_extent();
        let [x, y, z] = self.output;
        (x - 1) + px * ((y - 1) + py * (z - 1)) + 1
    }

    fn phase_offset(&self, h: [usize; 3]) -> usize {
        let [px, py, _] = self.phase_extent();
        h[0] + px * (h[1] + py * h[2])
    }

    /// Phase index and in-phase shift of a kernel tap.
    fn tap_phase(&self, tap: usize) -> (usize, [usize; 3]) {
        let (k, s) = (self.k, self.stride);
        let d = [tap % k, (tap / k) % k, tap / (k * k)];
        let phase = d[0] % s + s * (d[1] % s + s * (d[2] % s));
        (phase, d.map(|v| v / s))
    }

    /// Start of every `(channel, tap)` source row in the phase-split input,
    /// in kernel order.
    fn sources(&self) -> Vec<usize> {
        let row = self.phase_len();
        let mut out = Vec::with_capacity(self.cin * self.taps());
        for c in 0..self.cin {
            for t in 0..self.taps() {
                let (ph, h) = self.tap_phase(t);
                out.push((c * self.phases() + ph) * row + self.phase_offset(h));
            }
        }
        out
    }
}

pub fn conv3d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    let g = ConvGeom::new(input, kernel, stride)?;
    if let Some(b) = bias {
        b.expect_dims("conv3d bias", &[g.cout])?;
    }
    let mut out = forward(&g, input.data(), kernel.data());
    if let Some(b) = bias {
        let n = g.out_len();
        for (o, &bo) in b.data().iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += bo);
        }
    }
    let [x, y, z] = g.output;
    Tensor::new(&[g.cout, x, y, z], out)
}

/// Gradients of a convolution with respect to its input, kernel and bias.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Option<Vec<f32>>,
    pub bias: Vec<f32>,
}

pub(crate) fn conv3d_backward(
    g: &ConvGeom,
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    want_input: bool,
    want_kernel: bool,
) -> ConvGrads {
    let n = g.out_len();
    let bias = (0..g.cout)
        .map(|o| grad_out[o * n..(o + 1) * n].iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect();
    let (gi, gk) = backward(g, input, kernel, grad_out, want_input, want_kernel);
    ConvGrads {
        input: gi,
        kernel: gk,
        bias,
    }
}

/// Visits every input voxel with its flat index in the phase-split layout
/// (relative to the channel's first phase row).
fn for_each_phase_position(g: &ConvGeom, mut f: impl FnMut(usize, usize)) {
    let s = g.stride;
    let pe = g.phase_extent();
    let row = g.phase_len();
    let [x, y, z] = g.input;
    for zz in 0..z {
        let pz = zz + g.pad;
        for yy in 0..y {
            let py = yy + g.pad;
            for xx in 0..x {
                let px = xx + g.pad;
                let phase = px % s + s * (py % s + s * (pz % s));
                let at = phase * row + idx3(pe, px / s, py / s, pz / s);
                f(idx3(g.input, xx, yy, zz), at);
            }
        }
    }
}

/// Zero-padded, phase-split copy of `input` followed by a tail of `LANES`
/// zeros so block reads never run off the end.
fn split_input(g: &ConvGeom, input: &[f32]) -> Vec<f32> {
    let chan = g.phases() * g.phase_len();
    let mut out = vec![0.0f32; g.cin * chan + LANES];
    if g.stride == 1 {
        // Contiguous x-runs; the general path below handles any stride.
        let p = g.phase_extent();
        let [x, y, z] = g.input;
        for c in 0..g.cin {
            for zz in 0..z {
                for yy in 0..y {
                    let src = c * g.in_len() + idx3(g.input, 0, yy, zz);
                    let dst = c * chan + idx3(p, g.pad, yy + g.pad, zz + g.pad);
                    out[dst..dst + x].copy_from_slice(&input[src..src + x]);
                }
            }
        }
        return out;
    }
    let n = g.in_len();
    for_each_phase_position(g, |i, at| {
        for c in 0..g.cin {
            out[c * chan + at] = input[c * n + i];
        }
    });
    out
}

fn forward(g: &ConvGeom, input: &[f32], kernel: &[f32]) -> Vec<f32> {
    let split = split_input(g, input);
    let nq = g.shifted_len();
    let sq = round_up(nq);
    let mut acc = vec![0.0f32; g.cout * sq];
    correlate(&split, &g.sources(), kernel, g.cout, nq, &mut acc, sq);
    let [px, py, _] = g.phase_extent();
    let [x, y, z] = g.output;
    let n = g.out_len();
    let mut out = vec![0.0f32; g.cout * n];
    for o in 0..g.cout {
        for zz in 0..z {
            for yy in 0..y {
                let src = o * sq + px * (yy + py * zz);
                let dst = o * n + idx3(g.output, 0, yy, zz);
                out[dst..dst + x].copy_from_slice(&acc[src..src + x]);
            }
        }
    }
    out
}

fn backward(
    g: &ConvGeom,
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let pe = g.phase_extent();
    let nq = g.shifted_len();
    let n = g.out_len();
    let taps = g.taps();
    let [x, y, z] = g.output;

    // The output gradient placed on the phase grid after `lead` zeros, in
    // rows of `stride`; gaps stay zero.
    let embed = |lead: usize, stride: usize| {
        let mut gq = vec![0.0f32; g.cout * stride];
        for o in 0..g.cout {
            for zz in 0..z {
                for yy in 0..y {
                    let dst = o * stride + lead + pe[0] * (yy + pe[1] * zz);
                    let src = o * n + idx3(g.output, 0, yy, zz);
                    gq[dst..dst + x].copy_from_slice(&grad_out[src..src + x]);
                }
            }
        }
        gq
    };

    let grad_kernel = want_kernel.then(|| {
        let split = split_input(g, input);
        let sq = round_up(nq);
        weight_grad(&embed(0, sq), sq, g.cout, &split, &g.sources(), nq)
    });

    let grad_input = want_input.then(|| {
        // Each phase row of the input gradient correlates the output gradient
        // with the taps that read that phase, mirrored: shift `h` becomes a
        // read at `lead − h`. Shifts a phase never uses carry zero weight.
        let hmax = (g.k - 1) / g.stride;
        let hn = hmax + 1;
        let shifts: Vec<[usize; 3]> = (0..hn * hn * hn).map(|i| [i % hn, (i / hn) % hn, i / (hn * hn)]).collect();
        let lead = g.phase_offset([hmax; 3]);
        let row = g.phase_len();
        let sp = round_up(row);
        let stride = sp + lead;
        let gq = embed(lead, stride);
        let mut sources = Vec::with_capacity(g.cout * shifts.len());
        for o in 0..g.cout {
            for h in &shifts {
                sources.push(o * stride + lead - g.phase_offset(*h));
            }
        }
        let rows = g.cin * g.phases();
        let mut weights = vec![0.0f32; rows * sources.len()];
        for o in 0..g.cout {
            for c in 0..g.cin {
                for t in 0..taps {
                    let (ph, h) = g.tap_phase(t);
                    let hi = h[0] + hn * (h[1] + hn * h[2]);
                    let r = c * g.phases() + ph;
                    weights[r * sources.len() + o * shifts.len() + hi] = kernel[(o * g.cin + c) * taps + t];
                }
            }
        }
        let mut gp = vec![0.0f32; rows * sp];
        correlate(&gq, &sources, &weights, rows, row, &mut gp, sp);
        let mut gi = vec![0.0f32; g.cin * g.in_len()];
        let (nin, chan) = (g.in_len(), g.phases() * sp);
        let strided = |at: usize| (at / row) * sp + at % row;
        for_each_phase_position(g, |i, at| {
            let at = strided(at);
            for c in 0..g.cin {
                gi[c * nin + i] = gp[c * chan + at];
            }
        });
        gi
    });

    (grad_input, grad_kernel)
}
