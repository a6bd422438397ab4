//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every forward pass records its operations onto a fresh [`Tape`]; node
//! inputs always refer to earlier nodes, so a single reverse sweep over the
//! node list is a valid topological order. A tape can be differentiated once.

use crate::error::{Error, Result};
use crate::ops::bending::{bending_backward, bending_forward};
use crate::ops::conv::{conv3d, conv3d_backward, ConvGeom};
use crate::ops::resample::{resample_backward, resample_forward, volume_extent};
use crate::ops::upsample::{upsample_backward, upsample_forward};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
    },
    LeakyRelu {
        input: Var,
        slope: f32,
    },
    Upsample {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Resample {
        volume: Var,
        coords: Var,
        relative: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f32,
    },
    Mean {
        input: Var,
    },
    Ssd {
        a: Var,
        b: Var,
    },
    Bending {
        field: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    is_leaf_param: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf treated as data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
            is_leaf_param: needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_leaf_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let value = conv3d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), stride)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                bias,
                stride,
            },
            &inputs,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Var {
        let value = self.value(input).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input, slope }, &[input])
    }

    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let ext = x.spatial()?;
        let c = x.channels();
        let value = Tensor::new(
            &[c, 2 * ext[0], 2 * ext[1], 2 * ext[2]],
            upsample_forward(x.data(), c, ext),
        )?;
        Ok(self.push(value, Op::Upsample { input }, &[input]))
    }

    /// Concatenates two `[C, X, Y, Z]` tensors along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ea, eb) = (ta.spatial()?, tb.spatial()?);
        if ea != eb {
            return Err(Error::Shape {
                op: "concat",
                expected: ea.to_vec(),
                actual: eb.to_vec(),
            });
        }
        let c = ta.channels() + tb.channels();
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::new(&[c, ea[0], ea[1], ea[2]], data)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    /// Pulls `volume` back through a displacement field: output voxel `p`
    /// is the trilinear sample of `volume` at `p + ddf(p)`.
    pub fn warp(&mut self, volume: Var, ddf: Var) -> Result<Var> {
        let vext = volume_extent(self.value(volume))?;
        let d = self.value(ddf);
        let dext = displacement_extent(d)?;
        if vext != dext {
            return Err(Error::Shape {
                op: "warp",
                expected: dext.to_vec(),
                actual: vext.to_vec(),
            });
        }
        self.resample(volume, ddf, true)
    }

    /// Samples `volume` at absolute voxel coordinates `coords: [3, ...]`.
    pub fn sample(&mut self, volume: Var, coords: Var) -> Result<Var> {
        volume_extent(self.value(volume))?;
        displacement_extent(self.value(coords))?;
        self.resample(volume, coords, false)
    }

    fn resample(&mut self, volume: Var, coords: Var, relative: bool) -> Result<Var> {
        let v = self.value(volume);
        let c = self.value(coords);
        let ext = v.spatial()?;
        let out_ext = c.spatial()?;
        let data = resample_forward(v.data(), ext, c.data(), out_ext, relative);
        let value = Tensor::new(&out_ext, data)?;
        Ok(self.push(
            value,
            Op::Resample {
                volume,
                coords,
                relative,
            },
            &[volume, coords],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::scalar((t.sum() / t.len() as f64) as f32);
        self.push(value, Op::Mean { input }, &[input])
    }

    /// Mean squared difference between two equally shaped tensors.
    pub fn ssd(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        tb.expect_dims("ssd", ta.dims())?;
        let sum: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        let value = Tensor::scalar((sum / ta.len() as f64) as f32);
        Ok(self.push(value, Op::Ssd { a, b }, &[a, b]))
    }

    /// Bending energy of a `[C, X, Y, Z]` field (see [`crate::losses`]).
    pub fn bending_energy(&mut self, field: Var) -> Result<Var> {
        let f = self.value(field);
        let ext = f.spatial()?;
        if ext.iter().any(|&n| n < 3) {
            return Err(Error::invalid(format!(
                "bending energy needs at least 3 voxels per axis, got {ext:?}"
            )));
        }
        let value = Tensor::scalar(bending_forward(f.data(), f.channels(), ext));
        Ok(self.push(value, Op::Bending { field }, &[field]))
    }

    /// Back-propagates from a scalar node. Every parameter leaf receives a
    /// gradient (zero if it does not influence `loss`).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.is_leaf_param {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor::new(node.value.dims(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                bias,
                stride,
            } => {
                let (x, k) = (self.value(input), self.value(kernel));
                let geom = ConvGeom::new(x, k, stride).expect("recorded conv geometry");
                let cg = conv3d_backward(&geom, x.data(), k.data(), g, self.wants(input), self.wants(kernel));
                if let Some(gi) = cg.input {
                    accumulate(grads, input, gi);
                }
                if let Some(gk) = cg.kernel {
                    accumulate(grads, kernel, gk);
                }
                if let Some(b) = bias.filter(|&b| self.wants(b)) {
                    accumulate(grads, b, cg.bias);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(input).data();
                let gi = x
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { slope * gv })
                    .collect();
                accumulate(grads, input, gi);
            }
            Op::Upsample { input } => {
                let x = self.value(input);
                let ext = x.spatial().expect("recorded upsample");
                accumulate(grads, input, upsample_backward(g, x.channels(), ext));
            }
            Op::Concat { a, b } => {
                let na = self.value(a).len();
                if self.wants(a) {
                    accumulate(grads, a, g[..na].to_vec());
                }
                if self.wants(b) {
                    accumulate(grads, b, g[na..].to_vec());
                }
            }
            Op::Resample {
                volume,
                coords,
                relative,
            } => {
                let v = self.value(volume);
                let c = self.value(coords);
                let (gv, gc) = resample_backward(
                    v.data(),
                    v.spatial().expect("recorded resample"),
                    c.data(),
                    c.spatial().expect("recorded resample"),
                    relative,
                    g,
                    self.wants(volume),
                    self.wants(coords),
                );
                if let Some(gv) = gv {
                    accumulate(grads, volume, gv);
                }
                if let Some(gc) = gc {
                    accumulate(grads, coords, gc);
                }
            }
            Op::Add { a, b } => {
                if self.wants(a) {
                    accumulate(grads, a, g.to_vec());
                }
                if self.wants(b) {
                    accumulate(grads, b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(a) {
                    accumulate(grads, a, g.to_vec());
                }
                if self.wants(b) {
                    accumulate(grads, b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Scale { input, factor } => {
                accumulate(grads, input, g.iter().map(|v| v * factor).collect());
            }
            Op::Mean { input } => {
                let n = self.value(input).len();
                accumulate(grads, input, vec![g[0] / n as f32; n]);
            }
            Op::Ssd { a, b } => {
                let (ta, tb) = (self.value(a).data(), self.value(b).data());
                let s = 2.0 * g[0] / ta.len() as f32;
                let diff: Vec<f32> = ta.iter().zip(tb).map(|(x, y)| s * (x - y)).collect();
                if self.wants(b) {
                    accumulate(grads, b, diff.iter().map(|v| -v).collect());
                }
                if self.wants(a) {
                    accumulate(grads, a, diff);
                }
            }
            Op::Bending { field } => {
                let f = self.value(field);
                let ext = f.spatial().expect("recorded bending");
                accumulate(grads, field, bending_backward(f.data(), f.channels(), ext, g[0]));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn displacement_extent(t: &Tensor) -> Result<[usize; 3]> {
    if t.dims().len() != 4 || t.dims()[0] != 3 {
        return Err(Error::invalid(format!(
            "expected a [3, X, Y, Z] coordinate field, got {:?}",
            t.dims()
        )));
    }
    t.spatial()
}
