//! Finite-difference checks of every differentiable tape operation, shared
//! by the gradient tests and the acceptance run.
//!
//! The tape's analytic gradients (f32) are compared against central
//! differences (h = 1e-3) of an independent double-precision reference
//! implementation written directly from each operation's definition. The
//! reference forward is first checked against the tape's forward, so both
//! routes describe the same function.

use metareg::models::{record_pair, RegNet, RegNetConfig};
use metareg::params::ParamVector;
use metareg::seeds::{rng, Stream};
use metareg::tape::{Tape, Var};
use metareg::volume::Volume;
use metareg::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;
const MAX_PROBES: usize = 48;

/// Double-precision reference operations on `[C, X, Y, Z]` arrays.
mod reference {
    use std::cell::RefCell;

    thread_local! {
        static REGIME: RefCell<Vec<i64>> = const { RefCell::new(Vec::new()) };
    }

    /// Branch taken by every piecewise operation while running `f`: the sign
    /// of each leaky-ReLU input and the cell of each trilinear sample. Two
    /// inputs with equal regimes lie in one smooth piece.
    pub fn regime(f: impl FnOnce()) -> Vec<i64> {
        REGIME.with(|r| r.borrow_mut().clear());
        f();
        REGIME.with(|r| std::mem::take(&mut *r.borrow_mut()))
    }

    fn note(v: i64) {
        REGIME.with(|r| r.borrow_mut().push(v));
    }

    #[derive(Clone, Debug)]
    pub struct Arr {
        pub c: usize,
        pub e: [usize; 3],
        pub d: Vec<f64>,
    }

    impl Arr {
        pub fn new(c: usize, e: [usize; 3], d: Vec<f64>) -> Self {
            assert_eq!(d.len(), c * e[0] * e[1] * e[2]);
            Self { c, e, d }
        }

        pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
            self.d[self.index(c, x, y, z)]
        }

        pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
            x + self.e[0] * (y + self.e[1] * (z + self.e[2] * c))
        }

        /// Zero outside the grid.
        pub fn padded(&self, c: usize, x: isize, y: isize, z: isize) -> f64 {
            let inside = |v: isize, n: usize| v >= 0 && (v as usize) < n;
            if inside(x, self.e[0]) && inside(y, self.e[1]) && inside(z, self.e[2]) {
                self.at(c, x as usize, y as usize, z as usize)
            } else {
                0.0
            }
        }
    }

    /// Same-padded correlation; output voxel `o` reads input `s·o + t − k/2`.
    pub fn conv(x: &Arr, w: &[f64], b: Option<&[f64]>, cout: usize, k: usize, s: usize) -> Arr {
        let p = (k / 2) as isize;
        let e = x.e.map(|n| (n + 2 * (k / 2) - k) / s + 1);
        let mut d = Vec::with_capacity(cout * e[0] * e[1] * e[2]);
        for o in 0..cout {
            for oz in 0..e[2] {
                for oy in 0..e[1] {
                    for ox in 0..e[0] {
                        let mut acc = b.map_or(0.0, |b| b[o]);
                        for ci in 0..x.c {
                            for tz in 0..k {
                                for ty in 0..k {
                                    for tx in 0..k {
                                        let wi = (((o * x.c + ci) * k + tz) * k + ty) * k + tx;
                                        let at = |o: usize, t: usize| (s * o + t) as isize - p;
                                        acc += w[wi] * x.padded(ci, at(ox, tx), at(oy, ty), at(oz, tz));
                                    }
                                }
                            }
                        }
                        d.push(acc);
                    }
                }
            }
        }
        Arr::new(cout, e, d)
    }

    pub fn leaky(x: &Arr, slope: f64) -> Arr {
        let y = x.d.iter().map(|&v| {
            note((v > 0.0) as i64);
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        });
        Arr::new(x.c, x.e, y.collect())
    }

    pub fn concat(a: &Arr, b: &Arr) -> Arr {
        assert_eq!(a.e, b.e);
        Arr::new(a.c + b.c, a.e, a.d.iter().chain(&b.d).copied().collect())
    }

    /// Linear interpolation weights of output index `i` when `n` samples are
    /// stretched to `2n` with the end samples aligned.
    fn aligned(i: usize, n: usize) -> Vec<(usize, f64)> {
        if n == 1 {
            return vec![(0, 1.0)];
        }
        let t = i as f64 * (n - 1) as f64 / (2 * n - 1) as f64;
        let lo = (t.floor() as usize).min(n - 2);
        vec![(lo, 1.0 - (t - lo as f64)), (lo + 1, t - lo as f64)]
    }

    pub fn upsample(x: &Arr) -> Arr {
        let e = x.e.map(|n| 2 * n);
        let mut d = Vec::with_capacity(x.c * e[0] * e[1] * e[2]);
        for c in 0..x.c {
            for z in 0..e[2] {
                for y in 0..e[1] {
                    for xx in 0..e[0] {
                        let mut acc = 0.0;
                        for (iz, wz) in aligned(z, x.e[2]) {
                            for (iy, wy) in aligned(y, x.e[1]) {
                                for (ix, wx) in aligned(xx, x.e[0]) {
                                    acc += wx * wy * wz * x.at(c, ix, iy, iz);
                                }
                            }
                        }
                        d.push(acc);
                    }
                }
            }
        }
        Arr::new(x.c, e, d)
    }

    /// Trilinear interpolation with zero padding at continuous position `q`.
    pub fn trilinear(v: &Arr, q: [f64; 3]) -> f64 {
        let f = q.map(f64::floor);
        f.iter().for_each(|&c| note(c as i64));
        let t = [q[0] - f[0], q[1] - f[1], q[2] - f[2]];
        let mut acc = 0.0;
        for corner in 0..8 {
            let bit = |a: usize| (corner >> a) & 1;
            let w: f64 = (0..3).map(|a| if bit(a) == 1 { t[a] } else { 1.0 - t[a] }).product();
            let at = |a: usize| f[a] as isize + bit(a) as isize;
            acc += w * v.padded(0, at(0), at(1), at(2));
        }
        acc
    }

    /// Samples single-channel `v` at `coords` (absolute) or at `p + coords(p)`.
    pub fn sample(v: &Arr, coords: &Arr, relative: bool) -> Arr {
        let e = coords.e;
        let mut d = Vec::with_capacity(e[0] * e[1] * e[2]);
        for z in 0..e[2] {
            for y in 0..e[1] {
                for x in 0..e[0] {
                    let base = if relative { [x as f64, y as f64, z as f64] } else { [0.0; 3] };
                    let q = [0, 1, 2].map(|a| base[a] + coords.at(a, x, y, z));
                    d.push(trilinear(v, q));
                }
            }
        }
        Arr::new(1, e, d)
    }

    pub fn ssd(a: &Arr, b: &Arr) -> f64 {
        assert_eq!(a.d.len(), b.d.len());
        a.d.iter().zip(&b.d).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.d.len() as f64
    }

    /// Mean over components and interior voxels of the squared Hessian
    /// Frobenius norm, by central differences.
    pub fn bending(u: &Arr) -> f64 {
        let [nx, ny, nz] = u.e;
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..u.c {
            for z in 1..nz - 1 {
                for y in 1..ny - 1 {
                    for x in 1..nx - 1 {
                        let v = |dx: isize, dy: isize, dz: isize| {
                            u.at(c, (x as isize + dx) as usize, (y as isize + dy) as usize, (z as isize + dz) as usize)
                        };
                        let second = |d: [isize; 3]| v(d[0], d[1], d[2]) - 2.0 * v(0, 0, 0) + v(-d[0], -d[1], -d[2]);
                        let mixed = |a: [isize; 3], b: [isize; 3]| {
                            let s = |i: isize, j: isize| v(i * a[0] + j * b[0], i * a[1] + j * b[1], i * a[2] + j * b[2]);
                            (s(1, 1) - s(1, -1) - s(-1, 1) + s(-1, -1)) / 4.0
                        };
                        let (ex, ey, ez) = ([1, 0, 0], [0, 1, 0], [0, 0, 1]);
                        let diag = second(ex).powi(2) + second(ey).powi(2) + second(ez).powi(2);
                        let off = mixed(ex, ey).powi(2) + mixed(ex, ez).powi(2) + mixed(ey, ez).powi(2);
                        total += diag + 2.0 * off;
                        count += 1;
                    }
                }
            }
        }
        total / count as f64
    }

    pub fn total_loss(moving: &Arr, fixed: &Arr, ddf: &Arr, alpha: f64) -> f64 {
        ssd(&sample(moving, ddf, true), fixed) + alpha * bending(ddf)
    }
}

use reference::Arr;

/// Accepts `[C, X, Y, Z]` tensors and single-channel `[X, Y, Z]` volumes.
fn to_arr(t: &Tensor) -> Arr {
    let data = t.data().iter().map(|&v| v as f64).collect();
    match *t.dims() {
        [c, x, y, z] => Arr::new(c, [x, y, z], data),
        [x, y, z] => Arr::new(1, [x, y, z], data),
        ref d => panic!("not a grid: {d:?}"),
    }
}

fn random_tensor(dims: &[usize], r: &mut ChaCha8Rng, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(dims, |_| r.gen_range(lo..hi))
}

/// Compares `grad` against central differences of `f` around `x0` on up to
/// [`MAX_PROBES`] coordinates. A coordinate is probed only if `f` stays in
/// one smooth piece over the whole stencil, since central differences across
/// a kink do not estimate the derivative. Entries far below the largest
/// gradient are judged against 1e-3 of that maximum, since an f32 gradient
/// cannot resolve them to 1e-4 of their own size.
fn check(label: &str, x0: &[f64], grad: &[f32], f: impl Fn(&[f64]) -> f64, r: &mut ChaCha8Rng) {
    assert_eq!(x0.len(), grad.len(), "{label}: gradient length");
    let mut order: Vec<usize> = (0..x0.len()).collect();
    order.shuffle(r);
    let mut x = x0.to_vec();
    let base = reference::regime(|| {
        f(&x);
    });
    let (mut probes, mut fd, mut kinked) = (Vec::new(), Vec::new(), 0);
    for i in order {
        if probes.len() == MAX_PROBES {
            break;
        }
        let mut side = |v: f64| {
            x[i] = v;
            let mut out = 0.0;
            let reg = reference::regime(|| out = f(&x));
            (out, reg == base)
        };
        let (up, up_smooth) = side(x0[i] + H);
        let (down, down_smooth) = side(x0[i] - H);
        x[i] = x0[i];
        if up_smooth && down_smooth {
            probes.push(i);
            fd.push((up - down) / (2.0 * H));
        } else {
            kinked += 1;
        }
    }
    assert!(
        probes.len() >= MAX_PROBES.min(x0.len() / 2),
        "{label}: only {} smooth probes ({kinked} crossed a kink)",
        probes.len()
    );
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0, "{label}: all probed derivatives vanish");
    for (&i, &n) in probes.iter().zip(&fd) {
        let a = grad[i] as f64;
        let err = (a - n).abs() / n.abs().max(1e-3 * scale);
        assert!(err <= TOL, "{label}: index {i}: analytic {a:e}, numeric {n:e}, rel err {err:e}");
    }
}

fn check_forward(label: &str, tape_value: &Tensor, reference: &[f64]) {
    assert_eq!(tape_value.len(), reference.len(), "{label}: forward length");
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for (i, (&t, &r)) in tape_value.data().iter().zip(reference).enumerate() {
        assert!(
            (t as f64 - r).abs() <= 1e-5 * scale.max(r.abs()),
            "{label}: forward differs at {i}: tape {t}, reference {r}"
        );
    }
}

/// Records `build` on a tape with each input as a parameter leaf, reduces a
/// non-scalar output with `ssd` against a random target, and returns the
/// loss value and the gradient of every input.
fn tape_gradients(
    inputs: &[Tensor],
    target: Option<&[f32]>,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> (Tensor, f64, Vec<Vec<f32>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let value = tape.value(out).clone();
    let loss = match target {
        Some(t) => {
            let tv = tape.constant(Tensor::new(value.dims(), t.to_vec()).unwrap());
            tape.ssd(out, tv).unwrap()
        }
        None => out,
    };
    let l = tape.value(loss).item() as f64;
    let grads = tape.backward(loss).unwrap();
    let g = vars.iter().map(|&v| grads.get(v).unwrap().data().to_vec()).collect();
    (value, l, g)
}

/// Splits the flat probe vector back into per-input arrays.
fn unflatten(x: &[f64], like: &[Arr]) -> Vec<Arr> {
    let mut at = 0;
    like.iter()
        .map(|a| {
            let n = a.d.len();
            at += n;
            Arr::new(a.c, a.e, x[at - n..at].to_vec())
        })
        .collect()
}

/// Runs the forward comparison and one FD check per input.
fn check_op(
    label: &str,
    inputs: Vec<Tensor>,
    with_target: bool,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    reference: impl Fn(&[Arr]) -> Arr,
    r: &mut ChaCha8Rng,
) {
    let arrs: Vec<Arr> = inputs.iter().map(arr_of).collect();
    let out = reference(&arrs);
    let target: Option<Vec<f32>> = with_target.then(|| (0..out.d.len()).map(|_| r.gen_range(-1.0..1.0)).collect());
    let (value, _, grads) = tape_gradients(&inputs, target.as_deref(), &build);
    check_forward(label, &value, &out.d);
    let t_arr = target.map(|t| Arr::new(out.c, out.e, t.iter().map(|&v| v as f64).collect()));
    let loss = |a: &[Arr]| {
        let o = reference(a);
        match &t_arr {
            Some(t) => reference::ssd(&o, t),
            None => o.d[0],
        }
    };
    let flat: Vec<f64> = arrs.iter().flat_map(|a| a.d.iter().copied()).collect();
    let mut offset = 0;
    for (k, a) in arrs.iter().enumerate() {
        let n = a.d.len();
        let range = offset..offset + n;
        offset += n;
        let f = |x: &[f64]| {
            let mut full = flat.clone();
            full[range.clone()].copy_from_slice(x);
            loss(&unflatten(&full, &arrs))
        };
        check(&format!("{label} input {k}"), &flat[range.clone()], &grads[k], f, r);
    }
}

/// Like [`to_arr`] but also accepts kernels and vectors, stored flat.
fn arr_of(t: &Tensor) -> Arr {
    if matches!(t.dims().len(), 3 | 4) {
        to_arr(t)
    } else {
        Arr::new(1, [t.len(), 1, 1], t.data().iter().map(|&v| v as f64).collect())
    }
}

fn scalar_arr(v: f64) -> Arr {
    Arr::new(1, [1, 1, 1], vec![v])
}

/// Displacements whose sample points sit at least 0.1 voxel away from every
/// grid plane, where trilinear interpolation has kinks.
fn smooth_ddf(ext: [usize; 3], r: &mut ChaCha8Rng, reach: f32) -> Tensor {
    let r0 = reach.ceil() as i32;
    Tensor::from_fn(&[3, ext[0], ext[1], ext[2]], |_| r.gen_range(-r0..r0) as f32 + r.gen_range(0.1..0.9f32))
}

pub fn conv3d() {
    let mut r = rng(1, Stream::Init, 0);
    for (cin, cout, k, stride, ext) in [
        (2, 3, 3, 1, [5, 4, 6]),
        (3, 2, 3, 2, [6, 6, 4]),
        (2, 2, 3, 2, [5, 5, 7]),
        (1, 2, 1, 1, [3, 4, 5]),
    ] {
        let inputs = vec![
            random_tensor(&[cin, ext[0], ext[1], ext[2]], &mut r, -1.0, 1.0),
            random_tensor(&[cout, cin, k, k, k], &mut r, -0.5, 0.5),
            random_tensor(&[cout], &mut r, -0.5, 0.5),
        ];
        check_op(
            &format!("conv3d {cin}->{cout} k{k} s{stride} {ext:?}"),
            inputs,
            true,
            |t, v| t.conv3d(v[0], v[1], Some(v[2]), stride).unwrap(),
            |a| {
                let x = Arr::new(cin, ext, a[0].d.clone());
                reference::conv(&x, &a[1].d, Some(&a[2].d), cout, k, stride)
            },
            &mut r,
        );
    }
}

pub fn leaky_relu() {
    let mut r = rng(2, Stream::Init, 0);
    for ext in [[3, 4, 2], [5, 2, 3], [2, 2, 2]] {
        // keep values away from the kink
        let x = Tensor::from_fn(&[2, ext[0], ext[1], ext[2]], |_| {
            let m = r.gen_range(0.05..1.0f32);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        });
        check_op(
            &format!("leaky_relu {ext:?}"),
            vec![x],
            true,
            |t, v| t.leaky_relu(v[0], 0.2),
            |a| reference::leaky(&Arr::new(2, ext, a[0].d.clone()), 0.2f32 as f64),
            &mut r,
        );
    }
}

pub fn upsample() {
    let mut r = rng(3, Stream::Init, 0);
    for (c, ext) in [(2, [3, 2, 4]), (1, [2, 2, 2]), (3, [1, 3, 2])] {
        check_op(
            &format!("upsample {c} {ext:?}"),
            vec![random_tensor(&[c, ext[0], ext[1], ext[2]], &mut r, -1.0, 1.0)],
            true,
            |t, v| t.upsample2(v[0]).unwrap(),
            |a| reference::upsample(&a[0]),
            &mut r,
        );
    }
}

pub fn concat() {
    let mut r = rng(4, Stream::Init, 0);
    for (ca, cb, ext) in [(1, 2, [2, 3, 2]), (2, 2, [3, 3, 3]), (3, 1, [4, 2, 1])] {
        check_op(
            &format!("concat {ca}+{cb} {ext:?}"),
            vec![
                random_tensor(&[ca, ext[0], ext[1], ext[2]], &mut r, -1.0, 1.0),
                random_tensor(&[cb, ext[0], ext[1], ext[2]], &mut r, -1.0, 1.0),
            ],
            true,
            |t, v| t.concat(v[0], v[1]).unwrap(),
            |a| reference::concat(&a[0], &a[1]),
            &mut r,
        );
    }
}

pub fn resample() {
    let mut r = rng(5, Stream::Init, 0);
    for (vext, cext) in [([5, 4, 6], [3, 2, 4]), ([4, 4, 4], [4, 4, 4]), ([6, 3, 5], [2, 5, 3])] {
        let vol = random_tensor(&vext, &mut r, 0.0, 1.0);
        // absolute positions spanning the grid and a little beyond it
        let coords = Tensor::from_fn(&[3, cext[0], cext[1], cext[2]], |i| {
            let axis = i / (cext[0] * cext[1] * cext[2]);
            let cell = r.gen_range(-1..vext[axis] as i32) as f32;
            cell + r.gen_range(0.1..0.9f32)
        });
        check_op(
            &format!("sample {vext:?} at {cext:?}"),
            vec![vol, coords],
            true,
            |t, v| t.sample(v[0], v[1]).unwrap(),
            |a| reference::sample(&a[0], &a[1], false),
            &mut r,
        );
    }
}

pub fn warp() {
    let mut r = rng(6, Stream::Init, 0);
    for (ext, reach) in [([5, 4, 6], 1.0), ([4, 4, 4], 2.0), ([6, 3, 5], 0.5)] {
        let vol = random_tensor(&ext, &mut r, 0.0, 1.0);
        let ddf = smooth_ddf(ext, &mut r, reach);
        check_op(
            &format!("warp {ext:?}"),
            vec![vol, ddf],
            true,
            |t, v| t.warp(v[0], v[1]).unwrap(),
            |a| reference::sample(&a[0], &a[1], true),
            &mut r,
        );
    }
}

pub fn ssd() {
    let mut r = rng(7, Stream::Init, 0);
    for dims in [[1, 3, 4, 5], [2, 2, 2, 2], [3, 5, 1, 2]] {
        check_op(
            &format!("ssd {dims:?}"),
            vec![random_tensor(&dims, &mut r, -1.0, 1.0), random_tensor(&dims, &mut r, -1.0, 1.0)],
            false,
            |t, v| t.ssd(v[0], v[1]).unwrap(),
            |a| scalar_arr(reference::ssd(&a[0], &a[1])),
            &mut r,
        );
    }
}

pub fn bending_energy() {
    let mut r = rng(8, Stream::Init, 0);
    for dims in [[3, 4, 5, 3], [1, 3, 3, 3], [2, 5, 4, 6]] {
        check_op(
            &format!("bending_energy {dims:?}"),
            vec![random_tensor(&dims, &mut r, -1.0, 1.0)],
            false,
            |t, v| t.bending_energy(v[0]).unwrap(),
            |a| scalar_arr(reference::bending(&a[0])),
            &mut r,
        );
    }
}

pub fn total_loss() {
    let mut r = rng(9, Stream::Init, 0);
    for (ext, alpha) in [([5, 4, 6], 10.0f32), ([4, 4, 4], 1.0), ([6, 3, 5], 0.5)] {
        let moving = random_tensor(&ext, &mut r, 0.0, 1.0);
        let fixed = random_tensor(&ext, &mut r, 0.0, 1.0);
        let ddf = smooth_ddf(ext, &mut r, 1.0);
        check_op(
            &format!("total_loss {ext:?} alpha {alpha}"),
            vec![moving, fixed, ddf],
            false,
            |t, v| {
                let w = metareg::losses::LossWeights::new(alpha).unwrap();
                metareg::losses::record_total_loss(t, v[0], v[1], v[2], w).unwrap()
            },
            |a| scalar_arr(reference::total_loss(&a[0], &a[1], &a[2], alpha as f64)),
            &mut r,
        );
    }
}

fn small_config(widths: [usize; 6]) -> RegNetConfig {
    RegNetConfig {
        enc1: widths[0],
        enc2: widths[1],
        enc3: widths[2],
        bottleneck: widths[3],
        dec2: widths[4],
        dec1: widths[5],
        leaky_slope: 0.2,
    }
}

/// Reference forward of the encoder-decoder, reading weights by name.
fn reference_network(cfg: &RegNetConfig, p: &ParamVector, values: &[f64], input: &Arr) -> Arr {
    let seg = |name: &str| {
        let s = p.layout().segment(name).unwrap();
        &values[s.offset..s.offset + s.len()]
    };
    let layer_k = |name: &str, x: &Arr, cout: usize, k: usize, stride: usize| {
        reference::conv(x, seg(&format!("{name}.weight")), Some(seg(&format!("{name}.bias"))), cout, k, stride)
    };
    let layer = |name: &str, x: &Arr, cout: usize, stride: usize| layer_k(name, x, cout, 3, stride);
    let act = |x: Arr| reference::leaky(&x, cfg.leaky_slope as f64);
    let e1 = act(layer("enc1", input, cfg.enc1, 1));
    let e2 = act(layer("enc2", &e1, cfg.enc2, 2));
    let e3 = act(layer("enc3", &e2, cfg.enc3, 2));
    let b = act(layer("bottleneck", &e3, cfg.bottleneck, 1));
    let d2 = act(layer("dec2", &reference::concat(&reference::upsample(&b), &e2), cfg.dec2, 1));
    let d1 = act(layer("dec1", &reference::concat(&reference::upsample(&d2), &e1), cfg.dec1, 1));
    layer_k("head", &d1, 3, 1, 1)
}

pub fn full_network() {
    for (seed, ext, widths) in [
        (10u64, [8, 8, 8], [3, 4, 4, 5, 4, 3]),
        (11, [8, 12, 8], [2, 3, 3, 3, 3, 2]),
        (12, [12, 8, 4], [4, 2, 3, 2, 2, 4]),
    ] {
        let cfg = small_config(widths);
        let mut r = rng(seed, Stream::Init, 1);
        let net = RegNet::init(cfg, &mut rng(seed, Stream::Init, 0)).unwrap();
        // a non-zero head so that every layer influences the loss
        let mut p = net.params().clone();
        p.values_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.05..0.05));
        let net = net.with_params(p.clone()).unwrap();
        let moving = Volume::from_fn(ext, 1.0, |_, _, _| r.gen_range(0.0..1.0));
        let fixed = Volume::from_fn(ext, 1.0, |_, _, _| r.gen_range(0.0..1.0));
        let alpha = 10.0f32;

        let mut tape = Tape::new();
        let pair = record_pair(&mut tape, &moving, &fixed).unwrap();
        let bound = p.record(&mut tape);
        let ddf = net.record(&mut tape, &bound, &pair).unwrap();
        let ddf_value = tape.value(ddf).clone();
        let w = metareg::losses::LossWeights::new(alpha).unwrap();
        let loss = metareg::losses::record_total_loss(&mut tape, pair.moving, pair.fixed, ddf, w).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let grad = bound.gradient(&mut grads);

        let stacked = reference::concat(&to_arr(moving.grid()), &to_arr(fixed.grid()));
        let values: Vec<f64> = p.values().iter().map(|&v| v as f64).collect();
        check_forward(&format!("network {ext:?}"), &ddf_value, &reference_network(&cfg, &p, &values, &stacked).d);

        let (m, f) = (to_arr(moving.grid()), to_arr(fixed.grid()));
        let objective = |x: &[f64]| {
            let u = reference_network(&cfg, &p, x, &stacked);
            reference::total_loss(&m, &f, &u, alpha as f64)
        };
        check(&format!("network {ext:?} {widths:?}"), &values, grad.values(), objective, &mut r);
    }
}

/// Every check above, in order, with its name.
pub const ALL: [(&str, fn()); 10] = [
    ("conv3d", conv3d),
    ("leaky_relu", leaky_relu),
    ("upsample", upsample),
    ("concat", concat),
    ("resample", resample),
    ("warp", warp),
    ("ssd", ssd),
    ("bending_energy", bending_energy),
    ("total_loss", total_loss),
    ("full_network", full_network),
];
