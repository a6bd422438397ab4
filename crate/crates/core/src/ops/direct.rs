//! Register-blocked shifted correlation kernels.
//!
//! A source is a start offset into a flat buffer; output column `j` of every
//! row reads `input[source + j]`. Convolutions map each `(channel, tap)` pair
//! to one source. Columns are processed in blocks, so callers pad buffers to
//! allow whole-block reads up to `round_up(n)` past each source.

pub(crate) const LANES: usize = 32;
const OB: usize = 4;
const JC: usize = 256;

pub(crate) fn round_up(n: usize) -> usize {
    n.div_ceil(LANES) * LANES
}

/// `out[o·out_stride + j] = Σ_s w[o, s] · input[sources[s] + j]` for
/// `j < round_up(n)`, with `w` laid out `[cout, sources]`.
pub(crate) fn correlate(
    input: &[f32],
    sources: &[usize],
    weights: &[f32],
    cout: usize,
    n: usize,
    out: &mut [f32],
    out_stride: usize,
) {
    let max_src = sources.iter().copied().max().unwrap_or(0);
    assert_eq!(weights.len(), cout * sources.len());
    assert!(sources.is_empty() || max_src + round_up(n) <= input.len());
    assert!(cout == 0 || (cout - 1) * out_stride + round_up(n) <= out.len());
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx512f") {
        // SAFETY: the required CPU features were detected at runtime and the
        // asserts above bound every access.
        unsafe { correlate_avx512(input, sources, weights, cout, n, out, out_stride) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: as above.
        unsafe { correlate_avx2(input, sources, weights, cout, n, out, out_stride) };
        return;
    }
    correlate_portable(input, sources, weights, cout, n, out, out_stride);
}

/// Weights regrouped as `[cout/block][sources][block]`, zero-filled past `cout`.
fn pack_weights(weights: &[f32], n_src: usize, cout: usize, block: usize) -> Vec<f32> {
    let mut packed = vec![0.0f32; cout.div_ceil(block) * n_src * block];
    for o in 0..cout {
        let (b, r) = (o / block, o % block);
        for s in 0..n_src {
            packed[(b * n_src + s) * block + r] = weights[o * n_src + s];
        }
    }
    packed
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn correlate_avx512(
    input: &[f32],
    sources: &[usize],
    weights: &[f32],
    cout: usize,
    n: usize,
    out: &mut [f32],
    out_stride: usize,
) {
    use std::arch::x86_64::*;
    const WB: usize = 8;
    let ns = sources.len();
    let packed = pack_weights(weights, ns, cout, WB);
    let src = input.as_ptr();
    for o0 in (0..cout).step_by(WB) {
        let ob = WB.min(cout - o0);
        let wblock = packed.as_ptr().add(o0 * ns);
        for j in (0..round_up(n)).step_by(32) {
            let mut acc = [_mm512_setzero_ps(); 2 * WB];
            for (s, &off) in sources.iter().enumerate() {
                let p0 = _mm512_loadu_ps(src.add(off + j));
                let p1 = _mm512_loadu_ps(src.add(off + j + 16));
                let wt = wblock.add(s * WB);
                for o in 0..WB {
                    let wo = _mm512_set1_ps(*wt.add(o));
                    acc[2 * o] = _mm512_fmadd_ps(p0, wo, acc[2 * o]);
                    acc[2 * o + 1] = _mm512_fmadd_ps(p1, wo, acc[2 * o + 1]);
                }
            }
            for o in 0..ob {
                let dst = out.as_mut_ptr().add((o0 + o) * out_stride + j);
                _mm512_storeu_ps(dst, acc[2 * o]);
                _mm512_storeu_ps(dst.add(16), acc[2 * o + 1]);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_avx2(
    input: &[f32],
    sources: &[usize],
    weights: &[f32],
    cout: usize,
    n: usize,
    out: &mut [f32],
    out_stride: usize,
) {
    use std::arch::x86_64::*;
    let ns = sources.len();
    let packed = pack_weights(weights, ns, cout, OB);
    let src = input.as_ptr();
    for o0 in (0..cout).step_by(OB) {
        let ob = OB.min(cout - o0);
        let wblock = packed.as_ptr().add(o0 * ns);
        for j in (0..round_up(n)).step_by(16) {
            let mut acc = [_mm256_setzero_ps(); 2 * OB];
            for (s, &off) in sources.iter().enumerate() {
                let p0 = _mm256_loadu_ps(src.add(off + j));
                let p1 = _mm256_loadu_ps(src.add(off + j + 8));
                let wt = wblock.add(s * OB);
                for o in 0..OB {
                    let wo = _mm256_broadcast_ss(&*wt.add(o));
                    acc[2 * o] = _mm256_fmadd_ps(p0, wo, acc[2 * o]);
                    acc[2 * o + 1] = _mm256_fmadd_ps(p1, wo, acc[2 * o + 1]);
                }
            }
            for o in 0..ob {
                let dst = out.as_mut_ptr().add((o0 + o) * out_stride + j);
                _mm256_storeu_ps(dst, acc[2 * o]);
                _mm256_storeu_ps(dst.add(8), acc[2 * o + 1]);
            }
        }
    }
}

fn correlate_portable(
    input: &[f32],
    sources: &[usize],
    weights: &[f32],
    cout: usize,
    n: usize,
    out: &mut [f32],
    out_stride: usize,
) {
    const W: usize = 16;
    let ns = sources.len();
    let packed = pack_weights(weights, ns, cout, OB);
    for o0 in (0..cout).step_by(OB) {
        let ob = OB.min(cout - o0);
        let wblock = &packed[o0 * ns..(o0 + OB) * ns];
        for j in (0..round_up(n)).step_by(W) {
            let mut acc = [[0.0f32; W]; OB];
            for (s, &off) in sources.iter().enumerate() {
                let p: &[f32; W] = input[off + j..off + j + W].try_into().expect("lane block");
                let w = &wblock[s * OB..(s + 1) * OB];
                for o in 0..OB {
                    for l in 0..W {
                        acc[o][l] += p[l] * w[o];
                    }
                }
            }
            for (o, a) in acc.iter().enumerate().take(ob) {
                let at = (o0 + o) * out_stride + j;
                out[at..at + W].copy_from_slice(a);
            }
        }
    }
}

/// `gw[o, s] = Σ_j g[o·g_stride + j] · input[sources[s] + j]` over
/// `j < round_up(n)`; `g` must be zero past column `n` in every row.
pub(crate) fn weight_grad(
    g: &[f32],
    g_stride: usize,
    cout: usize,
    input: &[f32],
    sources: &[usize],
    n: usize,
) -> Vec<f32> {
    let max_src = sources.iter().copied().max().unwrap_or(0);
    assert!(cout == 0 || (cout - 1) * g_stride + round_up(n) <= g.len());
    assert!(sources.is_empty() || max_src + round_up(n) <= input.len());
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx512f") {
        // SAFETY: the required CPU features were detected at runtime and the
        // asserts above bound every access.
        return unsafe { weight_grad_avx512(g, g_stride, cout, input, sources, n) };
    }
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: as above.
        return unsafe { weight_grad_avx2(g, g_stride, cout, input, sources, n) };
    }
    weight_grad_portable(g, g_stride, cout, input, sources, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn weight_grad_avx512(
    g: &[f32],
    g_stride: usize,
    cout: usize,
    input: &[f32],
    sources: &[usize],
    n: usize,
) -> Vec<f32> {
    use std::arch::x86_64::*;
    const GB: usize = 8;
    let ns = sources.len();
    let mut gw = vec![0.0f32; cout * ns];
    let (gp, ip) = (g.as_ptr(), input.as_ptr());
    let n_pad = round_up(n);
    for j0 in (0..n_pad).step_by(JC) {
        let j1 = (j0 + JC).min(n_pad);
        for o0 in (0..cout).step_by(GB) {
            let ob = GB.min(cout - o0);
            let rows: [*const f32; GB] = std::array::from_fn(|o| gp.add((o0 + o.min(ob - 1)) * g_stride));
            for (s, &off) in sources.iter().enumerate() {
                let base = ip.add(off);
                let mut acc = [_mm512_setzero_ps(); GB];
                for j in (j0..j1).step_by(16) {
                    let p = _mm512_loadu_ps(base.add(j));
                    for o in 0..GB {
                        acc[o] = _mm512_fmadd_ps(p, _mm512_loadu_ps(rows[o].add(j)), acc[o]);
                    }
                }
                for (o, a) in acc.iter().enumerate().take(ob) {
                    gw[(o0 + o) * ns + s] += _mm512_reduce_add_ps(*a);
                }
            }
        }
    }
    gw
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn weight_grad_avx2(
    g: &[f32],
    g_stride: usize,
    cout: usize,
    input: &[f32],
    sources: &[usize],
    n: usize,
) -> Vec<f32> {
    use std::arch::x86_64::*;
    const GB: usize = 8;
    let ns = sources.len();
    let mut gw = vec![0.0f32; cout * ns];
    let (gp, ip) = (g.as_ptr(), input.as_ptr());
    let n_pad = round_up(n);
    for j0 in (0..n_pad).step_by(JC) {
        let j1 = (j0 + JC).min(n_pad);
        for o0 in (0..cout).step_by(GB) {
            let ob = GB.min(cout - o0);
            let rows: [*const f32; GB] = std::array::from_fn(|o| gp.add((o0 + o.min(ob - 1)) * g_stride));
            for (s, &off) in sources.iter().enumerate() {
                let base = ip.add(off);
                let mut acc = [_mm256_setzero_ps(); GB];
                for j in (j0..j1).step_by(8) {
                    let p = _mm256_loadu_ps(base.add(j));
                    for o in 0..GB {
                        acc[o] = _mm256_fmadd_ps(p, _mm256_loadu_ps(rows[o].add(j)), acc[o]);
                    }
                }
                for (o, a) in acc.iter().enumerate().take(ob) {
                    let mut lanes = [0.0f32; 8];
                    _mm256_storeu_ps(lanes.as_mut_ptr(), *a);
                    gw[(o0 + o) * ns + s] += lanes.iter().sum::<f32>();
                }
            }
        }
    }
    gw
}

fn weight_grad_portable(
    g: &[f32],
    g_stride: usize,
    cout: usize,
    input: &[f32],
    sources: &[usize],
    n: usize,
) -> Vec<f32> {
    const W: usize = 16;
    let ns = sources.len();
    let mut gw = vec![0.0f32; cout * ns];
    let n_pad = round_up(n);
    for j0 in (0..n_pad).step_by(JC) {
        let j1 = (j0 + JC).min(n_pad);
        for o in 0..cout {
            let row = &g[o * g_stride..];
            for (s, &off) in sources.iter().enumerate() {
                let mut acc = [0.0f32; W];
                for j in (j0..j1).step_by(W) {
                    let p: &[f32; W] = input[off + j..off + j + W].try_into().expect("lane block");
                    let q: &[f32; W] = row[j..j + W].try_into().expect("lane block");
                    for l in 0..W {
                        acc[l] += p[l] * q[l];
                    }
                }
                gw[o * ns + s] += acc.iter().sum::<f32>();
            }
        }
    }
    gw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatched_and_portable_paths_agree() {
        let input: Vec<f32> = (0..400).map(|i| ((i * 37) % 23) as f32 / 23.0 - 0.5).collect();
        let sources = [0, 3, 17, 40, 41];
        let (cout, n) = (6, 70);
        let weights: Vec<f32> = (0..cout * sources.len()).map(|i| (i % 7) as f32 - 3.0).collect();
        let stride = round_up(n);
        let mut a = vec![0.0f32; cout * stride];
        let mut b = a.clone();
        correlate(&input, &sources, &weights, cout, n, &mut a, stride);
        correlate_portable(&input, &sources, &weights, cout, n, &mut b, stride);
        for j in 0..n {
            let want: f32 = (0..sources.len()).map(|s| weights[s] * input[sources[s] + j]).sum();
            assert!((a[j] - want).abs() < 1e-4);
        }
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4);
        }
        let mut g = vec![0.0f32; cout * stride];
        for o in 0..cout {
            for j in 0..n {
                g[o * stride + j] = ((o + j) % 5) as f32 - 2.0;
            }
        }
        let x = weight_grad(&g, stride, cout, &input, &sources, n);
        let y = weight_grad_portable(&g, stride, cout, &input, &sources, n);
        for (o, s) in [(0, 0), (5, 4), (3, 2)] {
            let want: f32 = (0..n).map(|j| g[o * stride + j] * input[sources[s] + j]).sum();
            assert!((x[o * sources.len() + s] - want).abs() < 1e-3);
        }
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-3);
        }
    }
}
