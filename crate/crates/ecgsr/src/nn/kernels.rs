//! Raw convolution kernels over flat `f64` slices.
//!
//! Layout conventions: signals are `[channels, length]` row-major; conv
//! weights are `[out, in, k]`; transposed-conv weights are `[in, out, k]`
//! (the same buffer read both ways makes `conv_transpose` the exact adjoint
//! of `conv` for identical parameters).
//!
//! Strided transposed convolutions are decomposed into `stride` independent
//! unit-stride sub-problems (polyphase), which keeps every inner loop a
//! contiguous fused-multiply-add sweep. Parallelism is over independent
//! output rows only, and every row is accumulated in a fixed sequential
//! order, so results are bit-identical for any thread count.

use rayon::prelude::*;

/// `floor((l + 2p - k) / s) + 1`; `None` when no window fits.
pub fn conv_out_len(l: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = l + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

/// `(l - 1) * s + k - 2p`; `None` when non-positive.
pub fn conv_transpose_out_len(l: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let raw = (l - 1) * s + k;
    if raw <= 2 * p {
        return None;
    }
    Some(raw - 2 * p)
}

fn padded_rows(x: &[f64], c: usize, l: usize, p: usize) -> Vec<f64> {
    if p == 0 {
        return x.to_vec();
    }
    let lp = l + 2 * p;
    let mut out = vec![0.0; c * lp];
    for i in 0..c {
        out[i * lp + p..i * lp + p + l].copy_from_slice(&x[i * l..(i + 1) * l]);
    }
    out
}

/// `acc[t] += sum_kk w[kk] * x[t + kk]` for t in 0..acc.len().
fn corr_acc(acc: &mut [f64], x: &[f64], w: &[f64]) {
    let lout = acc.len();
    let k = w.len();
    debug_assert!(x.len() >= lout + k - 1);
    let mut kk = 0;
    while kk + 4 <= k {
        let (w0, w1, w2, w3) = (w[kk], w[kk + 1], w[kk + 2], w[kk + 3]);
        let xs = &x[kk..kk + lout + 3];
        for (t, a) in acc.iter_mut().enumerate() {
            let s = xs[t].mul_add(w0, xs[t + 1].mul_add(w1, xs[t + 2].mul_add(w2, xs[t + 3] * w3)));
            *a += s;
        }
        kk += 4;
    }
    while kk < k {
        let c = w[kk];
        let xs = &x[kk..kk + lout];
        for (t, a) in acc.iter_mut().enumerate() {
            *a = xs[t].mul_add(c, *a);
        }
        kk += 1;
    }
}

/// `dst[kk..kk+n] += c * src[0..n]` (scatter side of a full convolution).
fn axpy_at(dst: &mut [f64], offset: usize, c: f64, src: &[f64]) {
    for (d, s) in dst[offset..offset + src.len()].iter_mut().zip(src) {
        *d = s.mul_add(c, *d);
    }
}

/// Forward 1D convolution: y[o][t] = b[o] + sum_{i,kk} w[o][i][kk] * xpad[i][t*s+kk].
pub fn conv1d_forward(
    x: &[f64],
    cin: usize,
    l: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let lout = conv_out_len(l, k, s, p).expect("caller validated geometry");
    let lp = l + 2 * p;
    let xpad = padded_rows(x, cin, l, p);
    let mut y = vec![0.0; cout * lout];
    y.par_chunks_mut(lout).enumerate().for_each(|(o, row)| {
        if let Some(b) = bias {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        for i in 0..cin {
            let xrow = &xpad[i * lp..(i + 1) * lp];
            let wrow = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
            if s == 1 {
                corr_acc(row, xrow, wrow);
            } else {
                for (kk, &c) in wrow.iter().enumerate() {
                    for (t, v) in row.iter_mut().enumerate() {
                        *v = xrow[t * s + kk].mul_add(c, *v);
                    }
                }
            }
        }
    });
    y
}

/// Gradient of conv1d w.r.t. its input.
pub fn conv1d_grad_x(
    gy: &[f64],
    w: &[f64],
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let lout = conv_out_len(l, k, s, p).expect("geometry validated in forward");
    let lp = l + 2 * p;
    let mut dx = vec![0.0; cin * l];
    dx.par_chunks_mut(l).enumerate().for_each(|(i, dxrow)| {
        let mut pad = vec![0.0; lp];
        for o in 0..cout {
            let grow = &gy[o * lout..(o + 1) * lout];
            let wrow = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
            if s == 1 {
                for (kk, &c) in wrow.iter().enumerate() {
                    axpy_at(&mut pad, kk, c, grow);
                }
            } else {
                for (kk, &c) in wrow.iter().enumerate() {
                    for (t, &g) in grow.iter().enumerate() {
                        pad[t * s + kk] += c * g;
                    }
                }
            }
        }
        dxrow.copy_from_slice(&pad[p..p + l]);
    });
    dx
}

/// Gradient of conv1d w.r.t. its weights.
pub fn conv1d_grad_w(
    gy: &[f64],
    x: &[f64],
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let lout = conv_out_len(l, k, s, p).expect("geometry validated in forward");
    let lp = l + 2 * p;
    let xpad = padded_rows(x, cin, l, p);
    let mut dw = vec![0.0; cout * cin * k];
    dw.par_chunks_mut(cin * k).enumerate().for_each(|(o, block)| {
        let grow = &gy[o * lout..(o + 1) * lout];
        for i in 0..cin {
            let xrow = &xpad[i * lp..(i + 1) * lp];
            let dwrow = &mut block[i * k..(i + 1) * k];
            for (t, &g) in grow.iter().enumerate() {
                let xs = &xrow[t * s..t * s + k];
                for (kk, d) in dwrow.iter_mut().enumerate() {
                    *d = xs[kk].mul_add(g, *d);
                }
            }
        }
    });
    dw
}

/// Gradient of conv w.r.t. the bias: row sums of gy.
pub fn grad_bias(gy: &[f64], cout: usize, lout: usize) -> Vec<f64> {
    (0..cout).map(|o| gy[o * lout..(o + 1) * lout].iter().sum()).collect()
}

/// Splits the raw scatter axis `u = j*s + kk` (extent `(l-1)*s + k`) into
/// `s` unit-stride phases. Phase `r` holds positions `u = m*s + r`.
fn phase_len(extent: usize, s: usize, r: usize) -> usize {
    if r >= extent {
        0
    } else {
        (extent - r).div_ceil(s)
    }
}

/// Forward transposed 1D convolution:
/// y[o][j*s + kk - p] += w[i][o][kk] * x[i][j], weights `[cin, cout, k]`.
pub fn conv_transpose1d_forward(
    x: &[f64],
    cin: usize,
    l: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let lout = conv_transpose_out_len(l, k, s, p).expect("caller validated geometry");
    let extent = (l - 1) * s + k;
    let mut y = vec![0.0; cout * lout];
    y.par_chunks_mut(lout).enumerate().for_each(|(o, row)| {
        if let Some(b) = bias {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        if s == 1 {
            let mut buf = vec![0.0; extent];
            for i in 0..cin {
                let xrow = &x[i * l..(i + 1) * l];
                let wrow = &w[(i * cout + o) * k..(i * cout + o + 1) * k];
                for (kk, &c) in wrow.iter().enumerate() {
                    axpy_at(&mut buf, kk, c, xrow);
                }
            }
            for (t, v) in row.iter_mut().enumerate() {
                *v += buf[t + p];
            }
        } else {
            let mut phases: Vec<Vec<f64>> =
                (0..s).map(|r| vec![0.0; phase_len(extent, s, r)]).collect();
            for i in 0..cin {
                let xrow = &x[i * l..(i + 1) * l];
                let wrow = &w[(i * cout + o) * k..(i * cout + o + 1) * k];
                for (kk, &c) in wrow.iter().enumerate() {
                    axpy_at(&mut phases[kk % s], kk / s, c, xrow);
                }
            }
            for (t, v) in row.iter_mut().enumerate() {
                let u = t + p;
                *v += phases[u % s][u / s];
            }
        }
    });
    y
}

/// Phase-split copy of one gy row onto the raw scatter axis:
/// out[r][m] = gy[m*s + r - p] (zero outside the valid range).
fn gy_phases(gy_row: &[f64], extent: usize, s: usize, p: usize) -> Vec<Vec<f64>> {
    let lout = gy_row.len();
    (0..s)
        .map(|r| {
            let len = phase_len(extent, s, r);
            let mut buf = vec![0.0; len];
            for (m, v) in buf.iter_mut().enumerate() {
                let u = m * s + r;
                if u >= p && u - p < lout {
                    *v = gy_row[u - p];
                }
            }
            buf
        })
        .collect()
}

/// Gradient of conv_transpose1d w.r.t. its input:
/// dx[i][j] = sum_{o,kk} w[i][o][kk] * gy[o][j*s + kk - p].
pub fn conv_transpose1d_grad_x(
    gy: &[f64],
    w: &[f64],
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let lout = conv_transpose_out_len(l, k, s, p).expect("geometry validated in forward");
    let extent = (l - 1) * s + k;
    let all_phases: Vec<Vec<Vec<f64>>> =
        (0..cout).map(|o| gy_phases(&gy[o * lout..(o + 1) * lout], extent, s, p)).collect();
    let mut dx = vec![0.0; cin * l];
    dx.par_chunks_mut(l).enumerate().for_each(|(i, dxrow)| {
        for (o, phases) in all_phases.iter().enumerate() {
            let wrow = &w[(i * cout + o) * k..(i * cout + o + 1) * k];
            for (kk, &c) in wrow.iter().enumerate() {
                let ph = &phases[kk % s];
                let q = kk / s;
                let src = &ph[q..q + l];
                for (t, d) in dxrow.iter_mut().enumerate() {
                    *d = src[t].mul_add(c, *d);
                }
            }
        }
    });
    dx
}

/// Gradient of conv_transpose1d w.r.t. its weights (layout `[cin, cout, k]`):
/// dw[i][o][kk] = sum_j x[i][j] * gy[o][j*s + kk - p].
pub fn conv_transpose1d_grad_w(
    gy: &[f64],
    x: &[f64],
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let lout = conv_transpose_out_len(l, k, s, p).expect("geometry validated in forward");
    let extent = (l - 1) * s + k;
    let all_phases: Vec<Vec<Vec<f64>>> =
        (0..cout).map(|o| gy_phases(&gy[o * lout..(o + 1) * lout], extent, s, p)).collect();
    let mut dw = vec![0.0; cin * cout * k];
    dw.par_chunks_mut(cout * k).enumerate().for_each(|(i, block)| {
        let xrow = &x[i * l..(i + 1) * l];
        for (o, phases) in all_phases.iter().enumerate() {
            let dwrow = &mut block[o * k..(o + 1) * k];
            for (kk, d) in dwrow.iter_mut().enumerate() {
                let ph = &phases[kk % s];
                let q = kk / s;
                *d += dot(xrow, &ph[q..q + l]);
            }
        }
    });
    dw
}

/// Fixed-order blocked dot product (eight independent accumulators).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let i = c * 8;
        for j in 0..8 {
            acc[j] = a[i + j].mul_add(b[i + j], acc[j]);
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Brute-force conv, straight from the definition.
    fn conv_naive(
        x: &[f64],
        cin: usize,
        l: usize,
        w: &[f64],
        b: Option<&[f64]>,
        cout: usize,
        k: usize,
        s: usize,
        p: usize,
    ) -> Vec<f64> {
        let lout = conv_out_len(l, k, s, p).unwrap();
        let mut y = vec![0.0; cout * lout];
        for o in 0..cout {
            for t in 0..lout {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for i in 0..cin {
                    for kk in 0..k {
                        let at = t * s + kk;
                        if at >= p && at - p < l {
                            acc += w[(o * cin + i) * k + kk] * x[i * l + at - p];
                        }
                    }
                }
                y[o * lout + t] = acc;
            }
        }
        y
    }

    /// Brute-force transposed conv (scatter definition).
    fn convt_naive(
        x: &[f64],
        cin: usize,
        l: usize,
        w: &[f64],
        b: Option<&[f64]>,
        cout: usize,
        k: usize,
        s: usize,
        p: usize,
    ) -> Vec<f64> {
        let lout = conv_transpose_out_len(l, k, s, p).unwrap();
        let mut y = vec![0.0; cout * lout];
        if let Some(b) = b {
            for o in 0..cout {
                for t in 0..lout {
                    y[o * lout + t] = b[o];
                }
            }
        }
        for i in 0..cin {
            for o in 0..cout {
                for j in 0..l {
                    for kk in 0..k {
                        let u = j * s + kk;
                        if u >= p && u - p < lout {
                            y[o * lout + u - p] += w[(i * cout + o) * k + kk] * x[i * l + j];
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_on_random_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..60 {
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let k = rng.random_range(1..6);
            let s = rng.random_range(1..4);
            let p = rng.random_range(0..k);
            let l = rng.random_range(k.max(2)..20);
            if conv_out_len(l, k, s, p).is_none() {
                continue;
            }
            let x = random_vec(&mut rng, cin * l);
            let w = random_vec(&mut rng, cout * cin * k);
            let b = random_vec(&mut rng, cout);
            let fast = conv1d_forward(&x, cin, l, &w, Some(&b), cout, k, s, p);
            let slow = conv_naive(&x, cin, l, &w, Some(&b), cout, k, s, p);
            for (f, sl) in fast.iter().zip(&slow) {
                assert!((f - sl).abs() < 1e-12, "case {case}: {f} vs {sl}");
            }
        }
    }

    #[test]
    fn conv_transpose_matches_naive_on_random_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for case in 0..60 {
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let k = rng.random_range(1..8);
            let s = rng.random_range(1..6);
            let p = rng.random_range(0..k);
            let l = rng.random_range(2..16);
            if conv_transpose_out_len(l, k, s, p).is_none() {
                continue;
            }
            let x = random_vec(&mut rng, cin * l);
            let w = random_vec(&mut rng, cin * cout * k);
            let b = random_vec(&mut rng, cout);
            let fast = conv_transpose1d_forward(&x, cin, l, &w, Some(&b), cout, k, s, p);
            let slow = convt_naive(&x, cin, l, &w, Some(&b), cout, k, s, p);
            for (f, sl) in fast.iter().zip(&slow) {
                assert!((f - sl).abs() < 1e-12, "case {case}: {f} vs {sl}");
            }
        }
    }

    #[test]
    fn adjoint_identity_between_conv_and_transpose() {
        // <conv(x), y> == <x, conv_transpose(y)> with shared weights, no bias
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..40 {
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let k = rng.random_range(1..6);
            let s = rng.random_range(1..4);
            let p = rng.random_range(0..k);
            let l = rng.random_range(k.max(2)..18);
            let Some(lout) = conv_out_len(l, k, s, p) else { continue };
            let x = random_vec(&mut rng, cin * l);
            let w = random_vec(&mut rng, cout * cin * k);
            let y = random_vec(&mut rng, cout * lout);
            let cx = conv1d_forward(&x, cin, l, &w, None, cout, k, s, p);
            let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
            // the adjoint of conv1d onto length l is exactly its input gradient
            let ty = conv1d_grad_x(&y, &w, cin, l, cout, k, s, p);
            let rhs: f64 = ty.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn transpose_forward_equals_conv_input_gradient() {
        // conv_transpose1d(y, w) must equal the gradient of conv1d w.r.t. x
        // when (l-1)*s + k - 2p lands exactly on l of the forward conv.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..40 {
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let k = rng.random_range(1..6);
            let s = rng.random_range(1..4);
            let p = rng.random_range(0..k);
            let l = rng.random_range(k.max(3)..20);
            let Some(lout) = conv_out_len(l, k, s, p) else { continue };
            // exactness requires the conv geometry to tile l exactly
            if conv_transpose_out_len(lout, k, s, p) != Some(l) {
                continue;
            }
            let w = random_vec(&mut rng, cout * cin * k);
            let gy = random_vec(&mut rng, cout * lout);
            let via_grad = conv1d_grad_x(&gy, &w, cin, l, cout, k, s, p);
            let via_forward =
                conv_transpose1d_forward(&gy, cout, lout, &w, None, cin, k, s, p);
            for (a, b) in via_grad.iter().zip(&via_forward) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let y = conv1d_forward(&x, 1, 7, &[1.0], Some(&[0.0]), 1, 1, 1, 0);
        assert_eq!(x, y);
        let yt = conv_transpose1d_forward(&x, 1, 7, &[1.0], Some(&[0.0]), 1, 1, 1, 0);
        assert_eq!(x, yt);
    }

    #[test]
    fn transpose_length_formula() {
        assert_eq!(conv_transpose_out_len(250, 30, 5, 0), Some(1275));
        assert_eq!(conv_transpose_out_len(1275, 30, 2, 0), Some(2578));
        assert_eq!(conv_transpose_out_len(2578, 10, 1, 0), Some(2587));
        assert_eq!(conv_transpose_out_len(2587, 4, 1, 0), Some(2590));
    }
}
