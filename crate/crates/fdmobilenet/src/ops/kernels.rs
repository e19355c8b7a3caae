//! Slice-level compute kernels shared by the tensor ops and the engine
//! executor.
//!
//! Every kernel fully overwrites its output slice, so callers may pass
//! reused scratch buffers. Parallel paths split work over output
//! channels only; each output element keeps the exact accumulation
//! order of the sequential path, so results are bit-identical for any
//! thread count.

use rayon::prelude::*;

use super::{ConvWeights, FcWeights};

/// Minimum per-thread row count before the GEMM splits work.
const PAR_MIN_ROWS: usize = 4;

pub(crate) fn im2col_len(c_in: usize, k: usize, out_h: usize, out_w: usize) -> usize {
    c_in * k * k * out_h * out_w
}

/// Unroll conv patches into a `(c_in*k*k) x (out_h*out_w)` matrix.
/// Out-of-bounds taps read zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    input: &[f32],
    c_in: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    col: &mut [f32],
) {
    let cols = out_h * out_w;
    debug_assert_eq!(col.len(), im2col_len(c_in, k, out_h, out_w));
    for c in 0..c_in {
        let plane = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
        for dy in 0..k {
            for dx in 0..k {
                let row = ((c * k + dy) * k + dx) * cols;
                for oy in 0..out_h {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    let dst = &mut col[row + oy * out_w..row + (oy + 1) * out_w];
                    if iy < 0 || iy >= in_h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= in_w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// `out[i][j] = bias[i] + sum_k a[i][k] * b[k][j]` with `a: m x kd`,
/// `b: kd x n`. Accumulation runs over ascending `k` for every output
/// element regardless of how rows are split across threads.
pub(crate) fn gemm_bias(
    m: usize,
    kd: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    debug_assert_eq!(out.len(), m * n);
    let threads = rayon::current_num_threads();
    if threads > 1 && m >= 2 * PAR_MIN_ROWS {
        let rows_per_chunk = (m / threads).clamp(PAR_MIN_ROWS, m);
        out.par_chunks_mut(rows_per_chunk * n)
            .enumerate()
            .for_each(|(chunk, out_rows)| {
                let i0 = chunk * rows_per_chunk;
                gemm_rows(i0, out_rows.len() / n, kd, n, a, b, bias, out_rows);
            });
    } else {
        gemm_rows(0, m, kd, n, a, b, bias, out);
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_rows(
    i0: usize,
    rows: usize,
    kd: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    for r in 0..rows {
        let i = i0 + r;
        let out_row = &mut out[r * n..(r + 1) * n];
        out_row.fill(bias.map_or(0.0, |bv| bv[i]));
        let a_row = &a[i * kd..(i + 1) * kd];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

/// Standard convolution for one sample: im2col into `col`, then GEMM.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_into(
    input: &[f32],
    c_in: usize,
    in_h: usize,
    in_w: usize,
    w: &ConvWeights,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    col: &mut [f32],
    out: &mut [f32],
) {
    let k = w.kernel();
    if k == 1 && stride == 1 && pad == 0 {
        // The input already is the patch matrix.
        gemm_bias(w.c_out(), c_in, out_h * out_w, w.data(), input, w.bias(), out);
        return;
    }
    im2col(input, c_in, in_h, in_w, k, stride, pad, out_h, out_w, col);
    gemm_bias(w.c_out(), c_in * k * k, out_h * out_w, w.data(), col, w.bias(), out);
}

/// Depthwise convolution for one sample: direct loops, one channel
/// plane at a time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_into(
    input: &[f32],
    c: usize,
    in_h: usize,
    in_w: usize,
    w: &ConvWeights,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    out: &mut [f32],
) {
    let k = w.kernel();
    let run = |(ch, out_plane): (usize, &mut [f32])| {
        let plane = &input[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        let filter = &w.data()[ch * k * k..(ch + 1) * k * k];
        let bias = w.bias().map_or(0.0, |b| b[ch]);
        for oy in 0..out_h {
            let row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
            for (ox, o) in row.iter_mut().enumerate() {
                let mut acc = bias;
                for dy in 0..k {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    let f_row = &filter[dy * k..(dy + 1) * k];
                    for (dx, &fv) in f_row.iter().enumerate() {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        if ix >= 0 && ix < in_w as isize {
                            acc += src_row[ix as usize] * fv;
                        }
                    }
                }
                *o = acc;
            }
        }
    };
    if rayon::current_num_threads() > 1 && c >= 2 {
        out.par_chunks_mut(out_h * out_w).enumerate().for_each(run);
    } else {
        out.chunks_mut(out_h * out_w).enumerate().for_each(run);
    }
}

pub(crate) fn relu_into(src: &[f32], dst: &mut [f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s.max(0.0);
    }
}

/// Mean of each channel plane of one sample.
pub(crate) fn global_avg_pool_into(src: &[f32], c: usize, hw: usize, dst: &mut [f32]) {
    for ch in 0..c {
        let mut acc = 0.0f32;
        for &v in &src[ch * hw..(ch + 1) * hw] {
            acc += v;
        }
        dst[ch] = acc / hw as f32;
    }
}

/// One sample: `dst = W * src + bias`.
pub(crate) fn fully_connected_into(src: &[f32], p: &FcWeights, dst: &mut [f32]) {
    gemm_bias(p.c_out(), p.c_in(), 1, p.weights(), src, Some(p.bias()), dst);
}

/// Softmax over the channel dimension at each spatial position, with the
/// usual max subtraction for stability. The normalizer accumulates in f64
/// so the outputs sum to 1 to within one rounding step per element even
/// over a thousand classes.
pub(crate) fn softmax_channels_into(src: &[f32], c: usize, hw: usize, n: usize, dst: &mut [f32]) {
    for sample in 0..n {
        for pos in 0..hw {
            let base = sample * c * hw + pos;
            let mut max = f32::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(src[base + ch * hw]);
            }
            let mut sum = 0.0f64;
            for ch in 0..c {
                let e = (src[base + ch * hw] - max).exp();
                dst[base + ch * hw] = e;
                sum += e as f64;
            }
            for ch in 0..c {
                dst[base + ch * hw] = (dst[base + ch * hw] as f64 / sum) as f32;
            }
        }
    }
}
