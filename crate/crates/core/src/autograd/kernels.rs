//! Numeric kernels behind the tape operations.
//!
//! All accumulation (matmul inner products, reductions, broadcast
//! gradient sums) happens in `f64`; storage stays `f32`.

use rayon::prelude::*;

use super::tensor::numel;

/// Work threshold (multiply-adds) above which matmul rows run on rayon.
const PAR_THRESHOLD: usize = 1 << 18;
/// Row blocks summed separately by [`gemm_tn_acc`] on large inputs.
const TN_BLOCKS: usize = 8;

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `input` viewed under `out` (zero on broadcast axes).
pub(crate) fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let base = contiguous_strides(input);
    let offset = out.len() - input.len();
    (0..out.len())
        .map(|i| {
            if i < offset || input[i - offset] == 1 {
                0
            } else {
                base[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
/// The innermost axis is walked in a tight loop.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut counter = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut idx = 0;
    loop {
        for j in 0..inner {
            f(idx, base_a + j * ia, base_b + j * ib);
            idx += 1;
        }
        // advance the outer counter
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            base_a += sa[axis];
            base_b += sb[axis];
            if counter[axis] < out[axis] {
                break;
            }
            base_a -= sa[axis] * out[axis];
            base_b -= sb[axis] * out[axis];
            counter[axis] = 0;
        }
    }
}

/// Sums `grad` (shaped `out`) down to `input` by reducing broadcast axes.
pub(crate) fn reduce_to_shape(grad: &[f32], out: &[usize], input: &[usize]) -> Vec<f32> {
    if out == input {
        return grad.to_vec();
    }
    let s = broadcast_strides(input, out);
    let zeros = vec![0; out.len()];
    let mut acc = vec![0f64; numel(input)];
    for_each_broadcast(out, &s, &zeros, |i, off, _| acc[off] += grad[i] as f64);
    acc.into_iter().map(|x| x as f32).collect()
}

/// `Σ x·y` in f64 over four interleaved partial sums.
fn dot64(x: &[f32], y: &[f32]) -> f64 {
    let mut acc = [0f64; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] as f64 * b[l] as f64;
        }
    }
    let tail: f64 = xr.iter().zip(yr).map(|(&a, &b)| a as f64 * b as f64).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `acc += s · row` in f64.
fn axpy64(acc: &mut [f64], s: f32, row: &[f32]) {
    if s == 0.0 {
        return;
    }
    let s = s as f64;
    for (a, &v) in acc.iter_mut().zip(row) {
        *a += s * v as f64;
    }
}

/// Row-parallel driver: `row(acc, i, out_row)` fills one output row, with
/// `acc` a reusable f64 scratch row of width `n`.
fn for_rows(out: &mut [f32], n: usize, work: usize, row: impl Fn(&mut [f64], usize, &mut [f32]) + Sync) {
    if work >= PAR_THRESHOLD && out.len() > n {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each_init(|| vec![0f64; n], |acc, (i, r)| row(acc, i, r));
    } else {
        let mut acc = vec![0f64; n];
        out.chunks_mut(n).enumerate().for_each(|(i, r)| row(&mut acc, i, r));
    }
}

/// `out[m×n] (+)= a[m×k] · bᵀ` where `b_rows` holds `b` as `n` rows of `k`
/// (dot products) or `b_cols` holds it as `k` rows of `n` (row updates).
/// The row-update form is used when the output is at least as wide as the
/// shared dimension.
fn product(a: &[f32], b_rows: Option<&[f32]>, b_cols: Option<&[f32]>, out: &mut [f32], m: usize, k: usize, n: usize, add: bool) {
    if n == 0 {
        return;
    }
    if k == 0 {
        if !add {
            out.fill(0.0);
        }
        return;
    }
    let work = m * k * n;
    let owned_cols;
    let owned_rows;
    if n >= k {
        let cols = match b_cols {
            Some(c) => c,
            None => {
                owned_cols = transpose2(b_rows.expect("one layout given"), n, k);
                &owned_cols
            }
        };
        for_rows(out, n, work, |acc, i, out_row| {
            acc.fill(0.0);
            for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                axpy64(acc, av, &cols[p * n..(p + 1) * n]);
            }
            for (o, &v) in out_row.iter_mut().zip(acc.iter()) {
                *o = if add { *o + v as f32 } else { v as f32 };
            }
        });
    } else {
        let rows = match b_rows {
            Some(r) => r,
            None => {
                owned_rows = transpose2(b_cols.expect("one layout given"), k, n);
                &owned_rows
            }
        };
        for_rows(out, n, work, |_, i, out_row| {
            let a_row = &a[i * k..(i + 1) * k];
            for (o, b_row) in out_row.iter_mut().zip(rows.chunks_exact(k)) {
                let v = dot64(a_row, b_row) as f32;
                *o = if add { *o + v } else { v };
            }
        });
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub(crate) fn gemm(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    product(a, None, Some(b), out, m, k, n, false);
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    product(a, Some(b), None, out, m, k, n, true);
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`. Rows are summed in fixed blocks whose
/// partial results are added in order, so the result does not depend on
/// the thread count.
pub(crate) fn gemm_tn_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if n == 0 || k == 0 || m == 0 {
        return;
    }
    // Accumulates outer products row by row; with a narrow `b` the
    // accumulator is kept transposed so the inner loop runs over `k`.
    let wide = n >= k;
    let block = |rows: std::ops::Range<usize>| {
        let mut acc = vec![0f64; k * n];
        for i in rows {
            let (a_row, b_row) = (&a[i * k..(i + 1) * k], &b[i * n..(i + 1) * n]);
            if wide {
                for (p, &av) in a_row.iter().enumerate() {
                    axpy64(&mut acc[p * n..(p + 1) * n], av, b_row);
                }
            } else {
                for (j, &bv) in b_row.iter().enumerate() {
                    axpy64(&mut acc[j * k..(j + 1) * k], bv, a_row);
                }
            }
        }
        acc
    };
    let partials: Vec<Vec<f64>> = if m * k * n >= PAR_THRESHOLD && m > 1 {
        let blocks = TN_BLOCKS.min(m);
        let size = m.div_ceil(blocks);
        (0..blocks)
            .into_par_iter()
            .map(|j| block(j * size..((j + 1) * size).min(m)))
            .collect()
    } else {
        vec![block(0..m)]
    };
    for (idx, o) in out.iter_mut().enumerate() {
        let src = if wide { idx } else { (idx % n) * k + idx / n };
        *o += partials.iter().map(|p| p[src]).sum::<f64>() as f32;
    }
}

/// Transpose of a row-major `rows × cols` matrix.
pub(crate) fn transpose2(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; a.len()];
    const BLOCK: usize = 32;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
        }
    }
    out
}

/// General axis permutation: `out.shape[i] = shape[perm[i]]`.
pub(crate) fn permute(data: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = contiguous_strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zeros = vec![0; out_shape.len()];
    let mut out = vec![0.0; data.len()];
    for_each_broadcast(&out_shape, &src_strides, &zeros, |i, off, _| out[i] = data[off]);
    (out_shape, out)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Numerically stable `ln σ(x) = −softplus(−x)`.
pub(crate) fn log_sigmoid(x: f32) -> f32 {
    let x = x as f64;
    let v = if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    };
    v as f32
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
