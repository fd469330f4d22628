// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward kernels shared by the plain inference path and the gradient tape,
//! so both paths produce the same values.

use crate::tensor::Matrix;

pub const RMS_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Row-wise RMS normalization with a learned per-column scale.
/// Returns the output and each row's `1 / rms`.
pub fn rmsnorm(x: &Matrix, scale: &[f64]) -> (Matrix, Vec<f64>) {
    assert_eq!(scale.len(), x.cols(), "rmsnorm: scale width");
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut inv = Vec::with_capacity(x.rows());
    let width = x.cols() as f64;
    for r in 0..x.rows() {
        let row = x.row(r);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / width;
        let ir = 1.0 / (ms + RMS_EPS).sqrt();
        inv.push(ir);
        for ((o, &v), &g) in out.row_mut(r).iter_mut().zip(row).zip(scale) {
            *o = v * ir * g;
        }
    }
    (out, inv)
}

/// `silu(gate) ⊙ up`
pub fn swiglu(gate: &Matrix, up: &Matrix) -> Matrix {
    gate.zip_map(up, |g, u| silu(g) * u)
}

/// Keeps the `k` largest entries of each row (ties go to the lower column)
/// and zeroes the rest. Returns the masked matrix and the kept columns per row.
pub fn topk_rows(x: &Matrix, k: usize) -> (Matrix, Vec<Vec<usize>>) {
    let k = k.min(x.cols());
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut kept = Vec::with_capacity(x.rows());
    let mut order: Vec<usize> = Vec::with_capacity(x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        order.clear();
        order.extend(0..x.cols());
        // Stable order: value descending, then column ascending.
        if k > 0 {
            order.select_nth_unstable_by(k - 1, |&a, &b| {
                row[b].total_cmp(&row[a]).then(a.cmp(&b))
            });
        }
        let mut sel: Vec<usize> = order[..k].to_vec();
        sel.sort_unstable();
        let dst = out.row_mut(r);
        for &c in &sel {
            dst[c] = row[c];
        }
        kept.push(sel);
    }
    (out, kept)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}
