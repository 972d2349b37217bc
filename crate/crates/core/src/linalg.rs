//! Small dense vector and matrix helpers.
//!
//! All arithmetic runs in `f64`; stored embeddings are `f32` and are widened on read.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(validation("ragged matrix rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += selfᵀ · x` restricted to rows `offset..offset + x.len()`.
    ///
    /// This is the product of the transposed matrix with a vector that fills
    /// one block of a concatenated input.
    pub fn add_transpose_mul_block(&self, offset: usize, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(offset + r)) {
                *o += w * xr;
            }
        }
    }

    /// `selfᵀ · x` for `x` of length `rows`.
    pub fn transpose_mul(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.cols];
        self.add_transpose_mul_block(0, x, &mut out);
        out
    }

    /// `self · y` for `y` of length `cols`, restricted to rows `offset..offset + n`.
    pub fn mul_block(&self, offset: usize, n: usize, y: &[f64]) -> Vector {
        (offset..offset + n).map(|r| dot(self.row(r), y)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of a stored `f32` row with an `f64` query, accumulated in `f64`.
///
/// Sums in sixteen interleaved lanes, folded as `(l, l+8)`, then `(l, l+4)`,
/// then pairwise; leftover elements are added in order at the end. On x86-64
/// with AVX2 the same order is computed with vector registers (no fused
/// multiply-add), so both paths give bit-identical results.
#[inline]
pub fn dot_mixed(row: &[f32], q: &[f64]) -> f64 {
    assert_eq!(row.len(), q.len(), "dot_mixed length mismatch");
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 was detected at runtime and both slices have the same length.
        return unsafe { dot_mixed_avx2(row, q) };
    }
    dot_mixed_portable(row, q)
}

const LANES: usize = 16;

#[inline(always)]
fn dot_mixed_portable(row: &[f32], q: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut rc = row.chunks_exact(LANES);
    let mut qc = q.chunks_exact(LANES);
    for (r, q) in (&mut rc).zip(&mut qc) {
        let r: &[f32; LANES] = r.try_into().expect("exact chunk");
        let q: &[f64; LANES] = q.try_into().expect("exact chunk");
        for l in 0..LANES {
            acc[l] += r[l] as f64 * q[l];
        }
    }
    let mut t = [0.0f64; 4];
    for l in 0..4 {
        t[l] = (acc[l] + acc[l + 8]) + (acc[l + 4] + acc[l + 12]);
    }
    let mut tail = 0.0;
    for (r, q) in rc.remainder().iter().zip(qc.remainder()) {
        tail += *r as f64 * q;
    }
    ((t[0] + t[1]) + (t[2] + t[3])) + tail
}

/// Same lane layout as the portable loop with 256-bit registers. Chunks are
/// borrowed as fixed arrays and moved into registers by value, so the hot
/// loop carries no pointer arithmetic.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_mixed_avx2(row: &[f32], q: &[f64]) -> f64 {
    use std::arch::x86_64::*;
    use std::mem::transmute;
    let mut v = [_mm256_setzero_pd(); 4];
    let mut rc = row.chunks_exact(LANES);
    let mut qc = q.chunks_exact(LANES);
    for (r, q) in (&mut rc).zip(&mut qc) {
        let r: &[f32; LANES] = r.try_into().expect("exact chunk");
        let q: &[f64; LANES] = q.try_into().expect("exact chunk");
        let r: &[[f32; 4]; 4] = transmute(r);
        let q: &[[f64; 4]; 4] = transmute(q);
        for g in 0..4 {
            let wide = _mm256_cvtps_pd(transmute::<[f32; 4], __m128>(r[g]));
            let qv = transmute::<[f64; 4], __m256d>(q[g]);
            v[g] = _mm256_add_pd(v[g], _mm256_mul_pd(wide, qv));
        }
    }
    let sum = _mm256_add_pd(_mm256_add_pd(v[0], v[2]), _mm256_add_pd(v[1], v[3]));
    let t: [f64; 4] = transmute(sum);
    let mut tail = 0.0;
    for (r, q) in rc.remainder().iter().zip(qc.remainder()) {
        tail += *r as f64 * q;
    }
    ((t[0] + t[1]) + (t[2] + t[3])) + tail
}

pub fn widen(v: &[f32]) -> Vector {
    v.iter().map(|&x| x as f64).collect()
}

pub fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Vector {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vector = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(x)` over the given values.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let total: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + total.ln()
}

/// Backpropagates through `w = softmax(z)`: returns `∂L/∂z` given `∂L/∂w`.
pub fn softmax_backward(weights: &[f64], grad_weights: &[f64]) -> Vector {
    let mean = dot(weights, grad_weights);
    weights.iter().zip(grad_weights).map(|(w, g)| w * (g - mean)).collect()
}

/// `Σ_j w_j · vs_j`.
pub fn weighted_sum(weights: &[f64], vs: &[Vector]) -> Vector {
    let dim = vs.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(vs) {
        axpy(*w, v, &mut out);
    }
    out
}

/// `y += a · x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(validation(format!("{what}: expected dimension {expected}, got {got}")));
    }
    Ok(())
}
