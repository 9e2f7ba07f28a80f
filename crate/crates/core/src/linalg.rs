//! Minimal dense matrix support for the batched network passes.
//!
//! Everything is `f64`, row-major, and deterministic: each output element is
//! produced by exactly one thread with a fixed accumulation order, so results
//! do not depend on the rayon schedule.

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// self += s * other
    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Dot product with four-lane accumulators so LLVM can vectorize the reduction.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// y += s * x
#[inline]
fn axpy(y: &mut [f64], x: &[f64], s: f64) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// C = A * B^T, i.e. C[m][n] = sum_k A[m][k] * B[n][k].
///
/// Both operands are read along contiguous rows; this is the layout used by
/// the forward pass (activations x weight rows).
pub fn matmul_abt(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.cols, b.cols, "inner dimension mismatch");
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.rows);
    let n = b.rows;
    let cols = c.cols;
    c.data
        .par_chunks_mut(cols)
        .with_min_len(8)
        .enumerate()
        .for_each(|(m, crow)| {
            let arow = a.row(m);
            let mut j = 0;
            // four B rows at a time keeps the A row in registers longer
            while j + 4 <= n {
                let b0 = b.row(j);
                let b1 = b.row(j + 1);
                let b2 = b.row(j + 2);
                let b3 = b.row(j + 3);
                let mut acc = [[0.0f64; 4]; 4];
                let mut it = arow
                    .chunks_exact(4)
                    .zip(b0.chunks_exact(4))
                    .zip(b1.chunks_exact(4))
                    .zip(b2.chunks_exact(4))
                    .zip(b3.chunks_exact(4));
                for ((((xa, x0), x1), x2), x3) in &mut it {
                    for l in 0..4 {
                        acc[0][l] += xa[l] * x0[l];
                        acc[1][l] += xa[l] * x1[l];
                        acc[2][l] += xa[l] * x2[l];
                        acc[3][l] += xa[l] * x3[l];
                    }
                }
                let tail = arow.len() - arow.len() % 4;
                let mut sums = [0.0f64; 4];
                for (r, s) in sums.iter_mut().enumerate() {
                    *s = (acc[r][0] + acc[r][1]) + (acc[r][2] + acc[r][3]);
                }
                for k in tail..arow.len() {
                    let x = arow[k];
                    sums[0] += x * b0[k];
                    sums[1] += x * b1[k];
                    sums[2] += x * b2[k];
                    sums[3] += x * b3[k];
                }
                crow[j..j + 4].copy_from_slice(&sums);
                j += 4;
            }
            while j < n {
                crow[j] = dot(arow, b.row(j));
                j += 1;
            }
        });
}

/// C = A * B, i.e. C[m][n] = sum_k A[m][k] * B[k][n].
///
/// Used by the backward pass to push adjoints through a layer (dX = dY * W).
pub fn matmul_ab(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.cols, b.rows, "inner dimension mismatch");
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.cols);
    let cols = c.cols;
    c.data
        .par_chunks_mut(cols)
        .with_min_len(8)
        .enumerate()
        .for_each(|(m, crow)| {
            crow.iter_mut().for_each(|x| *x = 0.0);
            let arow = a.row(m);
            for (k, &s) in arow.iter().enumerate() {
                if s != 0.0 {
                    axpy(crow, b.row(k), s);
                }
            }
        });
}

/// C += A^T * B, i.e. C[i][j] += sum_m A[m][i] * B[m][j].
///
/// Used to accumulate weight gradients (dW += dY^T * X). The accumulation
/// order over `m` is fixed, and each thread owns a disjoint band of C rows.
pub fn matmul_atb_acc(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.rows, b.rows, "outer dimension mismatch");
    assert_eq!(c.rows, a.cols);
    assert_eq!(c.cols, b.cols);
    let cols = c.cols;
    let band = 32usize;
    c.data
        .par_chunks_mut(band * cols)
        .enumerate()
        .for_each(|(chunk, cband)| {
            let i0 = chunk * band;
            let rows_here = cband.len() / cols;
            for m in 0..a.rows {
                let brow = b.row(m);
                let arow = a.row(m);
                for r in 0..rows_here {
                    let s = arow[i0 + r];
                    if s != 0.0 {
                        axpy(&mut cband[r * cols..(r + 1) * cols], brow, s);
                    }
                }
            }
        });
}
