use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `start..end` as a contiguous slice.
    #[inline]
    pub fn rows_slice(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.cols..end * self.cols]
    }

    #[inline]
    pub fn rows_slice_mut(&mut self, start: usize, end: usize) -> &mut [f64] {
        &mut self.data[start * self.cols..end * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_acc(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline(always)]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

const MR: usize = 4;
const NR: usize = 16;
/// Summation-axis block, sized so a panel of `b` stays cache resident.
const DEPTH_BLOCK: usize = 128;

/// Register tile: `c[MR × NR block at (i, j)] += Σ_p coef(p) ⊗ b_p[j..j + NR]`,
/// with `p` visited in increasing order.
#[inline(always)]
fn tile(
    c: &mut [f64],
    ldc: usize,
    j: usize,
    width: usize,
    depth: std::ops::Range<usize>,
    coef: impl Fn(usize) -> [f64; MR],
    brow: impl Fn(usize) -> usize,
    b: &[f64],
) {
    let mut acc = [[0.0f64; NR]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        row[..width].copy_from_slice(&c[r * ldc + j..r * ldc + j + width]);
    }
    if width == NR {
        for p in depth.clone() {
            let a = coef(p);
            let off = brow(p) + j;
            let x: &[f64; NR] = b[off..off + NR].try_into().expect("tile width");
            for r in 0..MR {
                for q in 0..NR {
                    acc[r][q] += a[r] * x[q];
                }
            }
        }
    } else {
        for p in depth.clone() {
            let a = coef(p);
            let off = brow(p) + j;
            let x = &b[off..off + width];
            for r in 0..MR {
                for q in 0..width {
                    acc[r][q] += a[r] * x[q];
                }
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[r * ldc + j..r * ldc + j + width].copy_from_slice(&row[..width]);
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
///
/// Every output element accumulates its `k` products in increasing `p`
/// order, so results do not depend on the blocking.
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let blocked = m - m % MR;
    for p0 in (0..k).step_by(DEPTH_BLOCK) {
        let depth = p0..(p0 + DEPTH_BLOCK).min(k);
        for i in (0..blocked).step_by(MR) {
            let cblock = &mut c[i * n..(i + MR) * n];
            for j in (0..n).step_by(NR) {
                let coef = |p: usize| [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
                tile(cblock, n, j, NR.min(n - j), depth.clone(), coef, |p| p * n, b);
            }
        }
    }
    for i in blocked..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(crow, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k×n] += aᵀ · b` with `a[m×k]` and `b[m×n]`, row-major.
///
/// Every output element accumulates its `m` products in increasing row
/// order, so results are deterministic and independent of the blocking.
pub fn gemm_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let blocked = k - k % MR;
    for r0 in (0..m).step_by(DEPTH_BLOCK) {
        let depth = r0..(r0 + DEPTH_BLOCK).min(m);
        for i in (0..blocked).step_by(MR) {
            let cblock = &mut c[i * n..(i + MR) * n];
            for j in (0..n).step_by(NR) {
                let coef = |r: usize| {
                    let s = &a[r * k + i..r * k + i + MR];
                    [s[0], s[1], s[2], s[3]]
                };
                tile(cblock, n, j, NR.min(n - j), depth.clone(), coef, |r| r * n, b);
            }
        }
    }
    for i in blocked..k {
        let crow = &mut c[i * n..(i + 1) * n];
        for r in 0..m {
            axpy(crow, a[r * k + i], &b[r * n..(r + 1) * n]);
        }
    }
}

/// Adds `bias` to every row of `c[m×n]`.
pub fn add_row_bias(c: &mut [f64], bias: &[f64]) {
    for row in c.chunks_exact_mut(bias.len()) {
        for (x, &b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
}

/// Accumulates the column sums of `a[m×n]` into `out[n]`.
pub fn column_sums_acc(a: &[f64], out: &mut [f64]) {
    for row in a.chunks_exact(out.len()) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|p| a[(i, p)] * b[(p, j)]).sum()
        })
    }

    fn sample(rows: usize, cols: usize, salt: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| ((r * 7 + c * 13) as f64 * 0.37 + salt).sin())
    }

    #[test]
    fn matmul_matches_naive() {
        let a = sample(5, 7, 0.1);
        let b = sample(7, 3, 0.9);
        assert!(a.matmul(&b).max_abs_diff(&naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn at_b_matches_transpose_product() {
        let a = sample(70, 4, 0.3);
        let b = sample(70, 6, 1.3);
        let mut c = vec![0.0; 24];
        gemm_at_b_acc(a.as_slice(), b.as_slice(), &mut c, 70, 4, 6);
        let c = Matrix::from_vec(4, 6, c).unwrap();
        assert!(c.max_abs_diff(&naive(&a.transpose(), &b)) < 1e-12);
    }

    #[test]
    fn sigmoid_saturates_exactly() {
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
    }

    #[test]
    fn shape_checked_construction() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        let m = Matrix::identity(3);
        assert_eq!(m.transpose(), m);
        let mut bad = Matrix::zeros(1, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(bad.ensure_finite("x"), Err(Error::NonFinite(_))));
    }
}
