//! Dense real linear algebra used by the tensor network code.
//!
//! [`Matrix`] is row-major. Products go through `matrixmultiply`; the
//! singular value and QR factorizations are delegated to `faer` (built
//! without its thread pool, so results do not depend on the thread count)
//! and wrapped so results follow a fixed sign convention.

use faer::Mat;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Oversampling columns for the randomized range finder.
const SKETCH_OVERSAMPLE: usize = 16;

/// Subspace (power) iterations for the randomized range finder.
const SKETCH_POWER_ITERS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data; rejects length mismatches and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {i} is {}", data[i])));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(
            self.rows,
            self.cols,
            rhs.cols,
            1.0,
            (&self.data, self.cols, 1),
            (&rhs.data, rhs.cols, 1),
            0.0,
            (&mut out.data, rhs.cols, 1),
        );
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            1.0,
            (&self.data, 1, self.cols),
            (&rhs.data, rhs.cols, 1),
            0.0,
            (&mut out.data, rhs.cols, 1),
        );
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Shape("subtracting matrices of different shapes".into()));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Strided general matrix product `c = alpha·a·b + beta·c` where each operand
/// is `(slice, row_stride, col_stride)`. Bounds are checked before the call.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    beta: f64,
    c: (&mut [f64], usize, usize),
) {
    fn extent(r: usize, cc: usize, rs: usize, cs: usize) -> usize {
        if r == 0 || cc == 0 {
            0
        } else {
            (r - 1) * rs + (cc - 1) * cs + 1
        }
    }
    assert!(extent(m, k, a.1, a.2) <= a.0.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, b.1, b.2) <= b.0.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, c.1, c.2) <= c.0.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c.0[i * c.1 + j * c.2];
                *x *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by dgemm lies inside the extents checked above,
    // and `c` is a unique borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

/// Thin singular value decomposition `a = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `u[:, ..r] · diag(s[..r]) · vt[..r, :]`.
    pub fn reconstruct(&self, r: usize) -> Matrix {
        let r = r.min(self.rank());
        let rows = self.u.rows();
        let cols = self.vt.cols();
        let mut us = Matrix::zeros(rows, r);
        for i in 0..rows {
            for k in 0..r {
                us.set(i, k, self.u.get(i, k) * self.singular_values[k]);
            }
        }
        let mut out = Matrix::zeros(rows, cols);
        gemm(
            rows,
            r,
            cols,
            1.0,
            (&us.data, r, 1),
            (&self.vt.data, cols, 1),
            0.0,
            (&mut out.data, cols, 1),
        );
        out
    }

    /// Flip each singular pair so the largest-magnitude entry of the left
    /// vector is positive (first index wins ties).
    fn fix_signs(&mut self) {
        let rows = self.u.rows();
        let cols = self.vt.cols();
        for k in 0..self.rank() {
            let mut best = 0.0f64;
            let mut sign = 1.0;
            for i in 0..rows {
                let x = self.u.get(i, k);
                if x.abs() > best {
                    best = x.abs();
                    sign = x.signum();
                }
            }
            if sign < 0.0 {
                for i in 0..rows {
                    let x = self.u.get(i, k);
                    self.u.set(i, k, -x);
                }
                for j in 0..cols {
                    let x = self.vt.get(k, j);
                    self.vt.set(k, j, -x);
                }
            }
        }
    }

    fn truncated(mut self, r: usize) -> SvdResult {
        let r = r.min(self.rank());
        if r == self.rank() {
            return self;
        }
        let rows = self.u.rows();
        let u = Matrix::from_fn(rows, r, |i, k| self.u.get(i, k));
        let cols = self.vt.cols();
        self.vt.data.truncate(r * cols);
        self.vt.rows = r;
        self.singular_values.truncate(r);
        SvdResult { u, singular_values: self.singular_values, vt: self.vt }
    }
}

/// Exact thin SVD with `k = min(rows, cols)` singular triplets in descending order.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if let Some(i) = a.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("SVD input entry {i}")));
    }
    let k = a.rows.min(a.cols);
    if k == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(a.rows, 0),
            singular_values: Vec::new(),
            vt: Matrix::zeros(0, a.cols),
        });
    }
    let fail = |reason: String| Error::SvdNonConvergence { rows: a.rows, cols: a.cols, reason };
    let dec = a.to_faer().thin_svd().map_err(|e| fail(format!("{e:?}")))?;
    let (u, v) = (dec.U(), dec.V());
    let s = dec.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut res = SvdResult {
        u: Matrix::from_fn(a.rows, k, |i, c| u[(i, order[c])]),
        singular_values: order.iter().map(|&c| s[c].max(0.0)).collect(),
        vt: Matrix::from_fn(k, a.cols, |r, j| v[(j, order[r])]),
    };
    let scale = a.frobenius_norm();
    let resid = res.reconstruct(k).sub(a)?.frobenius_norm();
    if !(resid <= 1e-10 * scale * (k as f64).sqrt()) {
        return Err(fail(format!("residual {resid:e} against norm {scale:e}")));
    }
    res.fix_signs();
    Ok(res)
}

/// Thin orthonormal basis of the column space of `a` (Householder QR).
pub fn orthonormal_columns(a: &Matrix) -> Matrix {
    qr(a).0
}

/// Thin QR factorization `a = q · r`, `q` with orthonormal columns.
pub fn qr(a: &Matrix) -> (Matrix, Matrix) {
    let dec = a.to_faer().qr();
    let k = a.rows.min(a.cols);
    let r = dec.thin_R();
    (Matrix::from_faer(dec.compute_thin_Q().as_ref()), Matrix::from_fn(k, a.cols, |i, j| r[(i, j)]))
}

/// Leading singular triplets of `a`, at least `min(max_rank, min(rows, cols))` of them.
///
/// Small problems use the exact decomposition. When `max_rank` plus the
/// oversampling is well below the smaller dimension, a randomized range finder
/// with two subspace iterations produces the leading `max_rank + 16` triplets
/// (Halko, Martinsson and Tropp); the sketch is seeded, so the result is
/// deterministic.
pub fn svd_leading(a: &Matrix, max_rank: usize, seed: u64) -> Result<SvdResult> {
    let small = a.rows.min(a.cols);
    let sketch = max_rank + SKETCH_OVERSAMPLE;
    if 2 * sketch >= small {
        return svd(a);
    }
    if let Some(i) = a.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("SVD input entry {i}")));
    }
    let mut rng = StreamRng::new(seed, 0);
    let mut omega = Matrix::zeros(a.cols, sketch);
    for pair in omega.data.chunks_mut(2) {
        let (z0, z1) = rng.normal_pair();
        pair[0] = z0;
        if pair.len() > 1 {
            pair[1] = z1;
        }
    }
    let mut q = orthonormal_columns(&a.matmul(&omega)?);
    for _ in 0..SKETCH_POWER_ITERS {
        let w = orthonormal_columns(&a.t_matmul(&q)?);
        q = orthonormal_columns(&a.matmul(&w)?);
    }
    // b = qᵀ a is sketch × cols
    let b = q.t_matmul(a)?;
    let inner = svd(&b)?;
    let mut res = SvdResult {
        u: q.matmul(&inner.u)?,
        singular_values: inner.singular_values,
        vt: inner.vt,
    };
    res.fix_signs();
    Ok(res.truncated(sketch))
}

/// Number of singular values to keep: those with `s_i / s_1 ≥ cutoff`,
/// capped at `d_max`, never fewer than one.
pub fn truncate_rank(singular_values: &[f64], cutoff: f64, d_max: usize) -> usize {
    let lead = match singular_values.first() {
        Some(&s) if s > 0.0 => s,
        _ => return 1,
    };
    let kept = singular_values.iter().take_while(|&&s| s / lead >= cutoff).count();
    kept.min(d_max).max(1)
}
