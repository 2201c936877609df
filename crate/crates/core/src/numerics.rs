//! Dense row-major matrices and the SVD-based routines the fits rely on.
//!
//! The decompositions themselves are delegated to `faer`; everything that
//! depends on the cutoff policy (pseudoinverse, rank, margins) lives here.

use std::fmt;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use crate::error::{Error, Result};

/// Default relative singular-value cutoff.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Dense matrix of `f64` stored row-major.
#[derive(Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, checking the entry count.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Panics on ragged input; intended for literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Builds a `len × columns.len()` matrix whose j-th column is `columns[j]`.
    pub fn from_columns<C: AsRef<[f64]>>(len: usize, columns: &[C]) -> Result<Self> {
        let mut m = Matrix::zeros(len, columns.len());
        for (j, c) in columns.iter().enumerate() {
            m.set_column(j, c.as_ref())?;
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.rows || j >= self.cols {
            return Err(Error::invalid(format!(
                "column {j} of length {} does not fit a {}x{} matrix",
                values.len(),
                self.rows,
                self.cols
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Matrix product. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v`. Panics on dimension mismatch.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`. Panics on dimension mismatch.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Stacks `self` on top of `below`.
    pub fn vstack(&self, below: &Matrix) -> Matrix {
        assert_eq!(self.cols, below.cols, "vstack column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&below.data);
        Matrix {
            rows: self.rows + below.rows,
            cols: self.cols,
            data,
        }
    }

    /// Places `right` to the right of `self`.
    pub fn hstack(&self, right: &Matrix) -> Matrix {
        assert_eq!(self.rows, right.rows, "hstack row mismatch");
        let cols = self.cols + right.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(right.row(i));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Copies the block of `rows` × `cols` starting at (`r0`, `c0`).
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            out.data[i * cols..(i + 1) * cols]
                .copy_from_slice(&self.row(r0 + i)[c0..c0 + cols]);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    fn from_faer(m: &Mat<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what}: non-finite entries")))
    }
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(m, "singular_values")?;
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(Vec::new());
    }
    let mut s = m
        .to_faer()
        .singular_values()
        .map_err(|e| Error::NumericalDivergence(format!("SVD: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Moore–Penrose pseudoinverse. Singular values at or below `tol × σ_max`
/// are treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite(m, "pinv")?;
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("pinv tolerance {tol} must be >= 0")));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let svd = m
        .to_faer()
        .thin_svd()
        .map_err(|e| Error::NumericalDivergence(format!("SVD: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let smax = s.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = tol * smax;

    let mut out = Matrix::zeros(cols, rows);
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        // out += v_k · u_kᵀ / σ_k
        for i in 0..cols {
            let vi = v[(i, k)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..rows {
                out[(i, j)] += vi * u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Number of singular values strictly above `tol × σ_max`.
pub fn row_rank(m: &Matrix, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > tol * smax).count())
}

/// Inverse of a square nonsingular matrix.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    ensure_finite(m, "inverse")?;
    if m.rows() != m.cols() {
        return Err(Error::invalid(format!(
            "inverse of non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let s = singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if s.last().map_or(true, |&smin| smin <= f64::EPSILON * m.rows() as f64 * smax) {
        return Err(Error::invalid("inverse of singular matrix"));
    }
    Ok(Matrix::from_faer(&m.to_faer().full_piv_lu().inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn pinv_of_identity_is_identity() {
        let p = pinv(&Matrix::identity(3), 1e-12).unwrap();
        assert_eq!(p, Matrix::identity(3));
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let m = Matrix::from_rows(&[[2.0, 0.0], [0.0, 0.0]]);
        let p = pinv(&m, 1e-12).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(p[(0, 1)], 0.0);
        assert_eq!(p[(1, 0)], 0.0);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn pinv_right_inverse_of_full_row_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random(3, 5, &mut rng);
        let mm = m.matmul(&pinv(&m, DEFAULT_RANK_TOL).unwrap());
        assert!(mm.sub(&Matrix::identity(3)).max_abs() < 1e-10);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = Matrix::from_rows(&[[1.0, f64::NAN]]);
        assert!(matches!(pinv(&m, 1e-10), Err(Error::InvalidInput(_))));
        assert!(pinv(&Matrix::identity(2), -1.0).is_err());
    }

    #[test]
    fn penrose_conditions_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(r, c) in &[(1, 1), (4, 7), (9, 3), (16, 16), (33, 20), (64, 64), (10, 64)] {
            let mut m = random(r, c, &mut rng);
            if r > 2 && c > 2 {
                // force a rank drop: last row = first + second
                let extra: Vec<f64> = (0..c).map(|j| m[(0, j)] + m[(1, j)]).collect();
                for (j, v) in extra.into_iter().enumerate() {
                    m[(r - 1, j)] = v;
                }
            }
            let p = pinv(&m, DEFAULT_RANK_TOL).unwrap();
            assert!(rel(&m.matmul(&p).matmul(&m), &m) < 1e-9, "{r}x{c} MPM {} {:?}", rel(&m.matmul(&p).matmul(&m), &m), singular_values(&m));
            assert!(rel(&p.matmul(&m).matmul(&p), &p) < 1e-9, "{r}x{c} PMP");
            let mp = m.matmul(&p);
            assert!(rel(&mp.transpose(), &mp) < 1e-9, "{r}x{c} MP sym");
            let pm = p.matmul(&m);
            assert!(rel(&pm.transpose(), &pm) < 1e-9, "{r}x{c} PM sym");
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Matrix::zeros(2, 2).frobenius_norm(), 0.0);
        assert_eq!(Matrix::from_rows(&[[3.0, 4.0]]).frobenius_norm(), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random(4, 4, &mut rng);
        let via_trace = m.transpose().matmul(&m).trace().sqrt();
        assert!((m.frobenius_norm() - via_trace).abs() < 1e-12);
    }

    #[test]
    fn frobenius_matches_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(r, c) in &[(3, 5), (8, 8), (20, 6)] {
            let m = random(r, c, &mut rng);
            let s2: f64 = singular_values(&m).unwrap().iter().map(|s| s * s).sum();
            let f2 = m.frobenius_norm().powi(2);
            assert!((f2 - s2).abs() / f2 < 1e-10);
        }
    }

    #[test]
    fn row_rank_examples() {
        assert_eq!(row_rank(&Matrix::identity(3), 1e-10).unwrap(), 3);
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(row_rank(&m, 1e-10).unwrap(), 1);
        assert_eq!(row_rank(&Matrix::zeros(2, 3), 1e-10).unwrap(), 0);
    }

    #[test]
    fn block_and_stacking() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[5.0, 6.0]]);
        let v = a.vstack(&b);
        assert_eq!(v.shape(), (3, 2));
        assert_eq!(v.row(2), &[5.0, 6.0]);
        let h = a.hstack(&a);
        assert_eq!(h.row(1), &[3.0, 4.0, 3.0, 4.0]);
        assert_eq!(h.block(0, 1, 2, 2), Matrix::from_rows(&[[2.0, 1.0], [4.0, 3.0]]));
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn inverse_roundtrip() {
        let a = Matrix::from_rows(&[[4.0, 1.0], [2.0, 3.0]]);
        let ai = inverse(&a).unwrap();
        assert!(a.matmul(&ai).sub(&Matrix::identity(2)).max_abs() < 1e-14);
        assert!(inverse(&Matrix::zeros(2, 2)).is_err());
    }
}
