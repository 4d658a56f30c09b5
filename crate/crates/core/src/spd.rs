//! Dense small-matrix kernels for symmetric positive (semi)definite work.
//!
//! Every matrix in the tracker is at most 8×8 apart from network weights, so
//! storage is a plain row-major `Vec<f64>` and the algorithms favour
//! determinism over speed: Cholesky for solves, cyclic Jacobi for symmetric
//! eigendecompositions.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense row-major matrix. Column vectors are `n × 1` matrices.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}[", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(r, c)])?;
            }
        }
        write!(f, "]")
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: {rows}x{cols} needs {} entries", rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * C);
        for r in rows {
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols: C, data }
    }

    pub fn col(values: &[f64]) -> Self {
        Mat { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul: {:?} x {:?}", self.shape(), rhs.shape());
        let mut out = Mat::zeros(self.rows, rhs.cols);
        if rhs.cols == 1 {
            for (d, row) in out.data.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
                *d = row.iter().zip(&rhs.data).map(|(a, b)| a * b).sum();
            }
            return out;
        }
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "sub: shape mismatch");
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "hadamard: shape mismatch");
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, rhs: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, rhs: &Mat) {
        assert_eq!(self.shape(), rhs.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.sum_sq())
    }

    pub fn max_abs_diff(&self, rhs: &Mat) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff: shape mismatch");
        self.data.iter().zip(&rhs.data).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max)
    }

    /// `(a + aᵀ) / 2`.
    pub fn symmetrize(&self) -> Mat {
        assert!(self.is_square(), "symmetrize: matrix must be square");
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Vertical stack of matrices sharing a column count.
    pub fn vstack(parts: &[&Mat]) -> Mat {
        let cols = parts.first().map_or(1, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack: column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Mat { rows, cols, data }
    }

    pub fn determinant2(&self) -> f64 {
        assert_eq!(self.shape(), (2, 2));
        self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)]
    }
}

/// A matrix checked to be symmetric positive definite at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMat(Mat);

impl SpdMat {
    /// Validates symmetry (1e-12 relative) and positive definiteness.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch);
        }
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        let scale = m.frobenius().max(f64::MIN_POSITIVE);
        if m.max_abs_diff(&m.transpose()) > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        cholesky(&m)?;
        Ok(SpdMat(m))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

/// Lower-triangular `L` with `L·Lᵀ = a`. Only the lower triangle of `a` is read.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch);
    }
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let ljj = libm::sqrt(d);
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L·X = b` for lower-triangular `L` by forward substitution.
pub fn solve_lower(l: &Mat, b: &Mat) -> Mat {
    assert_eq!(l.rows, b.rows, "solve_lower: shape mismatch");
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ·X = b` for lower-triangular `L` by back substitution.
pub fn solve_lower_transpose(l: &Mat, b: &Mat) -> Mat {
    assert_eq!(l.rows, b.rows, "solve_lower_transpose: shape mismatch");
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `a·X = b` for SPD `a` through its Cholesky factor.
pub fn solve_spd(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch);
    }
    let l = cholesky(a)?;
    Ok(solve_lower_transpose(&l, &solve_lower(&l, b)))
}

pub fn inverse_spd(a: &Mat) -> Result<Mat> {
    solve_spd(a, &Mat::identity(a.rows))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of the second matrix.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch);
    }
    if !a.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = a.rows;
    let mut m = a.symmetrize();
    let mut v = Mat::identity(n);
    let scale = m.frobenius();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if libm::sqrt(2.0 * off) <= 1e-12 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vectors))
}

/// `V·diag(values)·Vᵀ`.
pub fn compose_eigen(values: &[f64], vectors: &Mat) -> Mat {
    let n = values.len();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += vectors[(i, k)] * values[k] * vectors[(j, k)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Symmetric PSD square root via the eigendecomposition.
pub fn sym_sqrt(a: &Mat) -> Result<Mat> {
    let (values, vectors) = sym_eigen(a)?;
    let roots: Vec<f64> = values.iter().map(|&l| libm::sqrt(l.max(0.0))).collect();
    let s = compose_eigen(&roots, &vectors).symmetrize();
    if !s.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(s)
}

/// Symmetric part of `a` with eigenvalues clamped to at least `eps`.
///
/// Inputs whose symmetric part already has every eigenvalue `>= eps` are
/// returned as that symmetric part, untouched by a reconstruction.
pub fn symmetrize_project(a: &Mat, eps: f64) -> Mat {
    let s = a.symmetrize();
    match sym_eigen(&s) {
        Ok((values, vectors)) => {
            if values.iter().all(|&l| l >= eps) {
                s
            } else {
                let clamped: Vec<f64> = values.iter().map(|&l| l.max(eps)).collect();
                compose_eigen(&clamped, &vectors).symmetrize()
            }
        }
        Err(_) => s,
    }
}

/// Wishart draw by the Bartlett decomposition; `E[W] = dof · scale`.
pub fn sample_wishart<R: Rng + ?Sized>(dof: f64, scale: &SpdMat, rng: &mut R) -> Result<SpdMat> {
    let d = scale.dim();
    if !(dof > d as f64 - 1.0) || !dof.is_finite() {
        return Err(Error::BadDof { dof });
    }
    let l = cholesky(scale.as_mat())?;
    let mut a = Mat::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64).map_err(|_| Error::BadDof { dof })?;
        a[(i, i)] = libm::sqrt(chi.sample(rng));
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l.matmul(&a);
    let w = la.matmul(&la.transpose()).symmetrize();
    Ok(SpdMat(w))
}

/// Inverse-Wishart draw with `E[X] = param / (dof − dim − 1)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(dof: f64, param: &SpdMat, rng: &mut R) -> Result<SpdMat> {
    let scale = SpdMat(inverse_spd(param.as_mat())?.symmetrize());
    let w = sample_wishart(dof, &scale, rng)?;
    Ok(SpdMat(inverse_spd(w.as_mat())?.symmetrize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let m = Mat::from_vec(n, n, (0..n * n).map(|_| StandardNormal.sample(rng)).collect());
        m.transpose().matmul(&m).add(&Mat::identity(n))
    }

    #[test]
    fn cholesky_trivial_cases() {
        assert_eq!(cholesky(&Mat::identity(2)).unwrap(), Mat::identity(2));
        assert_eq!(cholesky(&Mat::diag(&[4.0, 9.0])).unwrap(), Mat::diag(&[2.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            let a = random_spd(n, &mut rng);
            let l = cholesky(&a).unwrap();
            let err = l.matmul(&l.transpose()).sub(&a).frobenius() / a.frobenius();
            assert!(err < 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert_eq!(cholesky(&a), Err(Error::NotPositiveDefinite));
        assert_eq!(cholesky(&Mat::zeros(2, 2)), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn sym_sqrt_cases() {
        assert!(sym_sqrt(&Mat::identity(3)).unwrap().max_abs_diff(&Mat::identity(3)) < 1e-15);
        assert!(sym_sqrt(&Mat::diag(&[4.0, 1.0])).unwrap().max_abs_diff(&Mat::diag(&[2.0, 1.0])) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let a = random_spd(n, &mut rng);
            let s = sym_sqrt(&a).unwrap();
            let err = s.matmul(&s).sub(&a).frobenius() / a.frobenius();
            assert!(err < 1e-9, "n={n} err={err}");
        }
        let bad = Mat::from_rows(&[[f64::NAN, 0.0], [0.0, 1.0]]);
        assert_eq!(sym_sqrt(&bad), Err(Error::NonFinite));
    }

    #[test]
    fn solve_spd_cases() {
        let b = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(solve_spd(&Mat::identity(2), &b).unwrap(), b);
        let inv = solve_spd(&Mat::diag(&[2.0, 4.0]), &Mat::identity(2)).unwrap();
        assert!(inv.max_abs_diff(&Mat::diag(&[0.5, 0.25])) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(5, &mut rng);
        let rhs = Mat::from_vec(5, 2, (0..10).map(|_| StandardNormal.sample(&mut rng)).collect());
        let x = solve_spd(&a, &rhs).unwrap();
        assert!(a.matmul(&x).sub(&rhs).frobenius() < 1e-9);
        assert!(solve_spd(&a, &a).unwrap().max_abs_diff(&Mat::identity(5)) < 1e-9);
    }

    #[test]
    fn project_cases() {
        let spd = Mat::from_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        assert_eq!(symmetrize_project(&spd, 1e-6), spd);

        // symmetric part [[1,1],[1,1]] has eigenvalues 0 and 2
        let p = symmetrize_project(&Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]), 0.0);
        assert!(p.max_abs_diff(&Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]])) < 1e-12);
        let (vals, _) = sym_eigen(&p).unwrap();
        assert!(vals[0] > -1e-12);

        let clamped = symmetrize_project(&Mat::diag(&[1.0, -0.5]), 1e-6);
        assert!(clamped.max_abs_diff(&Mat::diag(&[1.0, 1e-6])) < 1e-15);
    }

    #[test]
    fn jacobi_eigen_orders_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_spd(8, &mut rng);
        let (vals, vecs) = sym_eigen(&a).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!(compose_eigen(&vals, &vecs).max_abs_diff(&a) < 1e-10);
        assert!(vecs.transpose().matmul(&vecs).max_abs_diff(&Mat::identity(8)) < 1e-12);
    }

    #[test]
    fn wishart_scalar_reduction_is_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let one = SpdMat::new(Mat::identity(1)).unwrap();
        let n = 40_000;
        let mean: f64 =
            (0..n).map(|_| sample_wishart(4.0, &one, &mut rng).unwrap().as_mat()[(0, 0)]).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 0.1, "mean={mean}");
    }

    #[test]
    fn wishart_mean_diag_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let scale = SpdMat::new(Mat::diag(&[2.0, 1.0])).unwrap();
        let n = 40_000;
        let mut acc = Mat::zeros(2, 2);
        for _ in 0..n {
            acc.add_assign(sample_wishart(3.0, &scale, &mut rng).unwrap().as_mat());
        }
        let mean = acc.scale(1.0 / n as f64);
        assert!((mean[(0, 0)] - 6.0).abs() < 0.15);
        assert!((mean[(1, 1)] - 3.0).abs() < 0.08);
        assert!(mean[(0, 1)].abs() < 0.1);
    }

    #[test]
    fn samplers_reject_bad_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let i2 = SpdMat::new(Mat::identity(2)).unwrap();
        assert!(matches!(sample_wishart(1.0, &i2, &mut rng), Err(Error::BadDof { .. })));
        assert!(matches!(sample_inverse_wishart(0.5, &i2, &mut rng), Err(Error::BadDof { .. })));
    }

    #[test]
    fn inverse_wishart_scalar_mean() {
        // 1-D reduction is inverse-gamma(4, 3), mean 3/3
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = SpdMat::new(Mat::diag(&[6.0])).unwrap();
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_inverse_wishart(8.0, &p, &mut rng).unwrap().as_mat()[(0, 0)])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean={mean}");
    }

    #[test]
    fn spd_mat_validation() {
        assert!(SpdMat::new(Mat::identity(3)).is_ok());
        assert_eq!(SpdMat::new(Mat::from_rows(&[[1.0, 0.5], [0.0, 1.0]])), Err(Error::NotPositiveDefinite));
        assert_eq!(SpdMat::new(Mat::zeros(2, 3)), Err(Error::ShapeMismatch));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn spd_strategy() -> impl Strategy<Value = Mat> {
            (1usize..=6, proptest::collection::vec(-3.0f64..3.0, 36)).prop_map(|(n, v)| {
                let m = Mat::from_vec(n, n, v[..n * n].to_vec());
                m.transpose().matmul(&m).add(&Mat::identity(n).scale(0.1))
            })
        }

        proptest! {
            #[test]
            fn solve_self_is_identity(a in spd_strategy()) {
                let n = a.rows();
                prop_assert!(solve_spd(&a, &a).unwrap().max_abs_diff(&Mat::identity(n)) < 1e-9);
            }

            #[test]
            fn sqrt_squares_back(a in spd_strategy()) {
                let s = sym_sqrt(&a).unwrap();
                prop_assert!(s.matmul(&s).sub(&a).frobenius() / a.frobenius() < 1e-9);
            }

            #[test]
            fn project_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 9), eps in 1e-6f64..1e-2) {
                let a = Mat::from_vec(3, 3, v);
                let once = symmetrize_project(&a, eps);
                let twice = symmetrize_project(&once, eps);
                prop_assert!(once.max_abs_diff(&twice) < 1e-10);
                let (vals, _) = sym_eigen(&once).unwrap();
                prop_assert!(vals[0] >= eps * (1.0 - 1e-9) - 1e-12);
            }
        }
    }
}
