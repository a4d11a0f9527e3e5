//! Small dense linear algebra for the per-anchor affine fits.
//!
//! Everything here runs in `f64` regardless of the training precision. The
//! systems are at most `k × k` with `k` in the tens, so a plain Cholesky
//! factorization with a diagonal-shift retry is all that is needed.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidInput(format!(
                "matrix shape {rows}x{cols} does not match {} entries",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has length {} but row 0 has length {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Selects the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.row_iter().map(|r| dot(r, v)).collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gram matrix `diffs · diffsᵀ` of the rows of `diffs`.
///
/// Only the upper triangle is computed; the lower one is mirrored so the
/// result is bitwise symmetric.
pub fn gram(diffs: &DenseMatrix) -> Result<DenseMatrix> {
    if let Some(pos) = diffs.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite difference entry at flat index {pos}"
        )));
    }
    let k = diffs.rows();
    let mut s = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = dot(diffs.row(i), diffs.row(j));
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Relative pivot floor below which the matrix is treated as singular.
    const PIVOT_TOL: f64 = 1e-12;

    /// Factors a symmetric matrix; `None` when a pivot falls below the
    /// relative floor (matrix singular or indefinite in working precision).
    pub fn factor(a: &DenseMatrix) -> Option<Self> {
        let n = a.rows();
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let floor = Self::PIVOT_TOL * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > floor) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for p in 0..j {
                    v -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = v / ljj;
            }
        }
        Some(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L·Lᵀ·x = rhs` by forward then back substitution.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(rhs.len(), n);
        let l = &self.lower;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let mut v = x[i];
            for p in 0..i {
                v -= l[i * n + p] * x[p];
            }
            x[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for p in (i + 1)..n {
                v -= l[p * n + i] * x[p];
            }
            x[i] = v / l[i * n + i];
        }
        x
    }
}

/// Cholesky factor of `S + shift·I`, where `shift = eps·trace(S)/k`
/// (or `eps` itself when the trace vanishes).
#[derive(Debug, Clone)]
pub struct RegularizedCholesky {
    factor: Cholesky,
    /// Relative regularizer actually used; may exceed the requested one
    /// after a failed factorization.
    pub eps: f64,
    /// Absolute diagonal shift added to `S`.
    pub shift: f64,
    /// `true` when the shift scales with `trace(S)`.
    pub trace_relative: bool,
    pub conditioning_applied: bool,
}

impl RegularizedCholesky {
    /// First relative shift tried when the caller asked for none.
    const FALLBACK_START: f64 = 1e-12;
    const FALLBACK_MAX: f64 = 1e3;

    pub fn new(s: &DenseMatrix, eps: f64) -> Result<Self> {
        check_symmetric(s)?;
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "regularizer eps must be finite and >= 0, got {eps}"
            )));
        }
        let k = s.rows();
        if k == 0 {
            return Err(Error::InvalidInput("empty system".into()));
        }
        if let Some(i) = (0..k).find(|&i| !(s[(i, i)] >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semi-definite: diagonal entry {i} is {}",
                s[(i, i)]
            )));
        }
        let trace = s.trace();
        let trace_relative = trace > 0.0;
        let scale = if trace_relative {
            trace / k as f64
        } else {
            1.0
        };

        let mut current = eps;
        let mut retried = false;
        loop {
            let shift = current * scale;
            let shifted = if shift > 0.0 {
                let mut c = s.clone();
                for i in 0..k {
                    c[(i, i)] += shift;
                }
                c
            } else {
                s.clone()
            };
            if let Some(factor) = Cholesky::factor(&shifted) {
                return Ok(Self {
                    factor,
                    eps: current,
                    shift,
                    trace_relative,
                    conditioning_applied: retried || current > 0.0,
                });
            }
            retried = true;
            current = if current == 0.0 {
                Self::FALLBACK_START
            } else {
                current * 10.0
            };
            if current > Self::FALLBACK_MAX {
                return Err(Error::SingularSystem { dim: k });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }
}

fn check_symmetric(s: &DenseMatrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let max_abs = s.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * max_abs;
    for i in 0..s.rows() {
        for j in (i + 1)..s.cols() {
            if (s[(i, j)] - s[(j, i)]).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Result of [`solve_spd_regularized`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSolveResult {
    pub solution: Vec<f64>,
    pub conditioning_applied: bool,
    pub regularizer_eps: f64,
}

/// Solves `(S + eps·(trace(S)/k)·I)·x = rhs` for symmetric PSD `S`.
///
/// If the factorization fails the relative shift is raised by decades
/// (starting at `1e-12` when `eps == 0`) until it succeeds.
pub fn solve_spd_regularized(
    s: &DenseMatrix,
    rhs: &[f64],
    eps: f64,
) -> Result<SymmetricSolveResult> {
    if rhs.len() != s.rows() {
        return Err(Error::InvalidInput(format!(
            "rhs length {} does not match system dimension {}",
            rhs.len(),
            s.rows()
        )));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rhs".into()));
    }
    let chol = RegularizedCholesky::new(s, eps)?;
    let solution = chol.solve(rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { dim: s.rows() });
    }
    Ok(SymmetricSolveResult {
        solution,
        conditioning_applied: chol.conditioning_applied,
        regularizer_eps: chol.eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    /// Gauss-Jordan inverse with partial pivoting; test-only oracle.
    fn dense_inverse(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = DenseMatrix::identity(n);
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| m[(x, c)].abs().total_cmp(&m[(y, c)].abs()))
                .unwrap();
            for j in 0..n {
                let (t1, t2) = (m[(c, j)], m[(p, j)]);
                m[(c, j)] = t2;
                m[(p, j)] = t1;
                let (t1, t2) = (inv[(c, j)], inv[(p, j)]);
                inv[(c, j)] = t2;
                inv[(p, j)] = t1;
            }
            let d = m[(c, c)];
            for j in 0..n {
                m[(c, j)] /= d;
                inv[(c, j)] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[(r, c)];
                    for j in 0..n {
                        m[(r, j)] -= f * m[(c, j)];
                        inv[(r, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn gram_single_row() {
        let d = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(gram(&d).unwrap(), DenseMatrix::from_rows(&[[1.0]]).unwrap());
    }

    #[test]
    fn gram_orthonormal_rows_is_identity() {
        let d = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(gram(&d).unwrap(), DenseMatrix::identity(2));
    }

    #[test]
    fn gram_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_matrix(&mut rng, 4, 3);
        let s = gram(&d).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += d[(i, c)] * d[(j, c)];
                }
                assert!((s[(i, j)] - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_rejects_non_finite() {
        // DenseMatrix::new refuses NaN, so build the bad matrix by hand.
        let d = DenseMatrix {
            rows: 1,
            cols: 2,
            data: vec![f64::NAN, 0.0],
        };
        assert!(matches!(gram(&d), Err(Error::InvalidInput(_))));
    }

    /// Agreement to a few ulps.
    fn assert_close(got: &[f64], expect: &[f64]) {
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(expect) {
            assert!(
                (g - e).abs() <= 4.0 * f64::EPSILON * e.abs(),
                "{got:?} vs {expect:?}"
            );
        }
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let r = solve_spd_regularized(&DenseMatrix::identity(2), &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(r.solution, vec![1.0, 1.0]);
        assert!(!r.conditioning_applied);

        let s = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        let r = solve_spd_regularized(&s, &[1.0, 1.0], 0.0).unwrap();
        assert_close(&r.solution, &[0.5, 0.5]);
    }

    #[test]
    fn solve_rank_one_with_regularizer_matches_explicit_inverse() {
        // S = [[1,1],[1,1]], trace 2, k 2 -> shift = eps
        let s = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let eps = 1e-3;
        let r = solve_spd_regularized(&s, &[1.0, 1.0], eps).unwrap();
        assert!(r.conditioning_applied);
        let (a, b, c, d) = (1.0 + eps, 1.0, 1.0, 1.0 + eps);
        let det = a * d - b * c;
        let x0 = (d * 1.0 - b * 1.0) / det;
        let x1 = (-c * 1.0 + a * 1.0) / det;
        assert!((r.solution[0] - x0).abs() < 1e-9);
        assert!((r.solution[1] - x1).abs() < 1e-9);
    }

    #[test]
    fn singular_without_eps_falls_back() {
        let s = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let r = solve_spd_regularized(&s, &[1.0, 1.0], 0.0).unwrap();
        assert!(r.conditioning_applied);
        assert!(r.regularizer_eps > 0.0);
        assert!(r.solution.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_matrix_uses_absolute_shift() {
        let s = DenseMatrix::zeros(3, 3);
        let r = solve_spd_regularized(&s, &[1.0, 2.0, 3.0], 0.5).unwrap();
        assert_close(&r.solution, &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = DenseMatrix::identity(2);
        assert!(solve_spd_regularized(&s, &[1.0], 0.0).is_err());
        assert!(solve_spd_regularized(&s, &[1.0, 1.0], -1.0).is_err());
        let asym = DenseMatrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(solve_spd_regularized(&asym, &[1.0, 1.0], 0.0).is_err());
        let negative = DenseMatrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert!(matches!(
            solve_spd_regularized(&negative, &[1.0, 1.0], 0.0),
            Err(Error::InvalidInput(_))
        ));
        // Eigenvalues 1 ± 2000: no shift up to the fallback ceiling helps.
        let indefinite = DenseMatrix::from_rows(&[[1.0, 2000.0], [2000.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_spd_regularized(&indefinite, &[1.0, 1.0], 0.0),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn well_conditioned_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [1usize, 2, 5, 16, 32] {
            let m = random_matrix(&mut rng, k, k + 4);
            let mut s = gram(&m).unwrap();
            for i in 0..k {
                s[(i, i)] += 1.0;
            }
            let rhs: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = solve_spd_regularized(&s, &rhs, 0.0).unwrap().solution;
            let oracle = dense_inverse(&s).mat_vec(&rhs);
            let scale = l2_norm(&oracle);
            for (a, b) in x.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10 * scale, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]), 0.0);
    }

    proptest! {
        #[test]
        fn l2_norm_matches_compensated_sum(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            // Kahan summation in reverse order as an independent accumulation.
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for x in v.iter().rev() {
                let y = x * x - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            let oracle = sum.sqrt();
            prop_assert!((l2_norm(&v) - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }

        #[test]
        fn gram_is_bitwise_symmetric(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = gram(&random_matrix(&mut rng, rows, cols)).unwrap();
            for i in 0..rows {
                for j in 0..rows {
                    prop_assert_eq!(s[(i, j)].to_bits(), s[(j, i)].to_bits());
                }
            }
        }

        #[test]
        fn regularized_solve_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..8);
            let dim = rng.random_range(1..8);
            let s = gram(&random_matrix(&mut rng, k, dim)).unwrap();
            let rhs: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled = DenseMatrix::new(k, k, s.as_slice().iter().map(|v| v * c).collect()).unwrap();
            let scaled_rhs: Vec<f64> = rhs.iter().map(|v| v * c).collect();
            let x = solve_spd_regularized(&s, &rhs, 1e-3).unwrap().solution;
            let y = solve_spd_regularized(&scaled, &scaled_rhs, 1e-3).unwrap().solution;
            let scale = l2_norm(&x).max(1.0);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-9 * scale, "{} vs {}", a, b);
            }
        }
    }
}
