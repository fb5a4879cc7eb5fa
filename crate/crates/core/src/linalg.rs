//! Dense linear-algebra helpers shared by the factor model and the portfolio code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Gram matrices with a condition number above this get a ridge term.
pub const MAX_GRAM_CONDITION: f64 = 1e10;
/// Ridge scale relative to the mean diagonal of the Gram matrix.
pub const GRAM_RIDGE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsOptions {
    pub ridge_fallback: bool,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self { ridge_fallback: true }
    }
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
/// Returns infinity when the smallest eigenvalue is not positive.
pub fn spd_condition(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Factorised `Z'Z` for one cross-section, used both to compute
/// characteristic-managed portfolio returns and to map factor-space
/// weights back onto assets.
#[derive(Debug, Clone)]
pub struct GramSolver {
    chol: Cholesky<f64, Dyn>,
    ridge: f64,
    condition: f64,
}

impl GramSolver {
    pub fn new(z: &Matrix, opts: OlsOptions) -> Result<Self> {
        let p = z.ncols();
        if p == 0 {
            return Err(Error::Shape("design matrix has no columns".into()));
        }
        let gram = z.transpose() * z;
        Self::from_gram(gram, opts)
    }

    pub fn from_gram(gram: Matrix, opts: OlsOptions) -> Result<Self> {
        let p = gram.ncols();
        let condition = spd_condition(&gram);
        let mut ridge = 0.0;
        let mut a = gram;
        if condition > MAX_GRAM_CONDITION {
            if !opts.ridge_fallback {
                return Err(Error::SingularDesign { cond: condition });
            }
            ridge = GRAM_RIDGE_SCALE * a.trace() / p as f64;
            if !(ridge > 0.0) {
                return Err(Error::SingularDesign { cond: condition });
            }
            for i in 0..p {
                a[(i, i)] += ridge;
            }
        }
        let chol = Cholesky::new(a).ok_or(Error::SingularDesign { cond: condition })?;
        Ok(Self { chol, ridge, condition })
    }

    /// `(Z'Z)^{-1} v`, with the ridge term included when the fallback fired.
    pub fn solve(&self, v: &Vector) -> Vector {
        self.chol.solve(v)
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }
}

/// Cross-sectional least squares `b = (Z'Z)^{-1} Z'r`.
pub fn cross_sectional_ols(z: &Matrix, r: &Vector, opts: OlsOptions) -> Result<Vector> {
    if z.nrows() != r.len() {
        return Err(Error::Shape(format!("Z has {} rows but r has {} entries", z.nrows(), r.len())));
    }
    let solver = GramSolver::new(z, opts)?;
    Ok(solver.solve(&(z.transpose() * r)))
}

/// Solve `A x = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    Cholesky::new(a.clone()).map(|c| c.solve(b))
}

/// Unbiased sample covariance of the columns of `x` (rows are observations).
pub fn sample_covariance(x: &Matrix) -> Matrix {
    let n = x.nrows();
    let k = x.ncols();
    let mut cov = Matrix::zeros(k, k);
    if n < 2 {
        return cov;
    }
    let means: Vec<f64> = (0..k).map(|j| x.column(j).sum() / n as f64).collect();
    for a in 0..k {
        for b in a..k {
            let mut s = 0.0;
            for t in 0..n {
                s += (x[(t, a)] - means[a]) * (x[(t, b)] - means[b]);
            }
            let v = s / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Empirical quantile with linear interpolation between order statistics
/// (the `numpy.quantile` default). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * alpha.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_matrix(rng: &mut RngStream, n: usize, p: usize) -> Matrix {
        Matrix::from_fn(n, p, |_, _| rng.normal())
    }

    #[test]
    fn identity_design_returns_targets() {
        let z = Matrix::identity(3, 3);
        let r = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = cross_sectional_ols(&z, &r, OlsOptions::default()).unwrap();
        assert!((b - &r).amax() < 1e-14);
    }

    #[test]
    fn intercept_only_is_mean() {
        let z = Matrix::from_element(4, 1, 1.0);
        let r = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let b = cross_sectional_ols(&z, &r, OlsOptions::default()).unwrap();
        assert!((b[0] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn residual_is_orthogonal_to_design() {
        let mut rng = RngStream::new(11);
        for _ in 0..50 {
            let z = random_matrix(&mut rng, 40, 5);
            let r = Vector::from_fn(40, |_, _| rng.normal());
            let b = cross_sectional_ols(&z, &r, OlsOptions::default()).unwrap();
            let resid = &r - &z * &b;
            let lhs = (z.transpose() * resid).amax();
            let rhs = (z.transpose() * &r).amax();
            assert!(lhs <= 1e-8 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn collinear_design_uses_ridge_or_errors() {
        let mut z = Matrix::zeros(6, 2);
        for i in 0..6 {
            z[(i, 0)] = i as f64;
            z[(i, 1)] = 2.0 * i as f64;
        }
        let r = Vector::from_fn(6, |i, _| i as f64);
        let err = cross_sectional_ols(&z, &r, OlsOptions { ridge_fallback: false }).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { .. }));
        let solver = GramSolver::new(&z, OlsOptions::default()).unwrap();
        assert!(solver.ridge() > 0.0);
        let b = solver.solve(&(z.transpose() * &r));
        assert!(b.iter().all(|v| v.is_finite()));
        // ridge solution still reproduces r along the shared direction
        let fitted = &z * &b;
        assert!((fitted - &r).amax() < 1e-4);
    }

    #[test]
    fn fewer_assets_than_characteristics_falls_back_to_ridge() {
        let mut rng = RngStream::new(3);
        let z = random_matrix(&mut rng, 3, 5);
        let r = Vector::from_fn(3, |_, _| rng.normal());
        let b = cross_sectional_ols(&z, &r, OlsOptions::default()).unwrap();
        assert_eq!(b.len(), 5);
    }

    #[test]
    fn covariance_of_known_sample() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let c = sample_covariance(&x);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((c[(0, 1)] - 2.0).abs() < 1e-15);
        assert!((c[(1, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }
}
