//! Symmetric positive-definite solves shared by the closed-form steps.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite system matrix, kept so
/// repeated right-hand sides reuse one factorization.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    step: &'static str,
    a: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdSolver {
    /// Factors `a`. Fails when `a` is not numerically positive definite: a
    /// pivot at round-off level relative to the largest diagonal entry is
    /// treated as singular.
    pub fn new(a: DMatrix<f64>, step: &'static str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::numeric(step, "system matrix is not square"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(step, "system matrix has non-finite entries"));
        }
        let dim = a.nrows();
        let max_diag = a.diagonal().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let chol = Cholesky::new(a.clone())
            .ok_or_else(|| Error::numeric(step, "system matrix is singular or indefinite"))?;
        let floor = dim.max(1) as f64 * f64::EPSILON * max_diag;
        let l = chol.l_dirty();
        if (0..dim).any(|i| l[(i, i)] * l[(i, i)] <= floor) {
            return Err(Error::numeric(step, "system matrix is numerically singular"));
        }
        Ok(Self { step, a, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Solves `a x = rhs` with one round of iterative refinement.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.a.nrows() {
            return Err(Error::numeric(
                self.step,
                format!(
                    "right-hand side has {} rows, system has {}",
                    rhs.nrows(),
                    self.a.nrows()
                ),
            ));
        }
        let mut x = self.chol.solve(rhs);
        let r = rhs - &self.a * &x;
        x += self.chol.solve(&r);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(self.step, "solution has non-finite entries"));
        }
        Ok(x)
    }

    /// `||a x - rhs||_F`.
    pub fn residual(&self, x: &DMatrix<f64>, rhs: &DMatrix<f64>) -> f64 {
        (&self.a * x - rhs).norm()
    }
}

/// Adds `eps` to the diagonal in place.
pub(crate) fn add_ridge(a: &mut DMatrix<f64>, eps: f64) {
    for i in 0..a.nrows().min(a.ncols()) {
        a[(i, i)] += eps;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let s = SpdSolver::new(a, "test").unwrap();
        let x = s.solve(&b).unwrap();
        assert!((x[(0, 0)] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 7.0 / 11.0).abs() < 1e-15);
        assert!(s.residual(&x, &b) < 1e-15);
    }

    #[test]
    fn detects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            SpdSolver::new(a, "test"),
            Err(Error::Numeric { step: "test", .. })
        ));
        assert!(SpdSolver::new(DMatrix::zeros(2, 2), "test").is_err());
    }
}
