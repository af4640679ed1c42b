//! Dense Cholesky factorization with ridge escalation, and the Gaussian
//! primitives built on it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest ridge, relative to the mean diagonal.
pub const RIDGE_START: f64 = 1e-8;
/// Largest ridge tried before giving up.
pub const RIDGE_MAX: f64 = 1e-4;

/// Lower Cholesky factor of a symmetric positive definite matrix, possibly
/// after adding a ridge to its diagonal.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    ridge: f64,
}

impl Factor {
    /// Factorizes `a` as given; on failure retries with a diagonal ridge of
    /// `1e-8 · mean(diag)`, escalating ×10 up to `1e-4 · mean(diag)`.
    pub fn new(a: DMatrix<f64>, context: &str) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Domain(format!("{context}: matrix is not square")));
        }
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self { chol, ridge: 0.0 });
        }
        let mean_diag = if n == 0 { 0.0 } else { a.diagonal().sum() / n as f64 };
        let mut rel = RIDGE_START;
        let mut ridge = rel * mean_diag;
        while rel <= RIDGE_MAX * (1.0 + 1e-9) && mean_diag > 0.0 {
            ridge = rel * mean_diag;
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += ridge;
            }
            if let Some(chol) = Cholesky::new(b) {
                return Ok(Self { chol, ridge });
            }
            rel *= 10.0;
        }
        Err(Error::Factorization {
            context: context.to_string(),
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Ridge that had to be added (0 when none).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn ln_det(&self) -> f64 {
        self.chol.ln_determinant()
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        l.solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        l.solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        let mut out = DVector::zeros(n);
        // l_dirty's strict upper triangle is garbage; read only i >= j.
        for j in 0..n {
            let zj = z[j];
            if zj == 0.0 {
                continue;
            }
            for i in j..n {
                out[i] += l[(i, j)] * zj;
            }
        }
        out
    }

    /// `r' A⁻¹ r`.
    pub fn quad_form(&self, r: &DVector<f64>) -> f64 {
        self.solve_lower_vec(r).norm_squared()
    }

    /// Log density of `N(0, A)` at `r`.
    pub fn gaussian_log_density(&self, r: &DVector<f64>) -> f64 {
        let n = r.len() as f64;
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + self.ln_det() + self.quad_form(r))
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_spd_without_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = Factor::new(a.clone(), "test").unwrap();
        assert_eq!(f.ridge(), 0.0);
        let l = f.l();
        assert!((&l * l.transpose() - a).norm() < 1e-14);
        assert!((f.ln_det() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_gets_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = Factor::new(a, "test").unwrap();
        assert!(f.ridge() > 0.0 && f.ridge() <= 1e-4);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            Factor::new(a, "test"),
            Err(Error::Factorization { .. })
        ));
    }

    #[test]
    fn mul_lower_matches_dense_product() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = Factor::new(a, "test").unwrap();
        let z = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        assert!((f.mul_lower(&z) - f.l() * &z).norm() < 1e-14);
    }
}
