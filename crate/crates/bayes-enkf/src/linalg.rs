//! Dense symmetric linear algebra helpers used by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// A symmetric positive definite factorization together with the number of
/// jitter escalations that were needed to obtain it.
pub struct SymFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitters: usize,
}

impl SymFactor {
    pub fn log_det(&self) -> f64 {
        self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0
    }

    pub fn solve_vec(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    /// Log density of N(mean, Sigma) at y, where self factors Sigma.
    pub fn mvn_logpdf(&self, y: &Vector, mean: &Vector) -> f64 {
        let m = y.len() as f64;
        let e = y - mean;
        let z = self.chol.l_dirty().solve_lower_triangular(&e).unwrap();
        -0.5 * m * LN_2PI - 0.5 * self.log_det() - 0.5 * z.dot(&z)
    }

    /// Draw from N(mean, Sigma) using the stored factor.
    pub fn sample<R: Rng>(&self, mean: &Vector, rng: &mut R) -> Vector {
        let z = standard_normal_vector(mean.len(), rng);
        mean + self.chol.l_dirty().lower_triangle() * z
    }
}

/// Cholesky-factor a symmetric matrix, escalating a diagonal jitter of
/// 1e-10 * tr / m by factors of 10 (up to 3 escalations) on failure.
pub fn factor_spd(mat: &Matrix, what: &'static str) -> Result<SymFactor> {
    let m = mat.nrows();
    if m == 0 {
        // Degenerate 0-dimensional case: the trivial factor.
        return Ok(SymFactor {
            chol: Cholesky::new(Matrix::zeros(0, 0)).unwrap(),
            jitters: 0,
        });
    }
    let base = 1e-10 * mat.trace().abs().max(1e-300) / m as f64;
    let mut jitter = 0.0;
    for attempt in 0..4 {
        let trial = if jitter == 0.0 {
            mat.clone()
        } else {
            let mut t = mat.clone();
            for i in 0..m {
                t[(i, i)] += jitter;
            }
            t
        };
        if let Some(chol) = Cholesky::new(trial) {
            return Ok(SymFactor {
                chol,
                jitters: attempt,
            });
        }
        jitter = if jitter == 0.0 { base } else { jitter * 10.0 };
    }
    Err(Error::Conditioning {
        what,
        min_eig: min_symmetric_eigenvalue(mat),
        jitters: 3,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(mat: &Matrix) -> f64 {
    if mat.nrows() == 0 {
        return 0.0;
    }
    mat.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Sample covariance about the mean with divisor N-1.
pub fn sample_covariance(members: &[Vector]) -> Result<(Vector, Matrix)> {
    let n_members = members.len();
    if n_members < 2 {
        return Err(Error::InsufficientEnsemble(n_members));
    }
    let dim = members[0].len();
    let mut mean = Vector::zeros(dim);
    for x in members {
        mean += x;
    }
    mean /= n_members as f64;
    let mut cov = Matrix::zeros(dim, dim);
    for x in members {
        let d = x - &mean;
        cov.syger(1.0, &d, &d, 1.0);
    }
    cov /= (n_members - 1) as f64;
    // syger fills the lower triangle; mirror it.
    for i in 0..dim {
        for j in (i + 1)..dim {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    Ok((mean, cov))
}

pub fn standard_normal_vector<R: Rng>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// log(sum(exp(x))) computed with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factor_recovers_logdet_and_solve() {
        let mat = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = factor_spd(&mat, "test").unwrap();
        assert_eq!(f.jitters, 0);
        assert_relative_eq!(f.log_det(), (4.0f64 * 3.0 - 1.0).ln(), epsilon = 1e-12);
        let b = Vector::from_row_slice(&[1.0, 2.0]);
        let x = f.solve_vec(&b);
        assert_relative_eq!((mat * x - b).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jitter_rescues_near_singular() {
        // Rank-1 matrix: exactly singular, jitter must kick in.
        let v = Vector::from_row_slice(&[1.0, 2.0, 3.0]);
        let mat = &v * v.transpose();
        let f = factor_spd(&mat, "test").unwrap();
        assert!(f.jitters >= 1);
    }

    #[test]
    fn conditioning_error_on_indefinite() {
        let mat = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        match factor_spd(&mat, "test") {
            Err(Error::Conditioning { min_eig, .. }) => assert!(min_eig < -4.9),
            Err(other) => panic!("expected conditioning error, got {other}"),
            Ok(_) => panic!("expected conditioning error, got a factorization"),
        }
    }

    #[test]
    fn mvn_logpdf_matches_scalar_gaussian() {
        let sigma2 = 2.0;
        let f = factor_spd(&Matrix::from_element(1, 1, sigma2), "test").unwrap();
        let got = f.mvn_logpdf(&Vector::from_element(1, 0.0), &Vector::from_element(1, 0.0));
        let want = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
        assert_relative_eq!(got, want, epsilon = 1e-14);
    }

    #[test]
    fn sample_covariance_identical_members_is_zero() {
        let members = vec![Vector::from_row_slice(&[1.0, -2.0]); 5];
        let (_, cov) = sample_covariance(&members).unwrap();
        assert_eq!(cov.norm(), 0.0);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_relative_eq!(
            log_sum_exp(&[-1000.0, -1000.0]),
            -1000.0 + std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
