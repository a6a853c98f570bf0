//! Normal (Laplace-style) approximation of the parameter posterior and
//! the conjugate inverse-gamma recursion for a scalar variance multiplier.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use super::optimize::{covariance_from_hessian, finite_difference_hessian, nelder_mead_max};
use super::prior::{PriorFamily, PriorSpec};
use crate::error::{Error, Result};
use crate::linalg::{factor_spd, min_symmetric_eigenvalue, Matrix, Vector};

/// Gaussian parameter posterior with per-coordinate support bounds.
/// The density is the unrestricted normal; bounds are enforced when
/// sampling (rejection) and when optimizing (log/logit transforms).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalParamPosterior {
    mean: Vector,
    cov: Matrix,
    support: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NormalUpdateDiag {
    pub ridge: f64,
    pub iterations: usize,
    pub converged_runs: usize,
}

#[derive(Clone, Copy)]
enum Transform {
    Identity,
    LowerBounded(f64),
    UpperBounded(f64),
    Box(f64, f64),
}

impl Transform {
    fn from_support(lo: f64, hi: f64) -> Self {
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => Transform::Identity,
            (true, false) => Transform::LowerBounded(lo),
            (false, true) => Transform::UpperBounded(hi),
            (true, true) => Transform::Box(lo, hi),
        }
    }

    fn to_unconstrained(&self, theta: f64) -> f64 {
        match *self {
            Transform::Identity => theta,
            Transform::LowerBounded(lo) => (theta - lo).max(1e-300).ln(),
            Transform::UpperBounded(hi) => (hi - theta).max(1e-300).ln(),
            Transform::Box(lo, hi) => {
                let t = ((theta - lo) / (hi - theta)).max(1e-300);
                t.ln()
            }
        }
    }

    fn to_natural(&self, phi: f64) -> f64 {
        match *self {
            Transform::Identity => phi,
            Transform::LowerBounded(lo) => lo + phi.exp(),
            Transform::UpperBounded(hi) => hi - phi.exp(),
            Transform::Box(lo, hi) => {
                let e = phi.exp();
                (lo + hi * e) / (1.0 + e)
            }
        }
    }

    /// d theta / d phi at the natural value, used to scale simplex steps.
    fn scale_at(&self, theta: f64) -> f64 {
        match *self {
            Transform::Identity => 1.0,
            Transform::LowerBounded(lo) => (theta - lo).max(1e-12),
            Transform::UpperBounded(hi) => (hi - theta).max(1e-12),
            Transform::Box(lo, hi) => ((theta - lo) * (hi - theta) / (hi - lo)).max(1e-12),
        }
    }
}

impl NormalParamPosterior {
    pub fn new(mean: Vector, cov: Matrix, support: Vec<(f64, f64)>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Dimension {
                what: "normal posterior covariance",
                expected: p,
                got: cov.nrows(),
            });
        }
        if support.len() != p {
            return Err(Error::Dimension {
                what: "normal posterior support",
                expected: p,
                got: support.len(),
            });
        }
        let min_eig = min_symmetric_eigenvalue(&cov);
        if min_eig <= 0.0 {
            return Err(Error::NotPsd {
                what: "normal posterior covariance",
                min_eig,
            });
        }
        Ok(NormalParamPosterior { mean, cov, support })
    }

    /// Initialize from an independent prior: truncated normals contribute
    /// their underlying (mean, variance); uniform and inverse-gamma
    /// coordinates are moment-matched.
    pub fn from_prior(prior: &PriorSpec) -> Result<Self> {
        let p = prior.dim();
        let mut mean = Vector::zeros(p);
        let mut cov = Matrix::zeros(p, p);
        for (i, (name, fam)) in prior.coords.iter().enumerate() {
            let (m, v) = match *fam {
                PriorFamily::TruncatedNormal { mean, variance } => (mean, variance),
                PriorFamily::Uniform { lo, hi } => {
                    (0.5 * (lo + hi), (hi - lo) * (hi - lo) / 12.0)
                }
                PriorFamily::InverseGamma { shape, rate } => {
                    if shape <= 2.0 {
                        return Err(Error::Config(format!(
                            "cannot moment-match inverse gamma prior for {name}: shape {shape} <= 2"
                        )));
                    }
                    let mean = rate / (shape - 1.0);
                    (mean, mean * mean / (shape - 2.0))
                }
            };
            mean[i] = m;
            cov[(i, i)] = v;
        }
        NormalParamPosterior::new(mean, cov, prior.supports())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn sd(&self, j: usize) -> f64 {
        self.cov[(j, j)].sqrt()
    }

    /// Full normal log density at theta.
    pub fn logpdf(&self, theta: &Vector) -> Result<f64> {
        let f = factor_spd(&self.cov, "normal posterior covariance")?;
        Ok(f.mvn_logpdf(theta, &self.mean))
    }

    /// Normal quantile of coordinate j, clipped to the support.
    pub fn quantile(&self, j: usize, p: f64) -> f64 {
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let raw = self.mean[j] + self.sd(j) * normal.inverse_cdf(p);
        raw.clamp(self.support[j].0, self.support[j].1)
    }

    /// Laplace-style update: maximize l(theta) = loglik(theta) +
    /// log N(theta | m, C) by simplex search (started at the previous mean
    /// plus `restarts` draws from the current posterior), then curvature
    /// from the central-difference Hessian of l at the new mode.
    pub fn updated<F, R>(
        &self,
        loglik: F,
        restarts: usize,
        rng: &mut R,
    ) -> Result<(Self, NormalUpdateDiag)>
    where
        F: Fn(&Vector) -> Result<f64>,
        R: Rng,
    {
        let p = self.dim();
        let transforms: Vec<Transform> = self
            .support
            .iter()
            .map(|&(lo, hi)| Transform::from_support(lo, hi))
            .collect();
        let prior_factor = factor_spd(&self.cov, "normal posterior covariance")?;
        let ell = |theta: &Vector| -> f64 {
            for (j, &(lo, hi)) in self.support.iter().enumerate() {
                if theta[j] <= lo || theta[j] >= hi {
                    return f64::NEG_INFINITY;
                }
            }
            let prior = prior_factor.mvn_logpdf(theta, &self.mean);
            match loglik(theta) {
                Ok(ll) => ll + prior,
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let to_phi = |theta: &Vector| {
            Vector::from_fn(p, |j, _| transforms[j].to_unconstrained(theta[j]))
        };
        let to_theta = |phi: &Vector| {
            Vector::from_fn(p, |j, _| transforms[j].to_natural(phi[j]))
        };

        // Starting points: previous mean pulled strictly inside the
        // support, plus rejection draws from the current posterior.
        let interior = |theta: &Vector| {
            Vector::from_fn(p, |j, _| {
                let (lo, hi) = self.support[j];
                let pad = 1e-6 * (1.0 + self.sd(j));
                theta[j].clamp(
                    if lo.is_finite() { lo + pad } else { f64::NEG_INFINITY },
                    if hi.is_finite() { hi - pad } else { f64::INFINITY },
                )
            })
        };
        let mut starts = vec![interior(&self.mean)];
        for _ in 0..restarts {
            match self.try_sample_one(rng, 200) {
                Some(draw) => starts.push(interior(&draw)),
                None => starts.push(interior(&self.mean)),
            }
        }

        let mut best: Option<SimplexOutcome> = None;
        let mut total_iterations = 0;
        let mut converged_runs = 0;
        for start in &starts {
            let phi0 = to_phi(start);
            let step = Vector::from_fn(p, |j, _| {
                let sd = self.sd(j);
                (0.5 * sd / transforms[j].scale_at(start[j])).clamp(1e-3, 2.0)
            });
            let mut objective = |phi: &Vector| ell(&to_theta(phi));
            let res = nelder_mead_max(&mut objective, &phi0, &step, 2000, 1e-8);
            total_iterations += res.iterations;
            if res.converged {
                converged_runs += 1;
            }
            let candidate = SimplexOutcome {
                theta: to_theta(&res.x),
                value: res.value,
            };
            best = Some(match best.take() {
                None => candidate,
                Some(b) => {
                    if candidate.value > b.value {
                        candidate
                    } else {
                        b
                    }
                }
            });
        }
        let best = best.expect("at least one start");
        if converged_runs == 0 || !best.value.is_finite() {
            return Err(Error::Optimization {
                message: "simplex search did not converge from any start".into(),
                best_point: best.theta.iter().cloned().collect(),
                best_value: best.value,
            });
        }

        let mut ell_mut = |theta: &Vector| ell(theta);
        let hess = finite_difference_hessian(&mut ell_mut, &best.theta, &self.support);
        let (cov, ridge) = covariance_from_hessian(&hess)?;
        let updated = NormalParamPosterior::new(best.theta, cov, self.support.clone())?;
        Ok((
            updated,
            NormalUpdateDiag {
                ridge,
                iterations: total_iterations,
                converged_runs,
            },
        ))
    }

    fn try_sample_one<R: Rng>(&self, rng: &mut R, max_tries: usize) -> Option<Vector> {
        let chol = self.cov.clone().cholesky()?;
        for _ in 0..max_tries {
            let z = crate::linalg::standard_normal_vector(self.dim(), rng);
            let draw = &self.mean + chol.l() * z;
            if self
                .support
                .iter()
                .zip(draw.iter())
                .all(|(&(lo, hi), &x)| x >= lo && x <= hi)
            {
                return Some(draw);
            }
        }
        None
    }

    /// Draw n vectors from N(m, C) restricted to the support by
    /// rejection. Errors if the acceptance rate drops below 1e-3.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vector>> {
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPsd {
                what: "normal posterior covariance",
                min_eig: min_symmetric_eigenvalue(&self.cov),
            })?;
        let l = chol.l();
        let mut out = Vec::with_capacity(n);
        let mut proposed = 0usize;
        while out.len() < n {
            proposed += 1;
            let z = crate::linalg::standard_normal_vector(self.dim(), rng);
            let draw = &self.mean + &l * z;
            if self
                .support
                .iter()
                .zip(draw.iter())
                .all(|(&(lo, hi), &x)| x >= lo && x <= hi)
            {
                out.push(draw);
            }
            if proposed >= 10_000 && (out.len() as f64) < 1e-3 * proposed as f64 {
                return Err(Error::SupportMismatch {
                    rate: out.len() as f64 / proposed as f64,
                });
            }
        }
        Ok(out)
    }
}

struct SimplexOutcome {
    theta: Vector,
    value: f64,
}

/// Conjugate inverse-gamma posterior for a scalar parameter that
/// multiplies both covariance matrices, so the innovation covariance is
/// theta times a unit matrix Sigma-tilde.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InverseGammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl InverseGammaPosterior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) {
            return Err(Error::Config(format!(
                "inverse gamma posterior needs shape > 0 and rate > 0, got ({shape}, {rate})"
            )));
        }
        Ok(InverseGammaPosterior { shape, rate })
    }

    /// Scale-conjugacy update: shape grows by m/2 and the rate by half the
    /// Mahalanobis norm of the innovation under the unit covariance.
    pub fn updated(
        &self,
        innovation: &Vector,
        unit_innovation_cov: &Matrix,
    ) -> Result<Self> {
        let m = innovation.len();
        if unit_innovation_cov.nrows() != m {
            return Err(Error::Dimension {
                what: "unit innovation covariance",
                expected: m,
                got: unit_innovation_cov.nrows(),
            });
        }
        let f = factor_spd(unit_innovation_cov, "unit innovation covariance")?;
        let quad = innovation.dot(&f.solve_vec(innovation));
        Ok(InverseGammaPosterior {
            shape: self.shape + m as f64 / 2.0,
            rate: self.rate + 0.5 * quad,
        })
    }

    pub fn mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.rate / (self.shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    pub fn sd(&self) -> f64 {
        if self.shape > 2.0 {
            self.rate / ((self.shape - 1.0) * (self.shape - 2.0).sqrt())
        } else {
            f64::INFINITY
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        PriorFamily::InverseGamma {
            shape: self.shape,
            rate: self.rate,
        }
        .quantile(p)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let g = rand_distr::Gamma::new(self.shape, 1.0).unwrap();
        self.rate / g.sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unbounded(p: usize) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); p]
    }

    #[test]
    fn quadratic_loglik_reproduces_conjugate_gaussian_algebra() {
        // loglik = -1/2 (theta-u)' A (theta-u), prior N(m, C):
        // posterior precision A + C^{-1}, mean solves the usual system.
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let u = Vector::from_row_slice(&[1.0, -0.5]);
        let m0 = Vector::from_row_slice(&[0.0, 0.0]);
        let c0 = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]);
        let prior = NormalParamPosterior::new(m0.clone(), c0.clone(), unbounded(2)).unwrap();
        let a_for_ll = a.clone();
        let loglik = move |theta: &Vector| {
            let d = theta - &u;
            Ok(-0.5 * d.dot(&(&a_for_ll * &d)))
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (post, diag) = prior.updated(loglik, 2, &mut rng).unwrap();
        let prec = &a + c0.clone().try_inverse().unwrap();
        let want_cov = prec.clone().try_inverse().unwrap();
        let want_mean = &want_cov
            * (&a * Vector::from_row_slice(&[1.0, -0.5])
                + c0.clone().try_inverse().unwrap() * m0);
        assert!(diag.converged_runs > 0);
        assert_relative_eq!((post.mean() - want_mean).amax(), 0.0, epsilon = 1e-6);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    post.cov()[(i, j)],
                    want_cov[(i, j)],
                    max_relative = 1e-4
                );
            }
        }
    }

    #[test]
    fn zero_loglik_returns_the_prior() {
        let m0 = Vector::from_row_slice(&[2.0, 3.0]);
        let c0 = Matrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.7]);
        let prior = NormalParamPosterior::new(m0.clone(), c0.clone(), unbounded(2)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (post, _) = prior.updated(|_| Ok(0.0), 2, &mut rng).unwrap();
        assert_relative_eq!((post.mean() - m0).amax(), 0.0, epsilon = 1e-6);
        assert_relative_eq!((post.cov() - c0).amax(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn sampling_matches_moments_and_respects_bounds() {
        let m0 = Vector::from_row_slice(&[1.0]);
        let c0 = Matrix::from_element(1, 1, 4.0);
        let post = NormalParamPosterior::new(m0, c0, unbounded(1)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let draws = post.sample(100_000, &mut rng).unwrap();
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d[0] - mean) * (d[0] - mean)).sum::<f64>()
            / (draws.len() - 1) as f64;
        assert!((mean - 1.0).abs() < 3.0 * 2.0 / (draws.len() as f64).sqrt());
        assert!((var - 4.0).abs() < 0.15);

        // Lower bound exactly at the mean: every draw on or above it.
        let bounded = NormalParamPosterior::new(
            Vector::from_row_slice(&[1.0]),
            Matrix::from_element(1, 1, 4.0),
            vec![(1.0, f64::INFINITY)],
        )
        .unwrap();
        for d in bounded.sample(2000, &mut rng).unwrap() {
            assert!(d[0] >= 1.0);
        }
    }

    #[test]
    fn tiny_covariance_concentrates_draws() {
        let post = NormalParamPosterior::new(
            Vector::from_row_slice(&[2.5]),
            Matrix::from_element(1, 1, 1e-16),
            unbounded(1),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for d in post.sample(100, &mut rng).unwrap() {
            assert_relative_eq!(d[0], 2.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn support_mismatch_is_detected() {
        // Mass essentially entirely below the lower bound.
        let post = NormalParamPosterior::new(
            Vector::from_row_slice(&[-10.0]),
            Matrix::from_element(1, 1, 1.0),
            vec![(0.0, f64::INFINITY)],
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        assert!(matches!(
            post.sample(10, &mut rng),
            Err(Error::SupportMismatch { .. })
        ));
    }

    #[test]
    fn ig_update_shifts_shape_by_half_m() {
        let prior = InverseGammaPosterior::new(5.0, 5.0).unwrap();
        // m = 1 with unit Mahalanobis norm: IG(5.5, 5.5).
        let post = prior
            .updated(
                &Vector::from_row_slice(&[1.0]),
                &Matrix::from_element(1, 1, 1.0),
            )
            .unwrap();
        assert_relative_eq!(post.shape, 5.5);
        assert_relative_eq!(post.rate, 5.5);

        // Zero innovation: shape still grows, rate unchanged.
        let post2 = prior
            .updated(&Vector::zeros(3), &Matrix::identity(3, 3))
            .unwrap();
        assert_relative_eq!(post2.shape, 6.5);
        assert_relative_eq!(post2.rate, 5.0);
    }

    #[test]
    fn ig_posterior_mean_converges_to_truth() {
        // Innovations drawn with covariance theta* Sigma-tilde: the
        // posterior mean b/(a-1) must approach theta*.
        let theta_star: f64 = 2.5;
        let sigma_tilde = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let chol = sigma_tilde.clone().cholesky().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut post = InverseGammaPosterior::new(5.0, 5.0).unwrap();
        for _ in 0..4000 {
            let z = crate::linalg::standard_normal_vector(2, &mut rng);
            let e = chol.l() * z * theta_star.sqrt();
            post = post.updated(&e, &sigma_tilde).unwrap();
        }
        assert!(
            (post.mean() - theta_star).abs() < 0.1,
            "posterior mean {} far from {theta_star}",
            post.mean()
        );
    }
}
