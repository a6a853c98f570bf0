//! Ensemble Kalman filter core: forecast covariance assembly, gain,
//! innovation covariance, perturbed-observation analysis, and the two
//! likelihood approximations of the parameter recursion.

use crate::covariance::TaperSpec;
use crate::error::{Error, Result};
use crate::linalg::{factor_spd, log_sum_exp, Matrix, Vector};
use crate::models::ModelSpec;
use crate::rng::{purpose, theta_label, SeedTree};

/// N state vectors representing a filtering distribution at a time index.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StateEnsemble {
    pub members: Vec<Vector>,
    pub time_index: usize,
}

impl StateEnsemble {
    pub fn new(members: Vec<Vector>, time_index: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InsufficientEnsemble(members.len()));
        }
        let n = members[0].len();
        for m in &members {
            if m.len() != n {
                return Err(Error::Dimension {
                    what: "ensemble member",
                    expected: n,
                    got: m.len(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("ensemble member"));
            }
        }
        Ok(StateEnsemble {
            members,
            time_index,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn mean(&self) -> Vector {
        let mut mean = Vector::zeros(self.dim());
        for m in &self.members {
            mean += m;
        }
        mean / self.size() as f64
    }
}

/// Prior ensemble summary: mean and tapered covariance of the propagated
/// (pre-noise) ensemble. The theta-dependent forecast covariance is
/// P^p + Q(theta).
#[derive(Clone, Debug)]
pub struct ForecastSummary {
    pub prior_mean: Vector,
    pub prior_cov: Matrix,
}

impl ForecastSummary {
    /// Build from the propagated ensemble with an optional taper and
    /// multiplicative covariance inflation (1.0 = none).
    pub fn build<D>(
        ensemble: &StateEnsemble,
        taper: &TaperSpec,
        dist: D,
        inflation: f64,
    ) -> Result<Self>
    where
        D: Fn(usize, usize) -> f64,
    {
        let mut prior_cov =
            crate::covariance::tapered_empirical_cov(&ensemble.members, taper, dist)?;
        if inflation != 1.0 {
            prior_cov *= inflation;
        }
        Ok(ForecastSummary {
            prior_mean: ensemble.mean(),
            prior_cov,
        })
    }

    pub fn forecast_cov(&self, model: &ModelSpec, theta: &Vector) -> Result<Matrix> {
        Ok(&self.prior_cov + (model.evo_cov)(theta)?)
    }
}

/// Innovation covariance H P^f H' + R.
pub fn innovation_cov(
    summary: &ForecastSummary,
    model: &ModelSpec,
    theta: &Vector,
) -> Result<Matrix> {
    let h = (model.obs_matrix)(theta)?;
    let pf = summary.forecast_cov(model, theta)?;
    let r = (model.obs_cov)(theta)?;
    Ok(&h * pf * h.transpose() + r)
}

/// Kalman gain P^f H' Sigma^{-1} (n x m).
pub fn kalman_gain(
    summary: &ForecastSummary,
    model: &ModelSpec,
    theta: &Vector,
) -> Result<Matrix> {
    let h = (model.obs_matrix)(theta)?;
    let pf = summary.forecast_cov(model, theta)?;
    let r = (model.obs_cov)(theta)?;
    gain_from_parts(&pf, &h, &r)
}

/// Gain from already-built forecast covariance and model matrices.
pub fn gain_from_parts(pf: &Matrix, h: &Matrix, r: &Matrix) -> Result<Matrix> {
    let sigma = h * pf * h.transpose() + r;
    let factor = factor_spd(&sigma, "innovation covariance")?;
    // K' = Sigma^{-1} (H P^f); P^f symmetric.
    let hp = h * pf;
    Ok(factor.solve_mat(&hp).transpose())
}

/// EnKF likelihood approximation: the full normalized Gaussian log-density
/// of the innovation y - H a^p under the innovation covariance.
pub fn enkf_loglik(
    summary: &ForecastSummary,
    y: &Vector,
    model: &ModelSpec,
    theta: &Vector,
) -> Result<f64> {
    let h = (model.obs_matrix)(theta)?;
    let sigma = innovation_cov(summary, model, theta)?;
    let factor = factor_spd(&sigma, "innovation covariance")?;
    let predicted = &h * &summary.prior_mean;
    Ok(factor.mvn_logpdf(y, &predicted))
}

/// "Discrete" likelihood approximation: the equal-weight Gaussian mixture
/// over the prior members, log-sum-exp stabilized. Also returns the
/// effective mixture size 1/sum(w^2) of the member weights at y.
pub fn discrete_loglik(
    prior_members: &[Vector],
    y: &Vector,
    model: &ModelSpec,
    theta: &Vector,
) -> Result<(f64, f64)> {
    if prior_members.is_empty() {
        return Err(Error::InsufficientEnsemble(0));
    }
    let h = (model.obs_matrix)(theta)?;
    let q = (model.evo_cov)(theta)?;
    let r = (model.obs_cov)(theta)?;
    let cov = &h * q * h.transpose() + r;
    let factor = factor_spd(&cov, "discrete mixture covariance")?;
    let logliks: Vec<f64> = prior_members
        .iter()
        .map(|x| factor.mvn_logpdf(y, &(&h * x)))
        .collect();
    let n = prior_members.len() as f64;
    let lse = log_sum_exp(&logliks);
    if !lse.is_finite() {
        return Ok((f64::NEG_INFINITY, 1.0));
    }
    let ess = 1.0
        / logliks
            .iter()
            .map(|l| (2.0 * (l - lse)).exp())
            .sum::<f64>();
    Ok((lse - n.ln(), ess))
}

/// Perturbed-observation analysis at a single parameter value:
/// x_i <- x_i + K (y + v_i - H x_i), v_i ~ N(0, R(theta)).
///
/// Perturbations are drawn from per-(time, member) substreams; with
/// `common_random_numbers` the underlying normals are shared across theta
/// values, otherwise the stream is additionally keyed by theta.
pub fn analysis_update(
    ensemble: &StateEnsemble,
    y: &Vector,
    summary: &ForecastSummary,
    model: &ModelSpec,
    theta: &Vector,
    tree: &SeedTree,
    common_random_numbers: bool,
) -> Result<StateEnsemble> {
    let gain = kalman_gain(summary, model, theta)?;
    let h = (model.obs_matrix)(theta)?;
    let r = (model.obs_cov)(theta)?;
    let r_factor = factor_spd(&r, "observation covariance")?;
    let l = r_factor.chol.l_dirty().lower_triangle();
    let t = ensemble.time_index as u64;
    let members = ensemble
        .members
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut labels = vec![purpose::OBS_PERT, t, i as u64];
            if !common_random_numbers {
                labels.push(theta_label(theta.as_slice()));
            }
            let mut rng = tree.stream(&labels);
            let z = crate::linalg::standard_normal_vector(y.len(), &mut rng);
            let v = &l * z;
            let innovation = y + v - &h * x;
            x + &gain * innovation
        })
        .collect();
    StateEnsemble::new(members, ensemble.time_index)
}
