//! Exact Kalman filter for linear models and the grid-KF oracle that
//! computes the exact discretized parameter posterior sequence.

use crate::error::{Error, Result};
use crate::linalg::{factor_spd, Matrix, Vector};
use crate::posterior::ParamGrid;

/// Time-invariant linear-Gaussian model matrices at a fixed parameter
/// value.
#[derive(Clone, Debug)]
pub struct KfModel {
    pub evolution: Matrix,
    pub obs: Matrix,
    pub evo_cov: Matrix,
    pub obs_cov: Matrix,
    pub init_mean: Vector,
    pub init_cov: Matrix,
}

impl KfModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.evolution.nrows();
        let m = self.obs.nrows();
        if self.evolution.ncols() != n
            || self.obs.ncols() != n
            || self.evo_cov.nrows() != n
            || self.obs_cov.nrows() != m
            || self.init_mean.len() != n
            || self.init_cov.nrows() != n
        {
            return Err(Error::Config("inconsistent Kalman model dimensions".into()));
        }
        Ok(())
    }
}

/// One exact predict/update cycle. Returns the posterior mean and
/// covariance and the predictive log density log p(y_t | Y_{t-1}) from
/// the prediction-error decomposition. The covariance update uses the
/// Joseph form.
pub fn kf_step(
    mean: &Vector,
    cov: &Matrix,
    y: &Vector,
    model: &KfModel,
) -> Result<(Vector, Matrix, f64)> {
    let mean_pred = &model.evolution * mean;
    let cov_pred = &model.evolution * cov * model.evolution.transpose() + &model.evo_cov;
    let predicted_obs = &model.obs * &mean_pred;
    let sigma = &model.obs * &cov_pred * model.obs.transpose() + &model.obs_cov;
    let factor = factor_spd(&sigma, "innovation covariance")?;
    let log_pred = factor.mvn_logpdf(y, &predicted_obs);
    let gain = factor
        .solve_mat(&(&model.obs * &cov_pred))
        .transpose();
    let mean_post = &mean_pred + &gain * (y - predicted_obs);
    let n = mean.len();
    let i_kh = Matrix::identity(n, n) - &gain * &model.obs;
    let cov_post =
        &i_kh * cov_pred * i_kh.transpose() + &gain * &model.obs_cov * gain.transpose();
    Ok((mean_post, cov_post, log_pred))
}

/// Run an exact KF per gridpoint, accumulating exact predictive log
/// densities into the discretized parameter posterior p(theta_k | Y_t)
/// for every t. This is the oracle the ensemble approximations are
/// validated against on linear models.
pub fn grid_kf_oracle<F>(
    build: F,
    observations: &[Vector],
    grid: &ParamGrid,
) -> Result<Vec<ParamGrid>>
where
    F: Fn(&Vector) -> Result<KfModel>,
{
    let models: Vec<KfModel> = grid
        .points()
        .iter()
        .map(&build)
        .collect::<Result<Vec<_>>>()?;
    for m in &models {
        m.validate()?;
    }
    let mut means: Vec<Vector> = models.iter().map(|m| m.init_mean.clone()).collect();
    let mut covs: Vec<Matrix> = models.iter().map(|m| m.init_cov.clone()).collect();
    let mut current = grid.clone();
    let mut sequence = Vec::with_capacity(observations.len());
    for y in observations {
        let mut logliks = Vec::with_capacity(models.len());
        for (k, model) in models.iter().enumerate() {
            let (mean, cov, ll) = kf_step(&means[k], &covs[k], y, model)?;
            means[k] = mean;
            covs[k] = cov;
            logliks.push(ll);
        }
        current = current.updated_with_logliks(&logliks)?.0;
        sequence.push(current.clone());
    }
    Ok(sequence)
}

/// Exact joint Gaussian log likelihood of the stacked observation vector
/// y_{1:T}, assembled as one (mT)-dimensional Gaussian. Brute-force
/// oracle for kf_step's prediction-error decomposition.
pub fn joint_gaussian_loglik(model: &KfModel, observations: &[Vector]) -> Result<f64> {
    model.validate()?;
    let t_steps = observations.len();
    let n = model.evolution.nrows();
    let m = model.obs.nrows();
    // State cross-covariances: Cov(x_s, x_t) for s <= t is
    // A_s M'^(t-s) with A_s = Cov(x_s, x_s) propagated forward.
    let mut state_cov = vec![vec![Matrix::zeros(n, n); t_steps]; t_steps];
    let mut state_mean = Vec::with_capacity(t_steps);
    let mut mean = model.init_mean.clone();
    let mut cov = model.init_cov.clone();
    for s in 0..t_steps {
        mean = &model.evolution * mean;
        cov = &model.evolution * cov * model.evolution.transpose() + &model.evo_cov;
        state_mean.push(mean.clone());
        state_cov[s][s] = cov.clone();
        let mut cross = cov.clone();
        for t in (s + 1)..t_steps {
            cross = &cross * model.evolution.transpose();
            state_cov[s][t] = cross.clone();
            state_cov[t][s] = cross.transpose();
        }
    }
    let mut big_mean = Vector::zeros(m * t_steps);
    let mut big_cov = Matrix::zeros(m * t_steps, m * t_steps);
    let mut stacked = Vector::zeros(m * t_steps);
    for s in 0..t_steps {
        big_mean
            .rows_mut(s * m, m)
            .copy_from(&(&model.obs * &state_mean[s]));
        stacked.rows_mut(s * m, m).copy_from(&observations[s]);
        for t in 0..t_steps {
            let mut block = &model.obs * &state_cov[s][t] * model.obs.transpose();
            if s == t {
                block += &model.obs_cov;
            }
            big_cov.view_mut((s * m, t * m), (m, m)).copy_from(&block);
        }
    }
    let factor = factor_spd(&big_cov, "joint observation covariance")?;
    Ok(factor.mvn_logpdf(&stacked, &big_mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear_var::LinearVarConfig;
    use crate::models::simulate_truth;
    use approx::assert_relative_eq;

    fn scalar_model(phi: f64, q: f64, r: f64, m0: f64, p0: f64) -> KfModel {
        KfModel {
            evolution: Matrix::from_element(1, 1, phi),
            obs: Matrix::from_element(1, 1, 1.0),
            evo_cov: Matrix::from_element(1, 1, q),
            obs_cov: Matrix::from_element(1, 1, r),
            init_mean: Vector::from_element(1, m0),
            init_cov: Matrix::from_element(1, 1, p0),
        }
    }

    #[test]
    fn scalar_step_matches_textbook_algebra() {
        let (phi, q, r, m0, p0) = (1.0, 0.3, 0.5, 0.2, 1.1);
        let model = scalar_model(phi, q, r, m0, p0);
        let y = 0.9;
        let (mean, cov, ll) = kf_step(
            &Vector::from_element(1, m0),
            &Matrix::from_element(1, 1, p0),
            &Vector::from_element(1, y),
            &model,
        )
        .unwrap();
        let p_pred = p0 + q;
        let s = p_pred + r;
        let k = p_pred / s;
        assert_relative_eq!(mean[0], m0 + k * (y - m0), epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 0)], (1.0 - k) * p_pred, epsilon = 1e-12);
        let want_ll = -0.5 * (2.0 * std::f64::consts::PI * s).ln() - 0.5 * (y - m0) * (y - m0) / s;
        assert_relative_eq!(ll, want_ll, epsilon = 1e-12);
    }

    #[test]
    fn zero_innovation_leaves_mean_unchanged() {
        let model = scalar_model(1.0, 0.4, 0.4, 0.7, 0.9);
        let (mean, _, _) = kf_step(
            &Vector::from_element(1, 0.7),
            &Matrix::from_element(1, 1, 0.9),
            &Vector::from_element(1, 0.7),
            &model,
        )
        .unwrap();
        assert_relative_eq!(mean[0], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn predictive_decomposition_matches_joint_gaussian() {
        // n = 5 VAR over T = 20 steps: the sum of per-step predictive log
        // densities equals the joint 100-dimensional Gaussian log
        // likelihood assembled by brute force.
        let cfg = LinearVarConfig::paper_sim(5);
        let spec = cfg.spec_beta_tau();
        let theta = Vector::from_row_slice(&[5.0, 1.0]);
        let (_, obs) = simulate_truth(&spec, &theta, 20, 42).unwrap();
        let model = KfModel {
            evolution: cfg.propagator(),
            obs: Matrix::identity(5, 5),
            evo_cov: (spec.evo_cov)(&theta).unwrap(),
            obs_cov: (spec.obs_cov)(&theta).unwrap(),
            init_mean: Vector::zeros(5),
            init_cov: Matrix::identity(5, 5),
        };
        let mut mean = model.init_mean.clone();
        let mut cov = model.init_cov.clone();
        let mut total = 0.0;
        for y in &obs {
            let (m2, c2, ll) = kf_step(&mean, &cov, y, &model).unwrap();
            mean = m2;
            cov = c2;
            total += ll;
        }
        let joint = joint_gaussian_loglik(&model, &obs).unwrap();
        assert_relative_eq!(total, joint, epsilon = 1e-6);
    }

    #[test]
    fn oracle_degenerate_grids() {
        let cfg = LinearVarConfig::paper_sim(4);
        let spec = cfg.spec_beta_tau();
        let theta = Vector::from_row_slice(&[5.0, 1.0]);
        let (_, obs) = simulate_truth(&spec, &theta, 6, 3).unwrap();
        let build = |point: &Vector| -> Result<KfModel> {
            Ok(KfModel {
                evolution: cfg.propagator(),
                obs: Matrix::identity(4, 4),
                evo_cov: (spec.evo_cov)(point)?,
                obs_cov: (spec.obs_cov)(point)?,
                init_mean: Vector::zeros(4),
                init_cov: Matrix::identity(4, 4),
            })
        };
        // Single gridpoint: weight 1 forever.
        let single = ParamGrid::new(vec![Vector::from_row_slice(&[5.0, 1.0])], vec![0.0]).unwrap();
        for g in grid_kf_oracle(build, &obs, &single).unwrap() {
            assert_relative_eq!(g.weights()[0], 1.0, epsilon = 1e-14);
        }
        // Two equal-likelihood points keep equal weights: use two points
        // with identical (beta, tau) up to swapped labels... they must be
        // distinct points, so use two that induce the same model by
        // symmetry: beta * C(tau) is injective here, so instead check that
        // two copies of the same model via epsilon-perturbation stay close.
        let pair = ParamGrid::new(
            vec![
                Vector::from_row_slice(&[5.0, 1.0]),
                Vector::from_row_slice(&[5.0 + 1e-12, 1.0]),
            ],
            vec![0.0, 0.0],
        )
        .unwrap();
        for g in grid_kf_oracle(build, &obs, &pair).unwrap() {
            assert_relative_eq!(g.weights()[0], 0.5, epsilon = 1e-6);
        }
    }
}
