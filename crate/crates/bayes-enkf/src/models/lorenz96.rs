//! Lorenz-96 testbed: 40 variables on a latitude circle, RK4 integration,
//! Matern-correlated observation errors on the circular distance.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::covariance::{circular_distance, matern_cov, matrix_from_kernel, MaternParams};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// State dimension of the system.
pub const N: usize = 40;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Lorenz96Config {
    /// Forcing term F.
    pub forcing: f64,
    /// Time between assimilation cycles.
    pub obs_interval: f64,
    /// RK4 steps per cycle.
    pub substeps: usize,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        // delta = 0.25 split into 5 classical RK4 steps of 0.05.
        Lorenz96Config {
            forcing: 8.0,
            obs_interval: 0.25,
            substeps: 5,
        }
    }
}

/// dx_k/dt = (x_{k+1} - x_{k-2}) x_{k-1} - x_k + F, indices mod 40.
pub fn lorenz96_derivative(x: &Vector, forcing: f64) -> Result<Vector> {
    if x.len() != N {
        return Err(Error::Dimension {
            what: "lorenz96 state",
            expected: N,
            got: x.len(),
        });
    }
    let mut dx = Vector::zeros(N);
    for k in 0..N {
        let kp1 = (k + 1) % N;
        let km1 = (k + N - 1) % N;
        let km2 = (k + N - 2) % N;
        dx[k] = (x[kp1] - x[km2]) * x[km1] - x[k] + forcing;
    }
    Ok(dx)
}

/// One classical 4th-order Runge-Kutta step of size h.
pub fn rk4_step(x: &Vector, h: f64, forcing: f64) -> Result<Vector> {
    let k1 = lorenz96_derivative(x, forcing)?;
    let k2 = lorenz96_derivative(&(x + &k1 * (h / 2.0)), forcing)?;
    let k3 = lorenz96_derivative(&(x + &k2 * (h / 2.0)), forcing)?;
    let k4 = lorenz96_derivative(&(x + &k3 * h), forcing)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

impl Lorenz96Config {
    /// Advance the state by one observation interval.
    pub fn advance(&self, x: &Vector) -> Result<Vector> {
        let h = self.obs_interval / self.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4_step(&x, h, self.forcing)?;
        }
        Ok(x)
    }

    /// Deterministic spin-up from a seeded perturbation of the
    /// equilibrium, used to place the initial truth on the attractor.
    pub fn spin_up(&self, seed: u64, time_units: f64) -> Result<Vector> {
        let tree = crate::rng::SeedTree::new(seed);
        let mut rng = tree.stream(&[crate::rng::purpose::TRUTH_INIT, 96]);
        let mut x = Vector::from_element(N, self.forcing)
            + crate::linalg::standard_normal_vector(N, &mut rng) * 0.01;
        let h = 0.05;
        let steps = (time_units / h).round() as usize;
        for _ in 0..steps {
            x = rk4_step(&x, h, self.forcing)?;
        }
        Ok(x)
    }

    /// Matern observation covariance on the circular distance.
    pub fn matern_obs_cov(theta: &Vector) -> Result<Matrix> {
        if theta.len() != 3 {
            return Err(Error::Dimension {
                what: "lorenz96 theta",
                expected: 3,
                got: theta.len(),
            });
        }
        let params = MaternParams::new(theta[0], theta[1], theta[2])?;
        matrix_from_kernel(
            N,
            |i, j| circular_distance(i + 1, j + 1, N).expect("indices in range"),
            |d| matern_cov(d, &params),
        )
    }

    /// Model with theta = (sigma2, lambda, nu); Q = 0, H = I, and initial
    /// state prior N(x0_star, 0.25 I).
    pub fn spec(&self, x0_star: Vector) -> ModelSpec {
        let cfg = *self;
        let x0 = Arc::new(x0_star);
        ModelSpec {
            n: N,
            m: N,
            param_names: vec!["sigma2".into(), "lambda".into(), "nu".into()],
            evolution: Arc::new(move |x| cfg.advance(x)),
            obs_matrix: Arc::new(|_| Ok(Matrix::identity(N, N))),
            evo_cov: Arc::new(|_| Ok(Matrix::zeros(N, N))),
            obs_cov: Arc::new(Self::matern_obs_cov),
            init_mean: Arc::new(move |_| Ok((*x0).clone())),
            init_cov: Arc::new(|_| Ok(Matrix::identity(N, N) * 0.25)),
            evo_noise_sampler: None,
            state_distance: Arc::new(|i, j| {
                circular_distance(i + 1, j + 1, N).expect("indices in range")
            }),
            obs_is_identity: true,
        }
    }
}
