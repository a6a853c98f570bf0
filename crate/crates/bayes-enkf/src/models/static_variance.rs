//! Static variance testbed: scalar observations y_t ~ N(0, 2 + alpha)
//! with an empty state, so the whole signal sits in R(alpha). Running it
//! through the filter machinery exercises the degenerate n = 0 path.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::Error;
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StaticVarianceConfig {
    /// Excess variance alpha (>= 0).
    pub alpha_true: f64,
    /// Baseline variance, 2 in the replicated example.
    pub base_variance: f64,
}

impl Default for StaticVarianceConfig {
    fn default() -> Self {
        StaticVarianceConfig {
            alpha_true: 0.3,
            base_variance: 2.0,
        }
    }
}

impl StaticVarianceConfig {
    pub fn spec(&self) -> ModelSpec {
        let base = self.base_variance;
        ModelSpec {
            n: 0,
            m: 1,
            param_names: vec!["alpha".into()],
            evolution: Arc::new(|_| Ok(Vector::zeros(0))),
            obs_matrix: Arc::new(|_| Ok(Matrix::zeros(1, 0))),
            evo_cov: Arc::new(|_| Ok(Matrix::zeros(0, 0))),
            obs_cov: Arc::new(move |theta| {
                if theta.len() != 1 {
                    return Err(Error::Dimension {
                        what: "static model theta",
                        expected: 1,
                        got: theta.len(),
                    });
                }
                let alpha = theta[0];
                if alpha < 0.0 {
                    return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
                }
                Ok(Matrix::from_element(1, 1, base + alpha))
            }),
            init_mean: Arc::new(|_| Ok(Vector::zeros(0))),
            init_cov: Arc::new(|_| Ok(Matrix::zeros(0, 0))),
            evo_noise_sampler: None,
            state_distance: Arc::new(|_, _| 0.0),
            obs_is_identity: false,
        }
    }

    /// Per-time maximum likelihood estimate max(0, y^2 - base).
    pub fn single_stage_mle(&self, y: f64) -> f64 {
        (y * y - self.base_variance).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mle_truncates_at_zero() {
        let cfg = StaticVarianceConfig::default();
        assert_eq!(cfg.single_stage_mle(0.0), 0.0);
        assert_eq!(cfg.single_stage_mle(1.0), 0.0);
        assert_eq!(cfg.single_stage_mle(3.0), 7.0);
    }

    #[test]
    fn obs_cov_is_base_plus_alpha() {
        let cfg = StaticVarianceConfig::default();
        let model = cfg.spec();
        let r = (model.obs_cov)(&Vector::from_row_slice(&[0.3])).unwrap();
        assert_eq!(r[(0, 0)], 2.3);
        assert!((model.obs_cov)(&Vector::from_row_slice(&[-0.1])).is_err());
    }
}
