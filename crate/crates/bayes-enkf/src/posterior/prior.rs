//! Prior families: truncated normal on the positive half-line,
//! inverse gamma (shape/rate), and uniform; independent across
//! coordinates.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist, Normal as NormalDist};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{Vector, LN_2PI};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorFamily {
    /// Normal(mean, variance) truncated to [0, inf).
    TruncatedNormal { mean: f64, variance: f64 },
    /// Inverse gamma with density proportional to x^{-(shape+1)} e^{-rate/x}.
    InverseGamma { shape: f64, rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl PriorFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorFamily::TruncatedNormal { variance, .. } => {
                if !(variance > 0.0) {
                    return Err(Error::Config(format!(
                        "truncated normal variance must be > 0, got {variance}"
                    )));
                }
                // The normalizer comes from the Gaussian tail function;
                // cross-check by quadrature that the density integrates to 1.
                let mass = self.quadrature_mass();
                if (mass - 1.0).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "truncated normal density integrates to {mass}, expected 1"
                    )));
                }
                Ok(())
            }
            PriorFamily::InverseGamma { shape, rate } => {
                if !(shape > 0.0 && rate > 0.0) {
                    return Err(Error::Config(format!(
                        "inverse gamma needs shape > 0 and rate > 0, got ({shape}, {rate})"
                    )));
                }
                Ok(())
            }
            PriorFamily::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::Config(format!(
                        "uniform needs hi > lo, got ({lo}, {hi})"
                    )));
                }
                Ok(())
            }
        }
    }

    fn quadrature_mass(&self) -> f64 {
        // Simpson's rule over the central support.
        let (lo, hi) = (self.quantile(1e-9), self.quantile(1.0 - 1e-9));
        let steps = 4000;
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for k in 0..steps {
            let a = lo + k as f64 * h;
            let fa = self.logpdf(a).exp();
            let fm = self.logpdf(a + 0.5 * h).exp();
            let fb = self.logpdf(a + h).exp();
            total += h / 6.0 * (fa + 4.0 * fm + fb);
        }
        total
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            PriorFamily::TruncatedNormal { .. } => (0.0, f64::INFINITY),
            PriorFamily::InverseGamma { .. } => (0.0, f64::INFINITY),
            PriorFamily::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        match *self {
            PriorFamily::TruncatedNormal { mean, variance } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let sd = variance.sqrt();
                let z = (x - mean) / sd;
                let log_phi = -0.5 * LN_2PI - 0.5 * z * z - sd.ln();
                let normal = NormalDist::new(0.0, 1.0).unwrap();
                log_phi - (1.0 - normal.cdf(-mean / sd)).ln()
            }
            PriorFamily::InverseGamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
            }
            PriorFamily::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match *self {
            PriorFamily::TruncatedNormal { mean, variance } => {
                let sd = variance.sqrt();
                let normal = NormalDist::new(0.0, 1.0).unwrap();
                let a = normal.cdf(-mean / sd);
                mean + sd * normal.inverse_cdf(a + p * (1.0 - a))
            }
            PriorFamily::InverseGamma { shape, rate } => {
                if p <= 0.0 {
                    return 0.0;
                }
                if p >= 1.0 {
                    return f64::INFINITY;
                }
                let g = GammaDist::new(shape, rate).unwrap();
                1.0 / g.inverse_cdf(1.0 - p)
            }
            PriorFamily::Uniform { lo, hi } => lo + p * (hi - lo),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PriorFamily::TruncatedNormal { mean, variance } => {
                let sd = variance.sqrt();
                let alpha = -mean / sd;
                mean + sd * mills(alpha)
            }
            PriorFamily::InverseGamma { shape, rate } => {
                if shape > 1.0 {
                    rate / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            PriorFamily::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            PriorFamily::TruncatedNormal { mean, variance } => {
                let sd = variance.sqrt();
                let alpha = -mean / sd;
                let lam = mills(alpha);
                (variance * (1.0 + alpha * lam - lam * lam)).sqrt()
            }
            PriorFamily::InverseGamma { shape, rate } => {
                if shape > 2.0 {
                    rate / ((shape - 1.0) * (shape - 2.0).sqrt())
                } else {
                    f64::INFINITY
                }
            }
            PriorFamily::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorFamily::TruncatedNormal { mean, variance } => {
                let sd = variance.sqrt();
                loop {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    let x = mean + sd * z;
                    if x >= 0.0 {
                        return x;
                    }
                }
            }
            PriorFamily::InverseGamma { shape, rate } => {
                let g = rand_distr::Gamma::new(shape, 1.0 / rate).unwrap();
                1.0 / g.sample(rng)
            }
            PriorFamily::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Inverse Mills ratio phi(a) / (1 - Phi(a)).
fn mills(alpha: f64) -> f64 {
    let normal = NormalDist::new(0.0, 1.0).unwrap();
    let phi = (-0.5 * alpha * alpha).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi / (1.0 - normal.cdf(alpha))
}

/// Independent prior over the named parameter coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorSpec {
    pub coords: Vec<(String, PriorFamily)>,
}

impl PriorSpec {
    pub fn new(coords: Vec<(String, PriorFamily)>) -> Result<Self> {
        for (_, fam) in &coords {
            fam.validate()?;
        }
        Ok(PriorSpec { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn supports(&self) -> Vec<(f64, f64)> {
        self.coords.iter().map(|(_, f)| f.support()).collect()
    }

    /// Sum of per-coordinate log densities; -inf outside support.
    pub fn logpdf(&self, theta: &Vector) -> Result<f64> {
        if theta.len() != self.coords.len() {
            return Err(Error::Dimension {
                what: "prior_logpdf theta",
                expected: self.coords.len(),
                got: theta.len(),
            });
        }
        Ok(self
            .coords
            .iter()
            .zip(theta.iter())
            .map(|((_, f), &x)| f.logpdf(x))
            .sum())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(self.coords.len(), self.coords.iter().map(|(_, f)| f.sample(rng)))
    }

    /// Per-axis equally spaced points spanning the central mass
    /// (0.0005, 0.9995) quantiles by default.
    pub fn axis_points(&self, points_per_axis: usize) -> Vec<Vec<f64>> {
        self.coords
            .iter()
            .map(|(_, f)| {
                let lo = f.quantile(0.0005);
                let hi = f.quantile(0.9995);
                if points_per_axis == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..points_per_axis)
                        .map(|k| lo + (hi - lo) * k as f64 / (points_per_axis - 1) as f64)
                        .collect()
                }
            })
            .collect()
    }
}
