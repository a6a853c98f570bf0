//! Covariance and correlation functions, compactly supported tapers,
//! distance metrics, and the tapered empirical covariance estimator.

pub mod bessel;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, Matrix, Vector};

/// Matern covariance parameters: sill, spatial range, smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma2: f64,
    pub lambda: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, lambda: f64, nu: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && lambda > 0.0 && nu > 0.0) {
            return Err(Error::Domain(format!(
                "Matern parameters must be positive, got sigma2={sigma2}, lambda={lambda}, nu={nu}"
            )));
        }
        Ok(MaternParams { sigma2, lambda, nu })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaperKind {
    GaspariCohn,
    Wendland,
    None,
}

/// A compactly supported taper; `range` is the distance at which the
/// taper reaches zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaperSpec {
    pub kind: TaperKind,
    pub range: f64,
}

impl TaperSpec {
    pub fn none() -> Self {
        TaperSpec {
            kind: TaperKind::None,
            range: 1.0,
        }
    }

    pub fn gaspari_cohn(range: f64) -> Self {
        TaperSpec {
            kind: TaperKind::GaspariCohn,
            range,
        }
    }

    pub fn wendland(range: f64) -> Self {
        TaperSpec {
            kind: TaperKind::Wendland,
            range,
        }
    }
}

/// Exponential correlation exp(-tau d).
pub fn exponential_corr(d: f64, tau: f64) -> Result<f64> {
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be >= 0, got {d}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("decay rate must be > 0, got {tau}")));
    }
    Ok((-tau * d).exp())
}

/// Matern covariance sigma2 / (2^(nu-1) Gamma(nu)) (d/lambda)^nu K_nu(d/lambda),
/// with the analytic limit sigma2 at d = 0. Note there is no sqrt(2 nu)
/// distance scaling in this parameterization.
pub fn matern_cov(d: f64, p: &MaternParams) -> Result<f64> {
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be >= 0, got {d}")));
    }
    if p.nu > 50.0 {
        return Err(Error::UnsupportedRange(format!(
            "Matern smoothness nu={} exceeds 50",
            p.nu
        )));
    }
    if d == 0.0 {
        return Ok(p.sigma2);
    }
    let x = d / p.lambda;
    // For large nu and tiny x, K_nu overflows while the product tends to
    // the sill; the leading correction there is O(x^2 / (nu - 1)).
    if p.nu > 1.5 {
        let log_k_scale = p.nu * (2.0 / x).ln() + ln_gamma(p.nu);
        if log_k_scale > 650.0 {
            return Ok(p.sigma2 * (1.0 - x * x / (4.0 * (p.nu - 1.0))));
        }
    }
    let k = bessel::bessel_k(p.nu, x)?;
    let log_pref = p.nu * x.ln() - (p.nu - 1.0) * std::f64::consts::LN_2 - ln_gamma(p.nu);
    let value = p.sigma2 * (log_pref + k.ln()).exp();
    if !value.is_finite() {
        return Err(Error::NonFinite("matern_cov"));
    }
    Ok(value)
}

/// Taper correlation value at distance d; 1 at d = 0 and 0 at d >= range.
pub fn taper_value(d: f64, spec: &TaperSpec) -> Result<f64> {
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be >= 0, got {d}")));
    }
    match spec.kind {
        TaperKind::None => Ok(1.0),
        TaperKind::Wendland => {
            if !(spec.range > 0.0) {
                return Err(Error::Config(format!(
                    "taper range must be > 0, got {}",
                    spec.range
                )));
            }
            let t = d / spec.range;
            if t >= 1.0 {
                Ok(0.0)
            } else {
                Ok((1.0 - t).powi(4) * (1.0 + 4.0 * t))
            }
        }
        TaperKind::GaspariCohn => {
            if !(spec.range > 0.0) {
                return Err(Error::Config(format!(
                    "taper range must be > 0, got {}",
                    spec.range
                )));
            }
            // 5th-order piecewise rational of Gaspari & Cohn (1999),
            // eq. 4.10, with half-range c = range/2 so that the taper
            // vanishes at `range`.
            let c = spec.range / 2.0;
            let r = d / c;
            if r <= 1.0 {
                Ok(((-0.25 * r + 0.5) * r + 0.625) * r.powi(3) - (5.0 / 3.0) * r * r + 1.0)
            } else if r < 2.0 {
                Ok(((r / 12.0 - 0.5) * r + 0.625) * r.powi(3) + (5.0 / 3.0) * r * r - 5.0 * r
                    + 4.0
                    - 2.0 / (3.0 * r))
            } else {
                Ok(0.0)
            }
        }
    }
}

/// Circular distance between 1-based indices on a ring of n points:
/// min(|i-j|, n-|i-j|).
pub fn circular_distance(i: usize, j: usize, n: usize) -> Result<f64> {
    if i < 1 || j < 1 || i > n || j > n {
        return Err(Error::Domain(format!(
            "indices must lie in 1..={n}, got ({i}, {j})"
        )));
    }
    let a = i.abs_diff(j);
    Ok(a.min(n - a) as f64)
}

/// Build an n x n matrix from a distance function and a kernel.
pub fn matrix_from_kernel<D, K>(n: usize, dist: D, mut kernel: K) -> Result<Matrix>
where
    D: Fn(usize, usize) -> f64,
    K: FnMut(f64) -> Result<f64>,
{
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(dist(i, j))?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Taper matrix rho with rho_ij = taper_value(dist(i, j)).
pub fn taper_matrix<D>(n: usize, spec: &TaperSpec, dist: D) -> Result<Matrix>
where
    D: Fn(usize, usize) -> f64,
{
    matrix_from_kernel(n, dist, |d| taper_value(d, spec))
}

/// Tapered empirical covariance: elementwise product of the taper matrix
/// with the sample covariance (divisor N-1) of the ensemble.
pub fn tapered_empirical_cov<D>(
    members: &[Vector],
    spec: &TaperSpec,
    dist: D,
) -> Result<Matrix>
where
    D: Fn(usize, usize) -> f64,
{
    let (_, mut cov) = sample_covariance(members)?;
    if let TaperKind::None = spec.kind {
        return Ok(cov);
    }
    let n = cov.nrows();
    let rho = taper_matrix(n, spec, dist)?;
    cov.component_mul_assign(&rho);
    Ok(cov)
}
