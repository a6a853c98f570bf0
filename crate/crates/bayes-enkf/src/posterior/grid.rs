//! Grid-based parameter posterior: fixed atoms, recursively updated
//! log-weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::PriorSpec;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix, Vector};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamGrid {
    points: Vec<Vector>,
    log_weights: Vec<f64>,
}

/// Weighted summary of a grid posterior.
#[derive(Clone, Debug)]
pub struct GridMoments {
    pub mean: Vector,
    pub cov: Matrix,
    /// Per-coordinate (2.5%, 50%, 97.5%) quantiles.
    pub quantiles: Vec<[f64; 3]>,
}

impl ParamGrid {
    pub fn new(points: Vec<Vector>, log_weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("grid needs at least one point".into()));
        }
        if points.len() != log_weights.len() {
            return Err(Error::Dimension {
                what: "grid log_weights",
                expected: points.len(),
                got: log_weights.len(),
            });
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Config("grid points have mixed dimensions".into()));
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(Error::Config(format!(
                        "grid points {i} and {j} coincide"
                    )));
                }
            }
        }
        let mut grid = ParamGrid {
            points,
            log_weights,
        };
        grid.normalize()?;
        Ok(grid)
    }

    /// Tensor-product grid over the central prior mass with weights
    /// proportional to the prior density at the atoms.
    pub fn from_prior(prior: &PriorSpec, points_per_axis: usize) -> Result<Self> {
        let axes = prior.axis_points(points_per_axis);
        let mut points = vec![Vector::zeros(0)];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = Vector::zeros(p.len() + 1);
                    q.rows_mut(0, p.len()).copy_from(p);
                    q[p.len()] = v;
                    next.push(q);
                }
            }
            points = next;
        }
        let log_weights = points
            .iter()
            .map(|p| prior.logpdf(p))
            .collect::<Result<Vec<_>>>()?;
        ParamGrid::new(points, log_weights)
    }

    fn normalize(&mut self) -> Result<()> {
        let z = log_sum_exp(&self.log_weights);
        if !z.is_finite() {
            return Err(Error::DegeneratePosterior);
        }
        for w in &mut self.log_weights {
            *w -= z;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .exp()
    }

    /// 1 / sum(w^2): effective number of atoms carrying mass.
    pub fn effective_size(&self) -> f64 {
        1.0 / self
            .log_weights
            .iter()
            .map(|w| (2.0 * w).exp())
            .sum::<f64>()
    }

    /// Bayes update of the weights by a log-likelihood evaluated at every
    /// atom. Returns the new grid and the log normalizer
    /// log sum_k pi_k exp(loglik_k), the log predictive density of the
    /// assimilated observation.
    pub fn updated<F>(&self, mut loglik: F) -> Result<(ParamGrid, f64)>
    where
        F: FnMut(&Vector) -> Result<f64>,
    {
        let lls = self
            .points
            .iter()
            .map(|p| loglik(p))
            .collect::<Result<Vec<_>>>()?;
        self.updated_with_logliks(&lls)
    }

    pub fn updated_with_logliks(&self, logliks: &[f64]) -> Result<(ParamGrid, f64)> {
        if logliks.len() != self.points.len() {
            return Err(Error::Dimension {
                what: "grid logliks",
                expected: self.points.len(),
                got: logliks.len(),
            });
        }
        if logliks.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::NonFinite("grid log-likelihood"));
        }
        let unnorm: Vec<f64> = self
            .log_weights
            .iter()
            .zip(logliks)
            .map(|(w, l)| w + l)
            .collect();
        let z = log_sum_exp(&unnorm);
        if !z.is_finite() {
            return Err(Error::DegeneratePosterior);
        }
        let log_weights = unnorm.into_iter().map(|w| w - z).collect();
        Ok((
            ParamGrid {
                points: self.points.clone(),
                log_weights,
            },
            z,
        ))
    }

    /// Draw n atoms i.i.d. according to the weights.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vector> {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for w in &self.log_weights {
            acc += w.exp();
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let k = cdf.partition_point(|&c| c < u).min(self.len() - 1);
                self.points[k].clone()
            })
            .collect()
    }

    /// Weighted mean, covariance, and per-coordinate quantiles with
    /// linear interpolation between atoms.
    pub fn moments(&self) -> GridMoments {
        let p = self.dim();
        let w = self.weights();
        let mut mean = Vector::zeros(p);
        for (pt, &wk) in self.points.iter().zip(&w) {
            mean += pt * wk;
        }
        let mut cov = Matrix::zeros(p, p);
        for (pt, &wk) in self.points.iter().zip(&w) {
            let d = pt - &mean;
            cov.syger(wk, &d, &d, 1.0);
        }
        for i in 0..p {
            for j in (i + 1)..p {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        let quantiles = (0..p)
            .map(|j| {
                [
                    self.marginal_quantile(j, 0.025),
                    self.marginal_quantile(j, 0.5),
                    self.marginal_quantile(j, 0.975),
                ]
            })
            .collect();
        GridMoments {
            mean,
            cov,
            quantiles,
        }
    }

    /// Weighted empirical quantile of coordinate j, linearly interpolated
    /// between distinct atom values.
    pub fn marginal_quantile(&self, j: usize, q: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self
            .points
            .iter()
            .zip(&self.log_weights)
            .map(|(p, w)| (p[j], w.exp()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Merge repeated marginal values (tensor grids repeat coordinates).
        let mut vals: Vec<f64> = Vec::new();
        let mut wts: Vec<f64> = Vec::new();
        for (v, w) in pairs {
            if let Some(last) = vals.last() {
                if *last == v {
                    *wts.last_mut().unwrap() += w;
                    continue;
                }
            }
            vals.push(v);
            wts.push(w);
        }
        let mut cum = 0.0;
        let mut cdf = Vec::with_capacity(wts.len());
        for w in &wts {
            cum += w;
            cdf.push(cum);
        }
        if q <= cdf[0] {
            return vals[0];
        }
        for k in 1..vals.len() {
            if q <= cdf[k] {
                let span = cdf[k] - cdf[k - 1];
                let frac = if span > 0.0 { (q - cdf[k - 1]) / span } else { 0.0 };
                return vals[k - 1] + frac * (vals[k] - vals[k - 1]);
            }
        }
        *vals.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn atoms(vals: &[f64]) -> Vec<Vector> {
        vals.iter().map(|&v| Vector::from_row_slice(&[v])).collect()
    }

    #[test]
    fn constant_loglik_leaves_weights_unchanged() {
        let grid = ParamGrid::new(atoms(&[0.0, 1.0, 2.0]), vec![0.1, 0.5, -0.3]).unwrap();
        let (updated, _) = grid.updated(|_| Ok(-7.0)).unwrap();
        for (a, b) in grid.log_weights().iter().zip(updated.log_weights()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bayes_on_two_atoms() {
        let grid = ParamGrid::new(atoms(&[0.0, 1.0]), vec![0.0, 0.0]).unwrap();
        let (updated, _) = grid
            .updated(|p| Ok(if p[0] == 0.0 { 3.0f64.ln() } else { 0.0 }))
            .unwrap();
        let w = updated.weights();
        assert_relative_eq!(w[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn static_model_single_observation() {
        // Weights proportional to N(2 | 0, 2 + theta) on {0, 0.3, 1} with a
        // flat prior; expected values computed by direct density evaluation.
        let grid = ParamGrid::new(atoms(&[0.0, 0.3, 1.0]), vec![0.0; 3]).unwrap();
        let y = 2.0;
        let (updated, _) = grid
            .updated(|p| {
                let v = 2.0 + p[0];
                Ok(-0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * y * y / v)
            })
            .unwrap();
        let w = updated.weights();
        assert_relative_eq!(w[0], 0.312310901605, epsilon = 1e-9);
        assert_relative_eq!(w[1], 0.331806836750, epsilon = 1e-9);
        assert_relative_eq!(w[2], 0.355882261645, epsilon = 1e-9);
    }

    #[test]
    fn two_factor_composition_is_exact() {
        // grid_update(grid, f + g) == grid_update(grid_update(grid, f), g)
        // exactly in log-weights.
        let grid =
            ParamGrid::new(atoms(&[0.0, 0.5, 1.0, 2.0]), vec![0.2, -0.1, 0.0, 0.4]).unwrap();
        let f = |p: &Vector| Ok(-0.7 * p[0] * p[0]);
        let g = |p: &Vector| Ok(0.3 * p[0] - 1.0);
        let (once, _) = grid.updated(|p| Ok(f(p)? + g(p)?)).unwrap();
        let (step1, _) = grid.updated(f).unwrap();
        let (twice, _) = step1.updated(g).unwrap();
        for (a, b) in once.log_weights().iter().zip(twice.log_weights()) {
            // Additive in log space; only reassociation roundoff (a couple
            // of ulp) may differ between the two routes.
            assert!(
                (a - b).abs() <= 4.0 * f64::EPSILON * (1.0 + a.abs()),
                "log-weight additivity violated: {a} vs {b}"
            );
        }
    }

    #[test]
    fn flat_prior_weights_proportional_to_cumulative_likelihood() {
        let grid = ParamGrid::new(atoms(&[0.0, 1.0, 2.0]), vec![0.0; 3]).unwrap();
        let lls = [[-0.3, -0.9, -2.0], [-1.1, -0.2, -0.4], [-0.6, -0.6, -0.1]];
        let mut g = grid.clone();
        for step in &lls {
            g = g.updated_with_logliks(step).unwrap().0;
        }
        let mut cumulative = [0.0; 3];
        for step in &lls {
            for k in 0..3 {
                cumulative[k] += step[k];
            }
        }
        let z = log_sum_exp(&cumulative);
        for k in 0..3 {
            assert_relative_eq!(g.log_weights()[k], cumulative[k] - z, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_update_is_an_error() {
        let grid = ParamGrid::new(atoms(&[0.0, 1.0]), vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            grid.updated(|_| Ok(f64::NEG_INFINITY)),
            Err(Error::DegeneratePosterior)
        ));
    }

    #[test]
    fn sampling_single_atom_and_zero_weight() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        let single = ParamGrid::new(atoms(&[0.7]), vec![0.0]).unwrap();
        for draw in single.sample(20, &mut rng) {
            assert_eq!(draw[0], 0.7);
        }
        let two = ParamGrid::new(atoms(&[0.0, 1.0]), vec![0.0, f64::NEG_INFINITY]).unwrap();
        for draw in two.sample(200, &mut rng) {
            assert_eq!(draw[0], 0.0);
        }
    }

    #[test]
    fn sampling_frequencies_within_binomial_bands() {
        let grid = ParamGrid::new(atoms(&[0.0, 1.0]), vec![0.0, 0.0]).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let n = 100_000;
        let ones = grid
            .sample(n, &mut rng)
            .iter()
            .filter(|d| d[0] == 1.0)
            .count();
        let se = (0.25 / n as f64).sqrt();
        assert!(
            ((ones as f64 / n as f64) - 0.5).abs() < 3.0 * se,
            "frequency {} outside 3 sigma
",
            ones as f64 / n as f64
        );
    }

    #[test]
    fn moments_of_simple_grids() {
        let single = ParamGrid::new(atoms(&[0.4]), vec![0.0]).unwrap();
        let m = single.moments();
        assert_eq!(m.mean[0], 0.4);
        assert_eq!(m.cov[(0, 0)], 0.0);
        assert_eq!(m.quantiles[0], [0.4, 0.4, 0.4]);

        let two = ParamGrid::new(atoms(&[0.0, 1.0]), vec![0.0, 0.0]).unwrap();
        let m = two.moments();
        assert_relative_eq!(m.mean[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(m.cov[(0, 0)], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn moments_match_direct_weighted_sums() {
        // 20-point grid with Gaussian-shaped weights; independent oracle is
        // a direct weighted sum over the atoms.
        let vals: Vec<f64> = (0..20).map(|k| k as f64 / 4.0).collect();
        let lw: Vec<f64> = vals.iter().map(|v| -0.5 * (v - 2.1) * (v - 2.1)).collect();
        let grid = ParamGrid::new(atoms(&vals), lw.clone()).unwrap();
        let m = grid.moments();
        let z = log_sum_exp(&lw);
        let w: Vec<f64> = lw.iter().map(|x| (x - z).exp()).collect();
        let mean: f64 = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
        let var: f64 = vals
            .iter()
            .zip(&w)
            .map(|(v, w)| w * (v - mean) * (v - mean))
            .sum();
        assert_relative_eq!(m.mean[0], mean, epsilon = 1e-12);
        assert_relative_eq!(m.cov[(0, 0)], var, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_points_rejected() {
        assert!(ParamGrid::new(atoms(&[1.0, 1.0]), vec![0.0, 0.0]).is_err());
    }
}
