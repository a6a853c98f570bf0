//! Derivative-free simplex maximization and finite-difference curvature,
//! used by the normal approximation of the parameter posterior.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub struct SimplexResult {
    pub x: Vector,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead maximization. Converges when the simplex diameter falls
/// below `tol` relative to the scale of the best vertex.
pub fn nelder_mead_max<F>(
    f: &mut F,
    x0: &Vector,
    initial_step: &Vector,
    max_iter: usize,
    tol: f64,
) -> SimplexResult
where
    F: FnMut(&Vector) -> f64,
{
    let dim = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<(Vector, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.clone(), f(x0)));
    for i in 0..dim {
        let mut v = x0.clone();
        let step = if initial_step[i] != 0.0 { initial_step[i] } else { 0.1 };
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // Sort descending by value (maximization).
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best = &simplex[0];
        let scale = 1.0 + best.0.amax();
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| (v - &best.0).amax())
            .fold(0.0, f64::max);
        if diameter < tol * scale {
            converged = true;
            break;
        }

        let centroid = {
            let mut c = Vector::zeros(dim);
            for (v, _) in &simplex[..dim] {
                c += v;
            }
            c / dim as f64
        };
        let worst = simplex[dim].clone();
        let reflected = &centroid + (&centroid - &worst.0) * alpha;
        let f_r = f(&reflected);
        if f_r > simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let f_e = f(&expanded);
            simplex[dim] = if f_e > f_r {
                (expanded, f_e)
            } else {
                (reflected, f_r)
            };
        } else if f_r > simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_r);
        } else {
            let contracted = &centroid + (&worst.0 - &centroid) * rho;
            let f_c = f(&contracted);
            if f_c > worst.1 {
                simplex[dim] = (contracted, f_c);
            } else {
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = &best_point + (&entry.0 - &best_point) * sigma;
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    SimplexResult {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        iterations,
        converged,
    }
}

/// Central-difference Hessian with per-coordinate steps
/// h_i = max(1e-4, 1e-4 |x_i|), clipped so that evaluation points stay
/// strictly inside the open support box.
pub fn finite_difference_hessian<F>(
    f: &mut F,
    x: &Vector,
    support: &[(f64, f64)],
) -> Matrix
where
    F: FnMut(&Vector) -> f64,
{
    let p = x.len();
    let mut h = Vector::zeros(p);
    for i in 0..p {
        let mut step = (1e-4f64).max(1e-4 * x[i].abs());
        let (lo, hi) = support[i];
        let room = (x[i] - lo).min(hi - x[i]);
        if room.is_finite() && room > 0.0 {
            step = step.min(0.45 * room);
        }
        h[i] = step;
    }
    let f0 = f(x);
    let mut hess = Matrix::zeros(p, p);
    for i in 0..p {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h[i];
        xm[i] -= h[i];
        hess[(i, i)] = (f(&xp) - 2.0 * f0 + f(&xm)) / (h[i] * h[i]);
        for j in 0..i {
            let mut xpp = x.clone();
            let mut xpm = x.clone();
            let mut xmp = x.clone();
            let mut xmm = x.clone();
            xpp[i] += h[i];
            xpp[j] += h[j];
            xpm[i] += h[i];
            xpm[j] -= h[j];
            xmp[i] -= h[i];
            xmp[j] += h[j];
            xmm[i] -= h[i];
            xmm[j] -= h[j];
            let v = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Invert the negated Hessian of a log-density at its mode, escalating a
/// ridge by factors of 10 from 1e-8 until positive definite. Returns the
/// covariance and the ridge that was needed (0.0 if none).
pub fn covariance_from_hessian(hess: &Matrix) -> Result<(Matrix, f64)> {
    let p = hess.nrows();
    let neg = -hess;
    let mut ridge = 0.0f64;
    for _ in 0..12 {
        let mut trial = neg.clone();
        for i in 0..p {
            trial[(i, i)] += ridge;
        }
        if let Some(chol) = trial.clone().cholesky() {
            let cov = chol.inverse();
            // Symmetrize against accumulated rounding.
            let cov = (&cov + cov.transpose()) * 0.5;
            return Ok((cov, ridge));
        }
        ridge = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
    }
    Err(Error::Curvature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn maximizes_quadratic() {
        let mut f = |x: &Vector| {
            -((x[0] - 1.5) * (x[0] - 1.5)) - 2.0 * (x[1] + 0.5) * (x[1] + 0.5)
        };
        let res = nelder_mead_max(
            &mut f,
            &Vector::from_row_slice(&[0.0, 0.0]),
            &Vector::from_element(2, 0.5),
            2000,
            1e-10,
        );
        assert!(res.converged);
        assert_relative_eq!(res.x[0], 1.5, epsilon = 1e-7);
        assert_relative_eq!(res.x[1], -0.5, epsilon = 1e-7);
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        let a = Matrix::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 2.0]);
        let mut f = |x: &Vector| -0.5 * (x.transpose() * &a * x)[(0, 0)];
        let x = Vector::from_row_slice(&[0.3, -0.2]);
        let h = finite_difference_hessian(
            &mut f,
            &x,
            &[(f64::NEG_INFINITY, f64::INFINITY); 2],
        );
        assert_relative_eq!((&h + &a).amax(), 0.0, epsilon = 1e-5);
        let (cov, ridge) = covariance_from_hessian(&h).unwrap();
        assert_eq!(ridge, 0.0);
        let want = a.try_inverse().unwrap();
        assert_relative_eq!((cov - want).amax(), 0.0, epsilon = 1e-4);
    }

    #[test]
    fn indefinite_hessian_gets_ridged_or_fails() {
        let h = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        // -h has a -1 eigenvalue; the ridge must climb past 1 or fail.
        match covariance_from_hessian(&h) {
            Ok((_, ridge)) => assert!(ridge > 1.0),
            Err(Error::Curvature) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
