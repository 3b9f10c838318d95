//! Limited-memory quasi-Newton minimizer (L-BFGS with Armijo backtracking).
//!
//! Generic over objectives returning value and analytic gradient. Used by the
//! estimation module, where derivative quality is the main asset; the
//! optimizer itself is deliberately plain.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Optimizer controls.
#[derive(Debug, Clone)]
pub struct OptimOptions {
    /// Maximum iterations.
    pub max_iter: usize,
    /// Convergence when the gradient ∞-norm drops below this.
    pub grad_tol: f64,
    /// Convergence when the relative parameter change drops below this.
    pub param_tol: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, param_tol: 1e-9, memory: 10 }
    }
}

/// Minimization outcome. `converged` is false when the iteration budget ran
/// out; `x`/`value` then hold the best point seen.
#[derive(Debug, Clone)]
pub struct OptimResult {
    /// Final (best) point.
    pub x: DVector<f64>,
    /// Objective value at `x`.
    pub value: f64,
    /// Gradient ∞-norm at `x`.
    pub grad_norm: f64,
    /// Iterations used.
    pub iterations: usize,
    /// Whether a convergence criterion was met.
    pub converged: bool,
}

/// Minimize `f` from `x0`. The objective returns `(value, gradient)`; any
/// error it returns during line search is treated as an infeasible point and
/// the step is shrunk, while an error at the initial point is propagated.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    if !(opts.grad_tol > 0.0 && opts.param_tol > 0.0) {
        return Err(Error::InvalidArgument("optimizer tolerances must be positive".into()));
    }
    let mut x = x0;
    let (mut fx, mut gx) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::InvalidArgument("objective not finite at start".into()));
    }
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut gamma = 1.0;
    let mut converged = false;
    let mut iter = 0;

    while iter < opts.max_iter {
        let gnorm = gx.amax();
        if gnorm < opts.grad_tol {
            converged = true;
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = gx.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho_hist[i] * s_hist[i].dot(&q);
            alphas[i] = a;
            q -= a * &y_hist[i];
        }
        q *= gamma;
        for i in 0..m {
            let b = rho_hist[i] * y_hist[i].dot(&q);
            q += (alphas[i] - b) * &s_hist[i];
        }
        let mut dir = -q;
        let mut slope = gx.dot(&dir);
        if !(slope < 0.0) || !slope.is_finite() {
            // Fall back to steepest descent if the model direction degrades.
            dir = -&gx;
            slope = gx.dot(&dir);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            gamma = 1.0;
        }

        // Armijo backtracking.
        let c1 = 1e-4;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt = &x + step * &dir;
            match f(&xt) {
                Ok((ft, gt)) if ft.is_finite() && ft <= fx + c1 * step * slope => {
                    accepted = Some((xt, ft, gt));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No descent step representable: treat as converged-at-best.
            break;
        };

        let s = &xn - &x;
        let yv = &gn - &gx;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            gamma = sy / yv.dot(&yv);
            rho_hist.push(1.0 / sy);
            s_hist.push(s.clone());
            y_hist.push(yv);
        }

        let rel = s.amax() / x.amax().max(1.0);
        x = xn;
        fx = fn_;
        gx = gn;
        iter += 1;
        if rel < opts.param_tol {
            converged = true;
            break;
        }
    }
    Ok(OptimResult { grad_norm: gx.amax(), x, value: fx, iterations: iter, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_exact() {
        let target = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let t = target.clone();
        let res = minimize(
            move |x: &DVector<f64>| {
                let d = x - &t;
                Ok((0.5 * d.dot(&d), d))
            },
            DVector::zeros(3),
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.x, target, epsilon = 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let res = minimize(
            |x: &DVector<f64>| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = DVector::from_vec(vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ]);
                Ok((f, g))
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            &OptimOptions { max_iter: 2000, ..Default::default() },
        )
        .unwrap();
        assert!(res.converged, "grad norm {}", res.grad_norm);
        assert_relative_eq!(res.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(res.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // Objective errors for x ≤ 0; the line search must shrink through it.
        let res = minimize(
            |x: &DVector<f64>| {
                if x[0] <= 0.0 {
                    return Err(Error::InvalidArgument("out of domain".into()));
                }
                let v = x[0];
                Ok((v - v.ln(), DVector::from_vec(vec![1.0 - 1.0 / v])))
            },
            DVector::from_vec(vec![0.05]),
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn budget_exhaustion_reports_unconverged() {
        let res = minimize(
            |x: &DVector<f64>| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = DVector::from_vec(vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ]);
                Ok((f, g))
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            &OptimOptions { max_iter: 3, ..Default::default() },
        )
        .unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
    }
}
