// SPDX-License-Identifier: MIT OR Apache-2.0

//! Limited-memory BFGS with a backtracking line search, for small smooth
//! problems such as regularized logistic regression.

use crate::error::{GlpError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    /// Stop once `‖∇f‖₂` falls to this.
    pub grad_tolerance: f64,
    pub memory: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            grad_tolerance: 1e-9,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    /// Best iterate found (the last accepted one).
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Value changes below this (relative) are summation noise, not signal.
pub(crate) const FLAT_RTOL: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (mut fx, mut g) = f(&x0);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(GlpError::NonFiniteObjective);
    }
    let mut x = x0;
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(settings.memory);
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        if norm(&g) <= settings.grad_tolerance {
            break;
        }
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma = match history.last() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm(&g).max(1.0),
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        // Backtracking: Armijo, or, once values stop resolving, a strictly
        // smaller gradient at an equal value.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) {
                let armijo = fn_ <= fx + 1e-4 * step * slope;
                let flat = (fn_ - fx).abs() <= FLAT_RTOL * fx.abs().max(1.0) && norm(&gn) < norm(&g);
                if armijo || flat {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if history.len() == settings.memory {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let grad_norm = norm(&g);
    Ok(LbfgsResult {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: grad_norm <= settings.grad_tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_quadratic() {
        // f = ½ xᵀAx − bᵀx with A = diag(1, 10, 100).
        let a = [1.0, 10.0, 100.0];
        let b = [1.0, 2.0, 3.0];
        let r = minimize(
            |x| {
                let f = x.iter().zip(&a).zip(&b).map(|((xi, ai), bi)| 0.5 * ai * xi * xi - bi * xi).sum();
                let g = x.iter().zip(&a).zip(&b).map(|((xi, ai), bi)| ai * xi - bi).collect();
                (f, g)
            },
            vec![0.0; 3],
            &LbfgsSettings::default(),
        )
        .unwrap();
        assert!(r.converged);
        for i in 0..3 {
            assert!((r.x[i] - b[i] / a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
                (f, g)
            },
            vec![-1.2, 1.0],
            &LbfgsSettings { grad_tolerance: 1e-8, ..Default::default() },
        )
        .unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let r = minimize(
            |x| ((x[0] - 3.0).powi(4), vec![4.0 * (x[0] - 3.0).powi(3)]),
            vec![0.0],
            &LbfgsSettings { max_iterations: 2, ..Default::default() },
        )
        .unwrap();
        assert!(!r.converged && r.iterations == 2);
        assert!(minimize(|_| (f64::NAN, vec![0.0]), vec![0.0], &LbfgsSettings::default()).is_err());
    }
}
