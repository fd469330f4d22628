// SPDX-License-Identifier: MIT OR Apache-2.0

//! L2-regularized logistic regression fitted by L-BFGS, with stratified
//! cross-validation over a fixed penalty grid.

use crate::error::{GlpError, Result};
use crate::lbfgs::{minimize, LbfgsResult, LbfgsSettings, FLAT_RTOL};
use crate::metrics::roc_auc;
use crate::ops::sigmoid;
use crate::rng::Rng;
use crate::tensor::Matrix;

pub const L2_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const CV_FOLDS: usize = 5;
pub const MIN_PER_CLASS: usize = 10;
const STD_FLOOR: f64 = 1e-12;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `(1/n)·Σ [log(1 + e^{z}) − y·z] + (λ/2)·‖w‖²` with `z = x·w + b`; the
/// intercept `b` (last entry of `params`) is not penalized. Returns the
/// value and gradient.
pub fn logistic_objective(x: &Matrix, y: &[bool], params: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let p = x.cols();
    let n = x.rows() as f64;
    let (w, b) = (&params[..p], params[p]);
    let mut grad = vec![0.0; p + 1];
    let mut loss = 0.0;
    for (r, &label) in x.iter_rows().zip(y) {
        let z = r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let t = if label { 1.0 } else { 0.0 };
        loss += softplus(z) - t * z;
        let e = sigmoid(z) - t;
        for (g, a) in grad[..p].iter_mut().zip(r) {
            *g += e * a;
        }
        grad[p] += e;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    loss /= n;
    loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    for (g, wi) in grad[..p].iter_mut().zip(w) {
        *g += lambda * wi;
    }
    (loss, grad)
}

/// A fitted probe; features are standardized with the training statistics
/// before the linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    pub grad_norm: f64,
}

impl LogisticModel {
    pub fn decision(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(GlpError::shape("logistic_decision", "feature count"));
        }
        Ok(x
            .iter_rows()
            .map(|r| {
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .zip(&self.weights)
                    .map(|(((v, m), s), w)| (v - m) / s * w)
                    .sum::<f64>()
                    + self.intercept
            })
            .collect())
    }
}

fn standardize(x: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let mean = x.col_means();
    let n = x.rows() as f64;
    let mut var = vec![0.0; x.cols()];
    for r in x.iter_rows() {
        for ((v, m), a) in var.iter_mut().zip(&mean).zip(r) {
            *v += (a - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    let inv: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
    let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
    (x.add_row(&neg).mul_row(&inv), mean, std)
}

fn check_labels(x: &Matrix, y: &[bool], min_per_class: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(GlpError::shape("logistic", "rows and labels differ"));
    }
    let pos = y.iter().filter(|&&l| l).count();
    if pos < min_per_class || y.len() - pos < min_per_class {
        return Err(GlpError::InvalidArgument(format!(
            "need at least {min_per_class} examples per class, got {pos} / {}",
            y.len() - pos
        )));
    }
    if !x.all_finite() {
        return Err(GlpError::NonFiniteInput("logistic features"));
    }
    Ok(())
}

/// Damped Newton on `(w, b)` for a single feature. Same objective and
/// stopping rule as the L-BFGS path, far fewer passes over the data.
fn newton_1d(x: &[f64], y: &[bool], lambda: f64, settings: &LbfgsSettings) -> LbfgsResult {
    let n = x.len() as f64;
    let eval = |w: f64, b: f64| -> (f64, [f64; 2], [f64; 3]) {
        let (mut loss, mut g, mut h) = (0.0, [0.0; 2], [0.0; 3]);
        for (&a, &label) in x.iter().zip(y) {
            let z = a * w + b;
            let t = if label { 1.0 } else { 0.0 };
            loss += softplus(z) - t * z;
            let s = sigmoid(z);
            let e = s - t;
            let c = s * (1.0 - s);
            g[0] += e * a;
            g[1] += e;
            h[0] += c * a * a;
            h[1] += c * a;
            h[2] += c;
        }
        (
            loss / n + 0.5 * lambda * w * w,
            [g[0] / n + lambda * w, g[1] / n],
            [h[0] / n + lambda, h[1] / n, h[2] / n],
        )
    };
    let (mut w, mut b) = (0.0, 0.0);
    let (mut f, mut g, mut h) = eval(w, b);
    let mut iterations = 0;
    while iterations < settings.max_iterations && g[0].hypot(g[1]) > settings.grad_tolerance {
        iterations += 1;
        let det = h[0] * h[2] - h[1] * h[1];
        let (dw, db) = if det > 1e-300 {
            (-(h[2] * g[0] - h[1] * g[1]) / det, -(h[0] * g[1] - h[1] * g[0]) / det)
        } else {
            (-g[0], -g[1])
        };
        let slope = g[0] * dw + g[1] * db;
        let mut step = 1.0;
        let accepted = loop {
            let next = eval(w + step * dw, b + step * db);
            let flat = (next.0 - f).abs() <= FLAT_RTOL * f.abs().max(1.0) && next.1[0].hypot(next.1[1]) < g[0].hypot(g[1]);
            if next.0 <= f + 1e-4 * step * slope || flat {
                break Some(next);
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some(next) => {
                w += step * dw;
                b += step * db;
                (f, g, h) = next;
            }
            None => break,
        }
    }
    let grad_norm = g[0].hypot(g[1]);
    LbfgsResult {
        x: vec![w, b],
        value: f,
        grad_norm,
        iterations,
        converged: grad_norm <= settings.grad_tolerance,
    }
}

/// Fits at one penalty. Non-convergence keeps the best iterate and clears
/// `converged`.
pub fn fit_logistic(x: &Matrix, y: &[bool], lambda: f64) -> Result<LogisticModel> {
    check_labels(x, y, 1)?;
    let (xs, mean, std) = standardize(x);
    let settings = LbfgsSettings::default();
    let r = if x.cols() == 1 {
        newton_1d(xs.as_slice(), y, lambda, &settings)
    } else {
        minimize(|p| logistic_objective(&xs, y, p, lambda), vec![0.0; x.cols() + 1], &settings)?
    };
    let p = x.cols();
    Ok(LogisticModel {
        mean,
        std,
        weights: r.x[..p].to_vec(),
        intercept: r.x[p],
        lambda,
        converged: r.converged,
        grad_norm: r.grad_norm,
    })
}

/// Fold id per example; each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = Rng::new(seed);
    let mut out = vec![0; y.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        rng.shuffle(&mut idx);
        for (j, &i) in idx.iter().enumerate() {
            out[i] = j % folds;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvFit {
    pub model: LogisticModel,
    pub cv_auc: Vec<f64>,
    /// False if any fit along the way stopped short of the tolerance.
    pub converged: bool,
}

/// Picks the grid penalty with the best mean cross-validated AUC (first on
/// ties) and refits on all of `x`.
pub fn fit_with_cv(x: &Matrix, y: &[bool], folds: &[usize]) -> Result<CvFit> {
    check_labels(x, y, MIN_PER_CLASS)?;
    if folds.len() != y.len() {
        return Err(GlpError::shape("fit_with_cv", "fold ids"));
    }
    let n_folds = folds.iter().max().map_or(0, |m| m + 1);
    let mut converged = true;
    let mut cv_auc = Vec::with_capacity(L2_GRID.len());
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..n_folds)
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] == f);
            (kept, held)
        })
        .collect();
    for &lambda in &L2_GRID {
        let mut total = 0.0;
        for (kept, held) in &splits {
            let yk: Vec<bool> = kept.iter().map(|&i| y[i]).collect();
            let yh: Vec<bool> = held.iter().map(|&i| y[i]).collect();
            let m = fit_logistic(&x.select_rows(kept), &yk, lambda)?;
            converged &= m.converged;
            total += roc_auc(&m.decision(&x.select_rows(held))?, &yh)?;
        }
        cv_auc.push(total / splits.len() as f64);
    }
    let best = cv_auc
        .iter()
        .enumerate()
        .fold(0, |b, (i, &a)| if a > cv_auc[b] { i } else { b });
    let model = fit_logistic(x, y, L2_GRID[best])?;
    converged &= model.converged;
    Ok(CvFit { model, cv_auc, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_line(n: usize, shift: f64, seed: u64) -> (Matrix, Vec<bool>) {
        let mut rng = Rng::new(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x: Vec<[f64; 1]> = y.iter().map(|&l| [rng.normal() + if l { shift } else { 0.0 }]).collect();
        (Matrix::from_rows(&x), y)
    }

    #[test]
    fn gradient_matches_finite_differences_and_vanishes_at_optimum() {
        let (x, y) = noisy_line(80, 1.0, 1);
        let p = [0.7, -0.2];
        let (_, g) = logistic_objective(&x, &y, &p, 0.1);
        for i in 0..2 {
            let mut hi = p;
            let mut lo = p;
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (logistic_objective(&x, &y, &hi, 0.1).0 - logistic_objective(&x, &y, &lo, 0.1).0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
        let m = fit_logistic(&x, &y, 1e-3).unwrap();
        let xs = x.add_row(&[-m.mean[0]]).mul_row(&[1.0 / m.std[0]]);
        let (_, g) = logistic_objective(&xs, &y, &[m.weights[0], m.intercept], 1e-3);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn separable_feature_reaches_auc_one_at_every_penalty() {
        let x = Matrix::from_rows(&(0..40).map(|i| [i as f64]).collect::<Vec<_>>());
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        for &l in &L2_GRID {
            let m = fit_logistic(&x, &y, l).unwrap();
            assert_eq!(roc_auc(&m.decision(&x).unwrap(), &y).unwrap(), 1.0);
        }
        let folds = stratified_folds(&y, CV_FOLDS, 3);
        let cv = fit_with_cv(&x, &y, &folds).unwrap();
        assert!(cv.cv_auc.iter().all(|&a| a == 1.0));
        assert_eq!(cv.model.lambda, L2_GRID[0]);
    }

    #[test]
    fn newton_matches_lbfgs_in_one_dimension() {
        let (x, y) = noisy_line(300, 0.8, 5);
        let (xs, _, _) = standardize(&x);
        for &l in &L2_GRID {
            let settings = LbfgsSettings::default();
            let a = newton_1d(xs.as_slice(), &y, l, &settings);
            let b = minimize(|p| logistic_objective(&xs, &y, p, l), vec![0.0; 2], &settings).unwrap();
            assert!(a.converged);
            assert!((a.x[0] - b.x[0]).abs() < 1e-7 && (a.x[1] - b.x[1]).abs() < 1e-7, "{l}: {:?} {:?}", a.x, b.x);
        }
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..53).map(|i| i % 3 == 0).collect();
        let f = stratified_folds(&y, 5, 9);
        for k in 0..5 {
            let pos = (0..53).filter(|&i| f[i] == k && y[i]).count();
            let neg = (0..53).filter(|&i| f[i] == k && !y[i]).count();
            assert!((3..=4).contains(&pos) && (6..=8).contains(&neg), "{k}: {pos} {neg}");
        }
    }

    #[test]
    fn too_few_examples_rejected() {
        let (x, y) = noisy_line(12, 1.0, 2);
        assert!(fit_with_cv(&x, &y, &stratified_folds(&y, 5, 1)).is_err());
    }
}
