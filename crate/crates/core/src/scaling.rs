// SPDX-License-Identifier: MIT OR Apache-2.0

//! Compute accounting, loss envelopes, and `L(C) = E + A·C^(−α)` fits.

use crate::error::{GlpError, Result};

/// `C = 6·N·D`, exact in 128-bit integers (saturating beyond `u128::MAX`).
pub fn flops_estimate(n_params: u64, tokens: u64) -> u128 {
    (n_params as u128 * tokens as u128).saturating_mul(6)
}

/// One training run: model size and `(tokens seen, loss)` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RunCurve {
    pub n_params: u64,
    pub points: Vec<(u64, f64)>,
}

impl RunCurve {
    pub fn new(n_params: u64, points: Vec<(u64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(GlpError::InvalidArgument(
                "tokens must strictly increase within a run".into(),
            ));
        }
        Ok(Self { n_params, points })
    }

    /// `(C, L)` with `C = 6·N·D`.
    pub fn compute_points(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|&(d, l)| (flops_estimate(self.n_params, d) as f64, l))
            .collect()
    }
}

/// Exponential moving average with the given half-life in steps. Starts from
/// zero and divides by the accumulated weight, so early values are not
/// dragged toward the first observation.
pub fn ema_smooth(values: &[f64], half_life: f64) -> Vec<f64> {
    let keep = 0.5f64.powf(1.0 / half_life);
    let (mut acc, mut weight) = (0.0, 0.0);
    values
        .iter()
        .map(|&v| {
            acc = keep * acc + (1.0 - keep) * v;
            weight = keep * weight + (1.0 - keep);
            acc / weight
        })
        .collect()
}

/// Drops the first `ceil(ratio · len)` points of a curve: the learning-rate
/// warmup, where loss follows the schedule rather than compute.
pub fn drop_warmup<T: Clone>(curve: &[T], ratio: f64) -> Vec<T> {
    let skip = ((ratio * curve.len() as f64).ceil() as usize).min(curve.len());
    curve[skip..].to_vec()
}

/// Running-minimum envelope of all curves merged and sorted by compute.
/// Only points that set a new strict minimum are kept.
pub fn compute_frontier(curves: &[Vec<(f64, f64)>]) -> Result<Vec<(f64, f64)>> {
    if curves.is_empty() {
        return Err(GlpError::InvalidArgument("no curves given".into()));
    }
    let mut merged: Vec<(f64, f64)> = curves.iter().flatten().copied().collect();
    if merged.iter().any(|(c, l)| !c.is_finite() || !l.is_finite()) {
        return Err(GlpError::NonFiniteInput("compute_frontier"));
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in merged {
        if out.last().is_none_or(|last| p.1 < last.1) {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit {
    pub e: f64,
    pub a: f64,
    pub alpha: f64,
    /// Root-mean-square residual in loss units.
    pub residual: f64,
    pub converged: bool,
}

impl PowerLawFit {
    pub fn predict(&self, c: f64) -> f64 {
        self.e + self.a * c.powf(-self.alpha)
    }

    pub fn to_csv(&self) -> String {
        format!("E,A,alpha,residual\n{:?},{:?},{:?},{:?}\n", self.e, self.a, self.alpha, self.residual)
    }
}

const GRID_SIZE: usize = 400;
const MAX_LM_ITERS: usize = 500;

/// Log-space sum of squared residuals for parameters `(E, ln A, α)`.
fn log_sse(xs: &[f64], ls: &[f64], e: f64, ln_a: f64, alpha: f64) -> f64 {
    xs.iter()
        .zip(ls)
        .map(|(&x, &l)| {
            let q = e + (ln_a - alpha * x).exp();
            (l.ln() - q.ln()).powi(2)
        })
        .sum()
}

/// Closed-form log-log OLS of `ln(L − E)` on `ln C`, returning `(ln A, α)`.
fn loglog_ols(xs: &[f64], ls: &[f64], e: f64) -> Option<(f64, f64)> {
    let ys: Vec<f64> = ls.iter().map(|l| (l - e).ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    let (m, b) = ols(xs, &ys)?;
    Some((b, -m))
}

/// Slope and intercept of `y` on `x`.
fn ols(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let m = sxy / sxx;
    Some((m, my - m * mx))
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        *o = det(m) / d;
    }
    Some(out)
}

/// Fits `L = E + A·C^(−α)` by least squares on `ln L`. A grid over
/// `E ∈ [0, min L)` with closed-form `(A, α)` per cell seeds a
/// Levenberg–Marquardt refinement over `(E, ln A, α)`; `E` stays in
/// `[0, min L)`. When refinement does not converge the best candidate found
/// is returned with `converged = false`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 4 {
        return Err(GlpError::InvalidArgument(format!(
            "power-law fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(c, l)| !(c > 0.0) || !(l > 0.0) || !c.is_finite() || !l.is_finite()) {
        return Err(GlpError::InvalidArgument(
            "power-law fit needs positive finite compute and loss".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ls: Vec<f64> = points.iter().map(|p| p.1).collect();
    let min_l = ls.iter().cloned().fold(f64::INFINITY, f64::min);
    let e_max = min_l * (1.0 - 1e-9);

    let mut best: Option<(f64, [f64; 3])> = None;
    for j in 0..GRID_SIZE {
        // Denser near min L, where the fit is most sensitive.
        let frac = 1.0 - (1.0 - j as f64 / GRID_SIZE as f64).powi(2);
        let e = e_max * frac;
        if let Some((ln_a, alpha)) = loglog_ols(&xs, &ls, e) {
            let sse = log_sse(&xs, &ls, e, ln_a, alpha);
            if sse.is_finite() && best.is_none_or(|(b, _)| sse < b) {
                best = Some((sse, [e, ln_a, alpha]));
            }
        }
    }
    let (mut sse, mut theta) =
        best.ok_or_else(|| GlpError::InvalidArgument("degenerate compute values".into()))?;

    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_LM_ITERS {
        let [e, ln_a, alpha] = theta;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&x, &l) in xs.iter().zip(&ls) {
            let p = (ln_a - alpha * x).exp();
            let q = e + p;
            let r = l.ln() - q.ln();
            let jac = [-1.0 / q, -p / q, x * p / q];
            for a in 0..3 {
                jtr[a] += jac[a] * r;
                for b in 0..3 {
                    jtj[a][b] += jac[a] * jac[b];
                }
            }
        }
        let grad_norm = jtr.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < 1e-14 {
            converged = true;
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let delta = match solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) {
                Some(d) => d,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand = [
                (e + delta[0]).clamp(0.0, e_max),
                ln_a + delta[1],
                alpha + delta[2],
            ];
            let cand_sse = log_sse(&xs, &ls, cand[0], cand[1], cand[2]);
            if cand_sse.is_finite() && cand_sse <= sse {
                let step = (0..3).map(|k| (cand[k] - theta[k]).abs()).fold(0.0, f64::max);
                let rel = (sse - cand_sse) / sse.max(1e-300);
                theta = cand;
                sse = cand_sse;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if step < 1e-13 || rel < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left at any damping: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let [e, ln_a, alpha] = theta;
    let a = ln_a.exp();
    let residual = (xs
        .iter()
        .zip(&ls)
        .map(|(&x, &l)| (l - e - a * (-alpha * x).exp()).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(PowerLawFit {
        e,
        a,
        alpha,
        residual,
        converged,
    })
}

/// `f(L) = b + m·L` fitted by ordinary least squares, with standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearLossMap {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
}

impl LinearLossMap {
    pub fn predict(&self, loss: f64) -> f64 {
        self.intercept + self.slope * loss
    }
}

pub fn fit_linear_map(losses: &[f64], metrics: &[f64]) -> Result<LinearLossMap> {
    if losses.len() != metrics.len() || losses.len() < 2 {
        return Err(GlpError::InvalidArgument(format!(
            "linear map needs >= 2 paired points, got {} losses and {} metrics",
            losses.len(),
            metrics.len()
        )));
    }
    let (slope, intercept) = ols(losses, metrics)
        .ok_or_else(|| GlpError::InvalidArgument("all losses identical".into()))?;
    let n = losses.len() as f64;
    let (se_intercept, se_slope) = if losses.len() > 2 {
        let mx = losses.iter().sum::<f64>() / n;
        let sxx: f64 = losses.iter().map(|x| (x - mx).powi(2)).sum();
        let s2 = losses
            .iter()
            .zip(metrics)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum::<f64>()
            / (n - 2.0);
        ((s2 * (1.0 / n + mx * mx / sxx)).sqrt(), (s2 / sxx).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(LinearLossMap {
        intercept,
        slope,
        se_intercept,
        se_slope,
    })
}

/// Compute at which a non-increasing frontier first reaches `loss`, by
/// linear interpolation in `log C`. `None` when the loss is never reached.
pub fn compute_at_loss(frontier: &[(f64, f64)], loss: f64) -> Option<f64> {
    let first = frontier.first()?;
    if first.1 <= loss {
        return Some(first.0);
    }
    for w in frontier.windows(2) {
        let ((c0, l0), (c1, l1)) = (w[0], w[1]);
        if l1 <= loss {
            let f = (l0 - loss) / (l0 - l1);
            return Some((c0.ln() + f * (c1.ln() - c0.ln())).exp());
        }
    }
    None
}

/// `C_a(L) / C_b(L)` at each requested loss where both frontiers reach it.
pub fn matched_loss_flops_ratio(
    frontier_a: &[(f64, f64)],
    frontier_b: &[(f64, f64)],
    losses: &[f64],
) -> Vec<(f64, f64)> {
    losses
        .iter()
        .filter_map(|&l| {
            let a = compute_at_loss(frontier_a, l)?;
            let b = compute_at_loss(frontier_b, l)?;
            Some((l, a / b))
        })
        .collect()
}

/// Parses `step,flops,loss` text into `(flops, loss)` pairs.
pub fn parse_loss_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("step,flops,loss") {
        return Err(GlpError::Parse {
            what: "loss csv",
            detail: "missing `step,flops,loss` header".into(),
        });
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || GlpError::Parse {
                what: "loss csv",
                detail: format!("line {}: {line:?}", i + 2),
            };
            if f.len() != 3 {
                return Err(bad());
            }
            let c: u128 = f[1].trim().parse().map_err(|_| bad())?;
            let l: f64 = f[2].trim().parse().map_err(|_| bad())?;
            Ok((c as f64, l))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn synthetic(e: f64, a: f64, alpha: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let c = 10f64.powf(14.0 + 5.0 * i as f64 / (n - 1) as f64);
                (c, e + a * c.powf(-alpha))
            })
            .collect()
    }

    #[test]
    fn flops_are_exact() {
        assert_eq!(flops_estimate(0, 5), 0);
        assert_eq!(flops_estimate(1_000_000, 1_000_000), 6_000_000_000_000);
        assert_eq!(flops_estimate(1 << 40, 1 << 50), 6u128 << 90);
        assert_eq!(flops_estimate(u64::MAX, u64::MAX), u128::MAX);
        let c = flops_estimate(3_300_000_000, 1_000_000_000) as f64;
        assert!((c / 2e19 - 1.0).abs() < 0.02);
    }

    #[test]
    fn frontier_single_and_nested_curves() {
        let a = vec![(1.0, 5.0), (2.0, 6.0), (3.0, 4.0), (4.0, 4.0), (5.0, 3.0)];
        assert_eq!(compute_frontier(&[a.clone()]).unwrap(), vec![(1.0, 5.0), (3.0, 4.0), (5.0, 3.0)]);
        let low: Vec<_> = a.iter().map(|&(c, l)| (c, l - 10.0)).collect();
        let f = compute_frontier(&[a, low.clone()]).unwrap();
        assert_eq!(f, compute_frontier(&[low]).unwrap());
    }

    #[test]
    fn power_law_noiseless_recovery() {
        let fit = fit_power_law(&synthetic(0.52, 435.1, 0.169, 30)).unwrap();
        assert!((fit.e / 0.52 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.a / 435.1 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.alpha / 0.169 - 1.0).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn zero_floor_is_loglinear() {
        let pts = synthetic(0.0, 20.0, 0.3, 12);
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.alpha - 0.3).abs() < 1e-6, "{fit:?}");
        assert!(fit.e < 1e-6);
    }

    #[test]
    fn scale_equivariance() {
        let pts = synthetic(0.52, 435.1, 0.169, 25);
        let s = 1e3;
        let scaled: Vec<_> = pts.iter().map(|&(c, l)| (c * s, l)).collect();
        let f1 = fit_power_law(&pts).unwrap();
        let f2 = fit_power_law(&scaled).unwrap();
        assert!((f1.e - f2.e).abs() < 1e-6);
        assert!((f1.alpha - f2.alpha).abs() < 1e-6);
        assert!((f2.a / (f1.a * s.powf(f1.alpha)) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn power_law_rejects_bad_input() {
        assert!(fit_power_law(&synthetic(0.5, 1.0, 0.2, 3)).is_err());
        assert!(fit_power_law(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn linear_map_cases() {
        let m = fit_linear_map(&[1.0, 3.0], &[2.0, 6.0]).unwrap();
        assert!((m.slope - 2.0).abs() < 1e-12 && m.intercept.abs() < 1e-12);
        let c = fit_linear_map(&[1.0, 2.0, 3.0], &[0.7, 0.7, 0.7]).unwrap();
        assert!(c.slope.abs() < 1e-15 && (c.intercept - 0.7).abs() < 1e-15);

        let mut rng = Rng::new(8);
        let xs: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 / 50.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 - 0.8 * x + 0.01 * rng.normal()).collect();
        let f = fit_linear_map(&xs, &ys).unwrap();
        assert!((f.slope + 0.8).abs() <= 3.0 * f.se_slope);
        assert!((f.intercept - 0.3).abs() <= 3.0 * f.se_intercept);
    }

    #[test]
    fn csv_roundtrip_and_ratio() {
        let text = "step,flops,loss\n0,600,2.5\n1,1200,2.25\n";
        assert_eq!(parse_loss_csv(text).unwrap(), vec![(600.0, 2.5), (1200.0, 2.25)]);
        assert!(parse_loss_csv("a,b\n").is_err());
        let fa = vec![(1.0, 3.0), (100.0, 1.0)];
        let fb = vec![(10.0, 3.0), (1000.0, 1.0)];
        let r = matched_loss_flops_ratio(&fa, &fb, &[2.0, 0.5]);
        assert_eq!(r.len(), 1);
        assert!((r[0].1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ema_tracks_constant() {
        let s = ema_smooth(&[2.0; 10], 50.0);
        assert!(s.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let h = ema_smooth(&[0.0, 1.0], 1.0);
        assert_eq!(h[0], 0.0);
        assert!((h[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn warmup_prefix_dropped() {
        let v: Vec<usize> = (0..250).collect();
        assert_eq!(drop_warmup(&v, 0.01)[0], 3);
        assert_eq!(drop_warmup(&v, 0.01).len(), 247);
        assert!(drop_warmup(&v[..0], 0.01).is_empty());
    }
}
