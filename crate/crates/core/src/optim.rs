// SPDX-License-Identifier: MIT OR Apache-2.0

//! AdamW and the warmup + cosine learning-rate schedule.

use crate::error::{GlpError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators for one parameter list. Owned by a single training
/// loop.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamW {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay update: `p ← p − lr·(m̂/(√v̂+ε) + λ·p)`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(GlpError::shape(
                "adamw_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(GlpError::shape(
                    "adamw_step",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if lr < 0.0 {
            return Err(GlpError::InvalidArgument(format!("negative learning rate {lr}")));
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let ps = p.as_mut_slice();
            for (((pv, &gv), mv), vv) in ps
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * *pv);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr` over `warmup_ratio · total_steps`
/// steps, then half-cosine decay to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, base_lr: f64, warmup_ratio: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(GlpError::InvalidArgument("total_steps must be positive".into()));
    }
    if !(warmup_ratio > 0.0 && warmup_ratio < 1.0) {
        return Err(GlpError::InvalidArgument(format!(
            "warmup_ratio must lie in (0, 1), got {warmup_ratio}"
        )));
    }
    if step > total_steps {
        return Err(GlpError::InvalidArgument(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    let s = step as f64;
    let total = total_steps as f64;
    let warmup = warmup_ratio * total;
    if s < warmup {
        return Ok(base_lr * s / warmup);
    }
    let progress = (s - warmup) / (total - warmup);
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::filled(1, 1, 1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), [&p]);
        opt.step(&mut [&mut p], &[Matrix::filled(1, 1, 1.0)], 0.1).unwrap();
        // m̂ = v̂ = 1 → Δ = 0.1 / (1 + 1e-8)
        assert!((p.get(0, 0) - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_lr_and_zero_grads_leave_params() {
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let orig = p.clone();
        let mut opt = AdamW::new(cfg, [&p]);
        opt.step(&mut [&mut p], &[Matrix::from_rows(&[[3.0, 4.0]])], 0.0).unwrap();
        assert_eq!(p, orig);

        let mut q = Matrix::from_rows(&[[1.0, -2.0]]);
        let mut opt = AdamW::new(AdamWConfig::default(), [&q]);
        for _ in 0..3 {
            opt.step(&mut [&mut q], &[Matrix::zeros(1, 2)], 0.5).unwrap();
        }
        assert_eq!(q, orig);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Matrix::zeros(2, 2);
        let mut opt = AdamW::new(AdamWConfig::default(), [&p]);
        assert!(opt.step(&mut [&mut p], &[Matrix::zeros(1, 2)], 0.1).is_err());
        assert!(opt.step(&mut [&mut p], &[], 0.1).is_err());
    }

    #[test]
    fn schedule_landmarks() {
        let lr = |s| cosine_warmup_lr(s, 1000, 1.0, 0.1).unwrap();
        assert_eq!(lr(0), 0.0);
        assert!((lr(100) - 1.0).abs() < 1e-15);
        assert!(lr(1000).abs() < 1e-15);
        // midpoint of the decay span: 100 + 900/2
        assert!((lr(550) - 0.5).abs() < 1e-12);
        assert!(cosine_warmup_lr(0, 0, 1.0, 0.1).is_err());
    }

    #[test]
    fn schedule_is_continuous_at_warmup_boundary() {
        // warmup = 0.01 · 1000 = 10 steps; compare one-sided limits with a
        // fractional step.
        let total = 1000.0;
        let warmup = 10.0;
        let h = 1e-9;
        let left = 1.0 * (warmup - h) / warmup;
        let progress = h / (total - warmup);
        let right = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        assert!((left - right).abs() < 1e-8);
        assert!((cosine_warmup_lr(10, 1000, 1.0, 0.01).unwrap() - 1.0).abs() <= 1e-12);
    }
}
