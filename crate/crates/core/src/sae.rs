// SPDX-License-Identifier: MIT OR Apache-2.0

//! Top-k sparse autoencoder baseline, trained in the same standardized space
//! as the denoiser.

use std::path::Path;

use crate::autodiff::{Gradients, Tape};
use crate::checkpoint::{self, ModelKind};
use crate::error::{GlpError, Result};
use crate::ops::topk_rows;
use crate::optim::{cosine_warmup_lr, AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::store::Scaler;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SaeConfig {
    pub d_act: usize,
    pub latents: usize,
    pub k: usize,
}

impl SaeConfig {
    /// `8·d` latents with `d/4` active.
    pub fn new(d_act: usize) -> Self {
        Self {
            d_act,
            latents: 8 * d_act,
            k: (d_act / 4).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_act == 0 || self.latents < self.d_act || self.k == 0 || self.k > self.latents {
            return Err(GlpError::Config(format!(
                "sae needs d > 0, m >= d, 1 <= k <= m (d={}, m={}, k={})",
                self.d_act, self.latents, self.k
            )));
        }
        Ok(())
    }
}

/// `recon = topk((x − b)·Wencᵀ + benc)·Wdec + b`. Row `i` of `decoder` is
/// the unit-norm dictionary atom of latent `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    pub config: SaeConfig,
    pub encoder: Matrix,
    pub encoder_bias: Matrix,
    pub decoder: Matrix,
    pub pre_bias: Matrix,
}

fn normalize_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

impl SaeModel {
    /// Random unit atoms, encoder tied to the decoder at init.
    pub fn init(config: SaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut decoder = Rng::new(seed).normal_matrix(config.latents, config.d_act);
        normalize_rows(&mut decoder);
        Ok(Self {
            config,
            encoder: decoder.clone(),
            encoder_bias: Matrix::zeros(1, config.latents),
            decoder,
            pre_bias: Matrix::zeros(1, config.d_act),
        })
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.encoder, &self.encoder_bias, &self.decoder, &self.pre_bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.encoder, &mut self.encoder_bias, &mut self.decoder, &mut self.pre_bias]
    }

    fn check_dim(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.d_act {
            return Err(GlpError::shape(
                "sae",
                format!("expected {} columns, got {}", self.config.d_act, x.cols()),
            ));
        }
        Ok(())
    }

    /// Sparse codes, exactly `k` kept entries per row.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check_dim(x)?;
        let neg: Vec<f64> = self.pre_bias.as_slice().iter().map(|v| -v).collect();
        let pre = x
            .add_row(&neg)
            .matmul_t(&self.encoder)
            .add_row(self.encoder_bias.as_slice());
        Ok(topk_rows(&pre, self.config.k).0)
    }

    pub fn decode(&self, codes: &Matrix) -> Matrix {
        codes.matmul(&self.decoder).add_row(self.pre_bias.as_slice())
    }

    /// Reconstruction in the model's own (standardized) space.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.decode(&self.encode(x)?))
    }

    /// Standardize, reconstruct, de-standardize.
    pub fn reconstruct_raw(&self, acts: &Matrix, scaler: &Scaler) -> Result<Matrix> {
        scaler.invert(&self.reconstruct(&scaler.apply(acts)?)?)
    }

    /// Mean squared error per entry and parameter gradients.
    pub fn loss_and_grads(&self, x: &Matrix) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let p: Vec<_> = self.params().into_iter().map(|m| tape.param(m.clone())).collect();
        let xv = tape.constant(x.clone());
        let centred = tape.sub_row(xv, p[3]);
        let pre = tape.matmul_t(centred, p[0]);
        let pre = tape.add_row(pre, p[1]);
        let codes = tape.topk(pre, self.config.k);
        let dec = tape.matmul(codes, p[2]);
        let recon = tape.add_row(dec, p[3]);
        let loss = tape.mse_loss(recon, xv);
        let value = tape.value(loss).get(0, 0);
        let mut g: Gradients = tape.backward(loss);
        let grads = self
            .params()
            .iter()
            .zip(&p)
            .map(|(m, &v)| g.take(v, m.shape()))
            .collect();
        (value, grads)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = &self.config;
        let words = [c.d_act, c.latents, c.k].map(|v| v as u64);
        checkpoint::write(path, ModelKind::Sae, &words, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::read(path)?;
        ck.expect_kind(ModelKind::Sae, path)?;
        if ck.config.len() != 3 {
            return Err(GlpError::Parse {
                what: "sae config",
                detail: format!("expected 3 words, found {}", ck.config.len()),
            });
        }
        let config = SaeConfig {
            d_act: ck.config[0] as usize,
            latents: ck.config[1] as usize,
            k: ck.config[2] as usize,
        };
        let mut model = Self::init(config, 0)?;
        let slots = model.params_mut();
        if slots.len() != ck.tensors.len() {
            return Err(GlpError::shape("sae checkpoint", "tensor count"));
        }
        for (slot, t) in slots.into_iter().zip(ck.tensors) {
            if slot.shape() != t.shape() {
                return Err(GlpError::shape("sae checkpoint", "tensor shape"));
            }
            *slot = t;
        }
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub struct SaeTrainSettings {
    pub steps: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    /// Abort when the loss stays above its initial value this many steps in a row.
    pub divergence_window: usize,
}

impl Default for SaeTrainSettings {
    fn default() -> Self {
        Self {
            steps: 3000,
            base_lr: 1e-3,
            warmup_ratio: 0.01,
            divergence_window: 500,
        }
    }
}

/// Trains on raw batches standardized by `scaler`; stops after
/// `settings.steps` or when the batches run out. Returns the per-step loss.
pub fn sae_train<I>(
    batches: I,
    config: SaeConfig,
    scaler: &Scaler,
    settings: &SaeTrainSettings,
    seed: u64,
) -> Result<(SaeModel, Vec<f64>)>
where
    I: IntoIterator<Item = Result<Matrix>>,
{
    if scaler.dim() != config.d_act {
        return Err(GlpError::shape("sae_train", "scaler dimension"));
    }
    let root = Rng::new(seed);
    let mut model = SaeModel::init(config, root.derive("sae/init").next_u64())?;
    let mut opt = AdamW::new(AdamWConfig::default(), model.params());
    let mut curve = Vec::with_capacity(settings.steps);
    let mut initial = f64::NAN;
    let mut above = 0;
    for (step, batch) in batches.into_iter().take(settings.steps).enumerate() {
        let x = scaler.apply(&batch?)?;
        if step == 0 {
            // Start the pre-bias at the first batch's mean.
            model.pre_bias = Matrix::row_vector(&x.col_means());
        }
        let (loss, grads) = model.loss_and_grads(&x);
        if !loss.is_finite() {
            return Err(GlpError::NonFiniteLoss { step, loss });
        }
        if step == 0 {
            initial = loss;
        } else if loss > initial {
            above += 1;
            if above >= settings.divergence_window {
                return Err(GlpError::Diverged {
                    step,
                    window: settings.divergence_window,
                });
            }
        } else {
            above = 0;
        }
        let lr = cosine_warmup_lr(step, settings.steps, settings.base_lr, settings.warmup_ratio)?;
        opt.step(&mut model.params_mut(), &grads, lr)?;
        normalize_rows(&mut model.decoder);
        curve.push(loss);
    }
    Ok((model, curve))
}
