// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixed-context MLP language model with one hookable activation.
//!
//! ```text
//! hook   = W_proj · concat(emb[x_{p−k}], …, emb[x_{p−1}]) + b      (d_act)
//! n      = rmsnorm(hook) ⊙ g
//! m      = silu(n · W_gateᵀ) ⊙ (n · W_upᵀ)                         (hidden)
//! y      = hook + m · W_downᵀ
//! logits = (rmsnorm(y) ⊙ g_out) · W_headᵀ
//! ```
//! Position `p` predicts `x_p` from the previous `k` tokens, padded on the
//! left with a BOS id equal to `vocab`. Position 0 sees only BOS and is the
//! special position excluded from streaming and intervention.

use crate::autodiff::Tape;
use crate::checkpoint::{self, ModelKind};
use crate::error::{GlpError, Result};
use crate::ops;
use crate::optim::{cosine_warmup_lr, AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::source::grammar::Document;
use crate::tensor::Matrix;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceLmConfig {
    pub vocab: usize,
    pub embed: usize,
    pub context: usize,
    pub d_act: usize,
    pub hidden: usize,
}

impl Default for SourceLmConfig {
    fn default() -> Self {
        Self {
            vocab: 32,
            embed: 16,
            context: 8,
            d_act: 32,
            hidden: 64,
        }
    }
}

impl SourceLmConfig {
    pub fn bos(&self) -> usize {
        self.vocab
    }

    fn validate(&self) -> Result<()> {
        if [self.vocab, self.embed, self.context, self.d_act, self.hidden].contains(&0) {
            return Err(GlpError::InvalidArgument(format!(
                "source LM dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceLm {
    pub config: SourceLmConfig,
    pub embed: Matrix,
    pub proj: Matrix,
    pub proj_bias: Matrix,
    pub norm: Matrix,
    pub gate: Matrix,
    pub up: Matrix,
    pub down: Matrix,
    pub out_norm: Matrix,
    pub head: Matrix,
}

/// Per-position results of one document's forward pass.
#[derive(Clone, Debug)]
pub struct SourceOutput {
    pub nll: Vec<f64>,
    /// Hook activations actually used (the injected rows when injecting).
    pub hook: Matrix,
    /// Inner SwiGLU units of the block.
    pub mlp: Matrix,
}

impl SourceOutput {
    pub fn mean_nll(&self, skip: usize) -> f64 {
        let tail = &self.nll[skip.min(self.nll.len())..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Context ids for every position of `tokens`, flattened row-major.
pub fn context_ids(tokens: &[usize], k: usize, bos: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(tokens.len() * k);
    for p in 0..tokens.len() {
        ids.extend(last_k(&tokens[..p], k, bos));
    }
    ids
}

fn last_k(history: &[usize], k: usize, bos: usize) -> impl Iterator<Item = usize> + '_ {
    let n = history.len();
    (0..k).map(move |j| {
        let back = k - j;
        if back > n {
            bos
        } else {
            history[n - back]
        }
    })
}

fn scaled_normal(rng: &mut Rng, rows: usize, cols: usize, gain: f64) -> Matrix {
    rng.normal_matrix(rows, cols).scale(gain / (cols as f64).sqrt())
}

impl SourceLm {
    pub fn init(config: SourceLmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let c = &config;
        let embed = rng.normal_matrix(c.vocab + 1, c.embed);
        let proj = scaled_normal(&mut rng, c.d_act, c.context * c.embed, 1.0);
        let gate = scaled_normal(&mut rng, c.hidden, c.d_act, 1.0);
        let up = scaled_normal(&mut rng, c.hidden, c.d_act, 1.0);
        let down = scaled_normal(&mut rng, c.d_act, c.hidden, 1.0);
        // A small head keeps the untrained next-token distribution near uniform.
        let head = scaled_normal(&mut rng, c.vocab, c.d_act, 1e-2);
        Ok(Self {
            proj_bias: Matrix::zeros(1, c.d_act),
            norm: Matrix::filled(1, c.d_act, 1.0),
            out_norm: Matrix::filled(1, c.d_act, 1.0),
            config,
            embed,
            proj,
            gate,
            up,
            down,
            head,
        })
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![
            &self.embed,
            &self.proj,
            &self.proj_bias,
            &self.norm,
            &self.gate,
            &self.up,
            &self.down,
            &self.out_norm,
            &self.head,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.embed,
            &mut self.proj,
            &mut self.proj_bias,
            &mut self.norm,
            &mut self.gate,
            &mut self.up,
            &mut self.down,
            &mut self.out_norm,
            &mut self.head,
        ]
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab) {
            return Err(GlpError::InvalidArgument(format!(
                "token {t} outside vocabulary of {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    /// Hook activations for flattened context ids (`k` per row).
    pub fn hook_from_ids(&self, ids: &[usize]) -> Matrix {
        let k = self.config.context;
        let e = self.config.embed;
        let n = ids.len() / k;
        let mut x = Matrix::zeros(n, k * e);
        for i in 0..n {
            let dst = x.row_mut(i);
            for j in 0..k {
                dst[j * e..(j + 1) * e].copy_from_slice(self.embed.row(ids[i * k + j]));
            }
        }
        x.matmul_t(&self.proj).add_row(self.proj_bias.as_slice())
    }

    /// Everything after the hook: returns `(logits, mlp units)`.
    pub fn head_from_hook(&self, hook: &Matrix) -> (Matrix, Matrix) {
        let (xn, _) = ops::rmsnorm(hook, self.norm.as_slice());
        let g = xn.matmul_t(&self.gate);
        let u = xn.matmul_t(&self.up);
        let m = ops::swiglu(&g, &u);
        let y = hook.add(&m.matmul_t(&self.down));
        let (yn, _) = ops::rmsnorm(&y, self.out_norm.as_slice());
        (yn.matmul_t(&self.head), m)
    }

    /// Per-position NLL and hook activations; `inject` replaces the hook
    /// (one row per position) before the block.
    pub fn source_forward(&self, tokens: &[usize], inject: Option<&Matrix>) -> Result<SourceOutput> {
        self.check_tokens(tokens)?;
        let hook = match inject {
            Some(m) => {
                if m.shape() != (tokens.len(), self.config.d_act) {
                    return Err(GlpError::shape(
                        "source_forward",
                        format!(
                            "inject is {:?} for {} positions of width {}",
                            m.shape(),
                            tokens.len(),
                            self.config.d_act
                        ),
                    ));
                }
                if !m.all_finite() {
                    return Err(GlpError::NonFiniteInput("source_forward inject"));
                }
                m.clone()
            }
            None => self.hook_from_ids(&context_ids(tokens, self.config.context, self.config.bos())),
        };
        let (logits, mlp) = self.head_from_hook(&hook);
        let nll = tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| -ops::log_softmax(logits.row(p))[t])
            .collect();
        Ok(SourceOutput { nll, hook, mlp })
    }

    /// Mean NLL over positions with a full context window.
    pub fn fluency_nll(&self, tokens: &[usize]) -> Result<f64> {
        let k = self.config.context;
        if tokens.len() <= k {
            return Err(GlpError::InvalidArgument(format!(
                "fluency needs more than {k} tokens, got {}",
                tokens.len()
            )));
        }
        Ok(self.source_forward(tokens, None)?.mean_nll(k))
    }

    /// Mean NLL of `tokens[start..]` given everything before it.
    pub fn continuation_nll(&self, tokens: &[usize], start: usize) -> Result<f64> {
        if start >= tokens.len() {
            return Err(GlpError::InvalidArgument("empty continuation".into()));
        }
        Ok(self.source_forward(tokens, None)?.mean_nll(start))
    }

    /// Ancestral sampling at temperature 1. `intervene` maps each step's
    /// hook batch (one row per sequence) to the rows actually used.
    pub fn generate(
        &self,
        prefixes: &[Vec<usize>],
        n_new: usize,
        rng: &mut Rng,
        intervene: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
    ) -> Result<Vec<Vec<usize>>> {
        let mut seqs: Vec<Vec<usize>> = prefixes.to_vec();
        for s in &seqs {
            self.check_tokens(s)?;
        }
        let (k, bos) = (self.config.context, self.config.bos());
        for _ in 0..n_new {
            let ids: Vec<usize> = seqs.iter().flat_map(|s| last_k(s, k, bos)).collect();
            let hook = self.hook_from_ids(&ids);
            let used = intervene(&hook)?;
            if used.shape() != hook.shape() {
                return Err(GlpError::shape("generate", "intervention changed the hook shape"));
            }
            let (logits, _) = self.head_from_hook(&used);
            for (r, s) in seqs.iter_mut().enumerate() {
                let probs: Vec<f64> = ops::log_softmax(logits.row(r)).iter().map(|l| l.exp()).collect();
                s.push(rng.categorical(&probs));
            }
        }
        Ok(seqs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = &self.config;
        let words = [c.vocab, c.embed, c.context, c.d_act, c.hidden].map(|v| v as u64);
        checkpoint::write(path, ModelKind::SourceLm, &words, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::read(path)?;
        ck.expect_kind(ModelKind::SourceLm, path)?;
        let w = &ck.config;
        if w.len() != 5 {
            return Err(GlpError::Parse {
                what: "source LM config",
                detail: format!("expected 5 words, found {}", w.len()),
            });
        }
        let config = SourceLmConfig {
            vocab: w[0] as usize,
            embed: w[1] as usize,
            context: w[2] as usize,
            d_act: w[3] as usize,
            hidden: w[4] as usize,
        };
        let mut lm = Self::init(config, 0)?;
        let slots = lm.params_mut();
        if slots.len() != ck.tensors.len() {
            return Err(GlpError::shape("source LM checkpoint", "tensor count"));
        }
        for (slot, t) in slots.into_iter().zip(ck.tensors) {
            if slot.shape() != t.shape() {
                return Err(GlpError::shape("source LM checkpoint", "tensor shape"));
            }
            *slot = t;
        }
        Ok(lm)
    }

    /// Cross-entropy and gradients on a batch of `(context ids, target)`.
    pub fn loss_and_grads(&self, ids: Vec<usize>, targets: Vec<usize>) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let vars: Vec<_> = self.params().into_iter().map(|p| tape.param(p.clone())).collect();
        let [emb, proj, bias, norm, gate, up, down, out_norm, head] =
            <[_; 9]>::try_from(vars.clone()).expect("nine parameters");
        let x = tape.embed_concat(emb, ids, self.config.context);
        let h = tape.matmul_t(x, proj);
        let hook = tape.add_row(h, bias);
        let xn = tape.rmsnorm(hook, norm);
        let g = tape.matmul_t(xn, gate);
        let g = tape.silu(g);
        let u = tape.matmul_t(xn, up);
        let m = tape.mul(g, u);
        let dm = tape.matmul_t(m, down);
        let y = tape.add(hook, dm);
        let yn = tape.rmsnorm(y, out_norm);
        let logits = tape.matmul_t(yn, head);
        let loss = tape.cross_entropy(logits, targets);
        let value = tape.value(loss).get(0, 0);
        let mut grads = tape.backward(loss);
        let out = vars
            .iter()
            .zip(self.params())
            .map(|(&v, p)| grads.take(v, p.shape()))
            .collect();
        (value, out)
    }
}

#[derive(Clone, Debug)]
pub struct SourceTrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    /// Abort when the loss stays above its initial value this many steps in a row.
    pub divergence_window: usize,
}

impl Default for SourceTrainSettings {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 256,
            base_lr: 3e-3,
            warmup_ratio: 0.02,
            divergence_window: 500,
        }
    }
}

/// Minibatch cross-entropy training on uniformly sampled positions.
/// Returns the model and the per-step training loss.
pub fn train_source_lm(
    docs: &[Document],
    config: SourceLmConfig,
    settings: &SourceTrainSettings,
    seed: u64,
) -> Result<(SourceLm, Vec<f64>)> {
    let total: usize = docs.iter().map(|d| d.tokens.len()).sum();
    if total == 0 {
        return Err(GlpError::InvalidArgument("empty corpus".into()));
    }
    let root = Rng::new(seed);
    let mut lm = SourceLm::init(config, root.derive("source/init").next_u64())?;
    for d in docs {
        lm.check_tokens(&d.tokens)?;
    }
    let mut rng = root.derive("source/batches");
    let mut opt = AdamW::new(AdamWConfig::default(), lm.params());
    let (k, bos) = (lm.config.context, lm.config.bos());
    let mut curve = Vec::with_capacity(settings.steps);
    let mut initial = f64::NAN;
    let mut above = 0;
    for step in 0..settings.steps {
        let mut ids = Vec::with_capacity(settings.batch_size * k);
        let mut targets = Vec::with_capacity(settings.batch_size);
        for _ in 0..settings.batch_size {
            let d = &docs[rng.below(docs.len())].tokens;
            if d.is_empty() {
                continue;
            }
            let p = rng.below(d.len());
            ids.extend(last_k(&d[..p], k, bos));
            targets.push(d[p]);
        }
        let (loss, grads) = lm.loss_and_grads(ids, targets);
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
        opt.step(&mut lm.params_mut(), &grads, lr)?;
        curve.push(loss);
    }
    Ok((lm, curve))
}

/// Mean NLL per predicted token over whole documents (position 0 included).
pub fn corpus_nll(lm: &SourceLm, docs: &[Document]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for d in docs {
        let out = lm.source_forward(&d.tokens, None)?;
        total += out.nll.iter().sum::<f64>();
        count += out.nll.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Mean NLL over positions with a full context window.
pub fn corpus_fluency(lm: &SourceLm, docs: &[Document]) -> Result<f64> {
    let mut total = 0.0;
    for d in docs {
        total += lm.fluency_nll(&d.tokens)?;
    }
    Ok(total / docs.len().max(1) as f64)
}
