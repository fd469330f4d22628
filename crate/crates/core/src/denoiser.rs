// SPDX-License-Identifier: MIT OR Apache-2.0

//! The activation denoiser: a residual stack of pre-normalized SwiGLU
//! blocks whose gate pre-activations are scaled by `1 + s(t)`, where `s` is a
//! per-block linear read-out of a shared timestep embedding.
//!
//! ```text
//! x      = z · W_inᵀ
//! c      = mlp(sinusoid(t) [+ sinusoid(layer)])
//! block: n = rmsnorm(x) ⊙ g
//!        h = silu((n · W_gateᵀ) ⊙ (1 + c · W_condᵀ)) ⊙ (n · W_upᵀ)   <- meta-neurons
//!        x = x + h · W_downᵀ
//! û      = (rmsnorm(x) ⊙ g_out) · W_outᵀ
//! ```
//!
//! `W_cond` starts at zero, so a fresh model ignores `t`.

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{self, ModelKind};
use crate::error::{GlpError, Result};
use crate::ops::{self, silu};
use crate::rng::Rng;
use crate::tensor::Matrix;
use std::path::Path;

/// Number of sinusoid frequencies; the feature vector holds a sine and a
/// cosine per frequency.
pub const TIME_FREQS: usize = 32;
pub const TIME_FEATURES: usize = 2 * TIME_FREQS;
pub const FREQ_MIN: f64 = 1.0;
pub const FREQ_MAX: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub d_act: usize,
    pub width: usize,
    pub expansion: usize,
    pub n_blocks: usize,
    pub multi_layer: bool,
    pub n_source_layers: usize,
}

impl DenoiserConfig {
    /// Width `2·d_act`, expansion `2·width`.
    pub fn new(d_act: usize, n_blocks: usize) -> Self {
        Self {
            d_act,
            width: 2 * d_act,
            expansion: 4 * d_act,
            n_blocks,
            multi_layer: false,
            n_source_layers: 0,
        }
    }

    pub fn multi_layer(mut self, n_source_layers: usize) -> Self {
        self.multi_layer = true;
        self.n_source_layers = n_source_layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_act == 0 || self.width == 0 || self.expansion == 0 || self.n_blocks == 0 {
            return Err(GlpError::InvalidArgument(format!(
                "denoiser dimensions must be positive: {self:?}"
            )));
        }
        if self.multi_layer && self.n_source_layers == 0 {
            return Err(GlpError::InvalidArgument(
                "multi-layer denoiser needs n_source_layers >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn meta_neuron_count(&self) -> usize {
        self.n_blocks * self.expansion
    }

    fn words(&self) -> Vec<u64> {
        vec![
            self.d_act as u64,
            self.width as u64,
            self.expansion as u64,
            self.n_blocks as u64,
            self.multi_layer as u64,
            self.n_source_layers as u64,
        ]
    }

    fn from_words(w: &[u64]) -> Result<Self> {
        if w.len() != 6 {
            return Err(GlpError::Parse {
                what: "denoiser config",
                detail: format!("expected 6 words, found {}", w.len()),
            });
        }
        let cfg = Self {
            d_act: w[0] as usize,
            width: w[1] as usize,
            expansion: w[2] as usize,
            n_blocks: w[3] as usize,
            multi_layer: w[4] != 0,
            n_source_layers: w[5] as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exact number of trainable scalars for `config`.
pub fn param_count(config: &DenoiserConfig) -> u64 {
    let d = config.d_act as u64;
    let w = config.width as u64;
    let e = config.expansion as u64;
    let b = config.n_blocks as u64;
    let io = 2 * d * w + w;
    let time = TIME_FEATURES as u64 * w + w + w * w + w;
    let block = w + 4 * w * e;
    io + time + b * block
}

fn frequencies() -> [f64; TIME_FREQS] {
    let mut f = [0.0; TIME_FREQS];
    let ratio = (FREQ_MAX / FREQ_MIN).ln();
    for (k, v) in f.iter_mut().enumerate() {
        *v = FREQ_MIN * (ratio * k as f64 / (TIME_FREQS - 1) as f64).exp();
    }
    f
}

/// `[sin(f_k x) …, cos(f_k x) …]` with `f_k` log-spaced over `[1, 1e4]`.
pub fn sinusoid(x: f64) -> Vec<f64> {
    let freqs = frequencies();
    let mut out = Vec::with_capacity(TIME_FEATURES);
    out.extend(freqs.iter().map(|f| (f * x).sin()));
    out.extend(freqs.iter().map(|f| (f * x).cos()));
    out
}

/// Largest frequency; each sinusoid feature is `FREQ_MAX`-Lipschitz in `t`.
pub fn sinusoid_lipschitz_l2() -> f64 {
    frequencies().iter().map(|f| f * f).sum::<f64>().sqrt()
}

/// Conditioning vector for one `(t, layer)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CondEmbedding {
    /// Sinusoidal features, each in `[-1, 1]` (in `[-2, 2]` when a layer
    /// code is added).
    pub features: Vec<f64>,
    /// Output of the embedding MLP; width `config.width`.
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub norm: Matrix,
    pub gate: Matrix,
    pub up: Matrix,
    pub down: Matrix,
    pub cond: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub in_proj: Matrix,
    pub time_fc1: Matrix,
    pub time_b1: Matrix,
    pub time_fc2: Matrix,
    pub time_b2: Matrix,
    pub blocks: Vec<Block>,
    pub out_norm: Matrix,
    pub out_proj: Matrix,
}

/// Forward result. `taps[b]` is block `b`'s `n × expansion` meta-neuron
/// matrix when taps were requested.
#[derive(Clone, Debug)]
pub struct DenoiserOutput {
    pub velocity: Matrix,
    pub taps: Option<Vec<Matrix>>,
}

fn scaled_normal(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let s = 1.0 / (cols as f64).sqrt();
    rng.normal_matrix(rows, cols).scale(s)
}

impl DenoiserModel {
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let (d, w, e) = (config.d_act, config.width, config.expansion);
        let in_proj = scaled_normal(&mut rng, w, d);
        let time_fc1 = scaled_normal(&mut rng, w, TIME_FEATURES);
        let time_fc2 = scaled_normal(&mut rng, w, w);
        let blocks = (0..config.n_blocks)
            .map(|_| Block {
                norm: Matrix::filled(1, w, 1.0),
                gate: scaled_normal(&mut rng, e, w),
                up: scaled_normal(&mut rng, e, w),
                down: scaled_normal(&mut rng, w, e),
                cond: Matrix::zeros(e, w),
            })
            .collect();
        let out_proj = scaled_normal(&mut rng, d, w);
        Ok(Self {
            config,
            in_proj,
            time_fc1,
            time_b1: Matrix::zeros(1, w),
            time_fc2,
            time_b2: Matrix::zeros(1, w),
            blocks,
            out_norm: Matrix::filled(1, w, 1.0),
            out_proj,
        })
    }

    /// Parameter tensors in declaration order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut v = vec![
            &self.in_proj,
            &self.time_fc1,
            &self.time_b1,
            &self.time_fc2,
            &self.time_b2,
        ];
        for b in &self.blocks {
            v.extend([&b.norm, &b.gate, &b.up, &b.down, &b.cond]);
        }
        v.extend([&self.out_norm, &self.out_proj]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![
            &mut self.in_proj,
            &mut self.time_fc1,
            &mut self.time_b1,
            &mut self.time_fc2,
            &mut self.time_b2,
        ];
        for b in &mut self.blocks {
            v.extend([&mut b.norm, &mut b.gate, &mut b.up, &mut b.down, &mut b.cond]);
        }
        v.extend([&mut self.out_norm, &mut self.out_proj]);
        v
    }

    /// Names matching [`Self::params`], for diagnostics.
    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["in_proj", "time_fc1", "time_b1", "time_fc2", "time_b2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.blocks.len() {
            for n in ["norm", "gate", "up", "down", "cond"] {
                v.push(format!("blocks.{i}.{n}"));
            }
        }
        v.push("out_norm".into());
        v.push("out_proj".into());
        v
    }

    pub fn num_params(&self) -> u64 {
        self.params().iter().map(|p| p.len() as u64).sum()
    }

    /// Replaces all parameters, in declaration order.
    pub fn set_params(&mut self, values: Vec<Matrix>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(GlpError::shape(
                "set_params",
                format!("{} tensors for {} slots", values.len(), slots.len()),
            ));
        }
        for (slot, v) in slots.iter_mut().zip(&values) {
            if slot.shape() != v.shape() {
                return Err(GlpError::shape(
                    "set_params",
                    format!("{:?} vs {:?}", slot.shape(), v.shape()),
                ));
            }
        }
        for (slot, v) in slots.into_iter().zip(values) {
            *slot = v;
        }
        Ok(())
    }

    /// Raw sinusoidal conditioning features for one row.
    pub fn cond_features(&self, t: f64, layer: Option<usize>) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(GlpError::TimestepOutOfRange(t));
        }
        let mut f = sinusoid(t);
        match (self.config.multi_layer, layer) {
            (true, Some(l)) => {
                if l >= self.config.n_source_layers {
                    return Err(GlpError::InvalidArgument(format!(
                        "layer {l} outside 0..{}",
                        self.config.n_source_layers
                    )));
                }
                for (a, b) in f.iter_mut().zip(sinusoid(l as f64)) {
                    *a += b;
                }
            }
            (true, None) => {
                return Err(GlpError::InvalidArgument(
                    "multi-layer denoiser requires a layer index".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(GlpError::InvalidArgument(
                    "single-layer denoiser takes no layer index".into(),
                ))
            }
            (false, None) => {}
        }
        Ok(f)
    }

    fn embed_features(&self, features: &Matrix) -> Matrix {
        let h = features.matmul_t(&self.time_fc1).add_row(self.time_b1.as_slice());
        h.map(silu)
            .matmul_t(&self.time_fc2)
            .add_row(self.time_b2.as_slice())
    }

    pub fn timestep_embed(&self, t: f64, layer: Option<usize>) -> Result<CondEmbedding> {
        let features = self.cond_features(t, layer)?;
        let embedding = self
            .embed_features(&Matrix::row_vector(&features))
            .into_vec();
        Ok(CondEmbedding {
            features,
            embedding,
        })
    }

    fn feature_matrix(&self, n: usize, t: &[f64], layer: Option<&[usize]>) -> Result<Matrix> {
        let lt = t.len();
        let ll = layer.map_or(1, |l| l.len());
        if !(lt == 1 || lt == n) || !(ll == 1 || ll == n) || lt == 0 {
            return Err(GlpError::shape(
                "denoise_forward",
                format!("{n} rows with {lt} timesteps and {ll} layer indices"),
            ));
        }
        let m = lt.max(ll);
        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let ti = t[if lt == 1 { 0 } else { i }];
            let li = layer.map(|l| l[if ll == 1 { 0 } else { i }]);
            rows.push(self.cond_features(ti, li)?);
        }
        Ok(Matrix::from_rows(&rows))
    }

    /// Velocity prediction. `t` (and `layer`) hold either one shared value or
    /// one value per row.
    pub fn forward(
        &self,
        z: &Matrix,
        t: &[f64],
        layer: Option<&[usize]>,
        tap: bool,
    ) -> Result<DenoiserOutput> {
        if z.cols() != self.config.d_act {
            return Err(GlpError::shape(
                "denoise_forward",
                format!("input has {} columns, model expects {}", z.cols(), self.config.d_act),
            ));
        }
        if !z.all_finite() {
            return Err(GlpError::NonFiniteInput("denoise_forward"));
        }
        let features = self.feature_matrix(z.rows(), t, layer)?;
        let cond = self.embed_features(&features);
        let shared = cond.rows() == 1;
        let mut x = z.matmul_t(&self.in_proj);
        let mut taps = tap.then(|| Vec::with_capacity(self.blocks.len()));
        for b in &self.blocks {
            let (xn, _) = ops::rmsnorm(&x, b.norm.as_slice());
            let modulation = cond.matmul_t(&b.cond).map(|s| 1.0 + s);
            let gate_pre = xn.matmul_t(&b.gate);
            let gate = if shared {
                gate_pre.mul_row(modulation.as_slice())
            } else {
                gate_pre.hadamard(&modulation)
            };
            let up = xn.matmul_t(&b.up);
            let h = ops::swiglu(&gate, &up);
            x.add_assign(&h.matmul_t(&b.down));
            if let Some(taps) = taps.as_mut() {
                taps.push(h);
            }
        }
        let (xn, _) = ops::rmsnorm(&x, self.out_norm.as_slice());
        Ok(DenoiserOutput {
            velocity: xn.matmul_t(&self.out_proj),
            taps,
        })
    }

    pub fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix> {
        Ok(self.forward(z, &[t], None, false)?.velocity)
    }

    /// Registers every parameter on `tape`, in declaration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Taped forward with per-row conditioning features (`n × TIME_FEATURES`).
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], z: Var, features: Var) -> Var {
        let [in_proj, fc1, b1, fc2, b2] = [vars[0], vars[1], vars[2], vars[3], vars[4]];
        let h = tape.matmul_t(features, fc1);
        let h = tape.add_row(h, b1);
        let h = tape.silu(h);
        let h = tape.matmul_t(h, fc2);
        let cond = tape.add_row(h, b2);
        let mut x = tape.matmul_t(z, in_proj);
        for i in 0..self.blocks.len() {
            let base = 5 + 5 * i;
            let [norm, gate, up, down, cproj] =
                [vars[base], vars[base + 1], vars[base + 2], vars[base + 3], vars[base + 4]];
            let xn = tape.rmsnorm(x, norm);
            let s = tape.matmul_t(cond, cproj);
            let modulation = tape.one_plus(s);
            let gp = tape.matmul_t(xn, gate);
            let g = tape.mul(gp, modulation);
            let u = tape.matmul_t(xn, up);
            let g = tape.silu(g);
            let hh = tape.mul(g, u);
            let dx = tape.matmul_t(hh, down);
            x = tape.add(x, dx);
        }
        let n = vars.len();
        let xn = tape.rmsnorm(x, vars[n - 2]);
        tape.matmul_t(xn, vars[n - 1])
    }

    /// Per-row conditioning feature matrix for taped training.
    pub fn training_features(&self, t: &[f64], layer: Option<&[usize]>) -> Result<Matrix> {
        self.feature_matrix(t.len(), t, layer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(
            path,
            ModelKind::Denoiser,
            &self.config.words(),
            &self.params(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::read(path)?;
        ck.expect_kind(ModelKind::Denoiser, path)?;
        let config = DenoiserConfig::from_words(&ck.config)?;
        let mut model = Self::init(config, 0)?;
        model.set_params(ck.tensors)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perturbed(cfg: DenoiserConfig, seed: u64) -> DenoiserModel {
        let mut m = DenoiserModel::init(cfg, seed).unwrap();
        let mut rng = Rng::new(seed + 1);
        for p in m.params_mut() {
            let noise = rng.normal_matrix(p.rows(), p.cols()).scale(0.3);
            p.add_assign(&noise);
        }
        m
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = DenoiserConfig::new(4, 2);
        assert_eq!(
            DenoiserModel::init(cfg.clone(), 3).unwrap(),
            DenoiserModel::init(cfg, 3).unwrap()
        );
    }

    #[test]
    fn hand_counted_parameters() {
        // d=16, w=32, e=64, 3 blocks
        // in 16·32 + out 32·16 + out_norm 32                      = 1056
        // time: 64·32 + 32 + 32·32 + 32                           = 3136
        // block: norm 32 + gate/up/cond 3·(64·32) + down 32·64    = 8224, ×3 = 24672
        let cfg = DenoiserConfig {
            d_act: 16,
            width: 32,
            expansion: 64,
            n_blocks: 3,
            multi_layer: false,
            n_source_layers: 0,
        };
        assert_eq!(param_count(&cfg), 1056 + 3136 + 24672);
        assert_eq!(DenoiserModel::init(cfg.clone(), 0).unwrap().num_params(), param_count(&cfg));
        assert_eq!(DenoiserConfig::new(16, 3), cfg);
    }

    #[test]
    fn doubling_blocks_doubles_block_term() {
        let a = DenoiserConfig::new(8, 2);
        let b = DenoiserConfig::new(8, 4);
        let per_block = param_count(&DenoiserConfig::new(8, 2)) - param_count(&DenoiserConfig::new(8, 1));
        assert_eq!(param_count(&b) - param_count(&a), 2 * per_block);
    }

    #[test]
    fn reference_scale_count() {
        let cfg = DenoiserConfig {
            d_act: 2048,
            width: 4096,
            expansion: 8192,
            n_blocks: 24,
            multi_layer: false,
            n_source_layers: 0,
        };
        let n = param_count(&cfg) as f64;
        assert!((n / 1e9 - 3.3).abs() < 0.05, "{n}");
        let big = DenoiserConfig {
            d_act: 4096,
            width: 8192,
            expansion: 16384,
            n_blocks: 6,
            ..cfg
        };
        assert_eq!(big.meta_neuron_count(), 98_304);
    }

    #[test]
    fn zero_conditioning_makes_output_time_independent() {
        let m = DenoiserModel::init(DenoiserConfig::new(4, 2), 1).unwrap();
        let z = Rng::new(2).normal_matrix(5, 4);
        let a = m.velocity(&z, 0.1).unwrap();
        let b = m.velocity(&z, 0.9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (5, 4));
    }

    #[test]
    fn hand_computed_tiny_model() {
        // 1 block, d=1, width 2, expansion 2, every weight set by hand.
        let cfg = DenoiserConfig {
            d_act: 1,
            width: 2,
            expansion: 2,
            n_blocks: 1,
            multi_layer: false,
            n_source_layers: 0,
        };
        let mut m = DenoiserModel::init(cfg, 0).unwrap();
        m.in_proj = Matrix::from_rows(&[[1.0], [-2.0]]);
        m.blocks[0].norm = Matrix::from_rows(&[[1.0, 0.5]]);
        m.blocks[0].gate = Matrix::from_rows(&[[1.0, 0.0], [0.5, 1.0]]);
        m.blocks[0].up = Matrix::from_rows(&[[0.0, 1.0], [2.0, -1.0]]);
        m.blocks[0].down = Matrix::from_rows(&[[1.0, 1.0], [0.0, -1.0]]);
        m.out_norm = Matrix::from_rows(&[[2.0, 1.0]]);
        m.out_proj = Matrix::from_rows(&[[0.5, 0.25]]);
        let z = Matrix::from_rows(&[[1.5]]);
        let got = m.velocity(&z, 0.4).unwrap().get(0, 0);

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (x0, x1) = (1.5, -3.0);
        let r = 1.0 / ((x0 * x0 + x1 * x1) / 2.0 + 1e-6_f64).sqrt();
        let (n0, n1) = (x0 * r * 1.0, x1 * r * 0.5);
        let (g0, g1) = (n0, 0.5 * n0 + n1);
        let (u0, u1) = (n1, 2.0 * n0 - n1);
        let (h0, h1) = (g0 * sig(g0) * u0, g1 * sig(g1) * u1);
        let (y0, y1) = (x0 + h0 + h1, x1 - h1);
        let r2 = 1.0 / ((y0 * y0 + y1 * y1) / 2.0 + 1e-6_f64).sqrt();
        let want = 0.5 * (y0 * r2 * 2.0) + 0.25 * (y1 * r2 * 1.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let m = perturbed(DenoiserConfig::new(3, 2), 4);
        let mut rng = Rng::new(5);
        let z = rng.normal_matrix(6, 3);
        let t: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let plain = m.forward(&z, &t, None, false).unwrap().velocity;
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let fv = tape.constant(m.training_features(&t, None).unwrap());
        let out = m.forward_tape(&mut tape, &vars, zv, fv);
        assert!(tape.value(out).sub(&plain).max_abs() < 1e-12);
    }

    #[test]
    fn zeroed_down_projections_reduce_to_projections() {
        let mut m = perturbed(DenoiserConfig::new(3, 3), 8);
        for b in &mut m.blocks {
            b.down = Matrix::zeros(b.down.rows(), b.down.cols());
        }
        let z = Rng::new(1).normal_matrix(4, 3);
        let got = m.velocity(&z, 0.3).unwrap();
        let x = z.matmul_t(&m.in_proj);
        let (xn, _) = ops::rmsnorm(&x, m.out_norm.as_slice());
        assert_eq!(got, xn.matmul_t(&m.out_proj));
    }

    #[test]
    fn taps_have_meta_neuron_shape() {
        let m = DenoiserModel::init(DenoiserConfig::new(4, 3), 0).unwrap();
        let z = Rng::new(0).normal_matrix(7, 4);
        let out = m.forward(&z, &[0.5], None, true).unwrap();
        let taps = out.taps.unwrap();
        assert_eq!(taps.len(), 3);
        assert!(taps.iter().all(|h| h.shape() == (7, 16)));
        assert_eq!(taps.len() * taps[0].cols(), m.config.meta_neuron_count());
    }

    #[test]
    fn timestep_embedding_properties() {
        let m = perturbed(DenoiserConfig::new(4, 1), 2);
        let a = m.timestep_embed(0.3, None).unwrap();
        assert_eq!(a, m.timestep_embed(0.3, None).unwrap());
        assert!(a.features.iter().all(|v| (-1.0..=1.0).contains(v)));
        let dt = 1e-7;
        let b = m.timestep_embed(0.3 + dt, None).unwrap();
        let diff: f64 = a
            .features
            .iter()
            .zip(&b.features)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= sinusoid_lipschitz_l2() * dt * (1.0 + 1e-9));
        assert!(matches!(m.timestep_embed(1.5, None), Err(GlpError::TimestepOutOfRange(_))));
        assert!(m.timestep_embed(-0.1, None).is_err());
    }

    #[test]
    fn layer_codes_are_distinct() {
        let m = perturbed(DenoiserConfig::new(4, 1).multi_layer(4), 3);
        let a = m.timestep_embed(0.5, Some(1)).unwrap();
        let b = m.timestep_embed(0.5, Some(2)).unwrap();
        assert_ne!(a.features, b.features);
        assert_ne!(a.embedding, b.embedding);
        assert!(m.timestep_embed(0.5, Some(4)).is_err());
        assert!(m.timestep_embed(0.5, None).is_err());
        let z = Rng::new(3).normal_matrix(2, 4);
        let out = m.forward(&z, &[0.5], Some(&[0, 3]), false).unwrap();
        assert_eq!(out.velocity.shape(), (2, 4));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = DenoiserModel::init(DenoiserConfig::new(4, 1), 0).unwrap();
        assert!(m.velocity(&Matrix::zeros(2, 3), 0.5).is_err());
        let mut z = Matrix::zeros(2, 4);
        z.set(0, 0, f64::NAN);
        assert!(matches!(m.velocity(&z, 0.5), Err(GlpError::NonFiniteInput(_))));
        assert!(m.forward(&Matrix::zeros(3, 4), &[0.1, 0.2], None, false).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.glpw");
        let m = perturbed(DenoiserConfig::new(3, 2).multi_layer(5), 9);
        m.save(&path).unwrap();
        assert_eq!(DenoiserModel::load(&path).unwrap(), m);
    }
}
