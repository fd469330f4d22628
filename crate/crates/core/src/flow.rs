// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flow matching over standardized activations: the training objective, the
//! Euler sampler, SDEdit-style projection, and noisy reconstruction.
//!
//! Interpolant and target, per row:
//! ```text
//! z_t = (1 − t)·z0 + t·ε        u = ε − z0
//! ```
//! Sampling integrates `dz/dt = û(z, t)` from `t = 1` (noise) to `t = 0`.

use crate::autodiff::Tape;
use crate::denoiser::DenoiserModel;
use crate::error::{GlpError, Result};
use crate::linalg::{symmetric_eigen, SymmetricEigen};
use crate::optim::{cosine_warmup_lr, AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::store::Scaler;
use crate::tensor::Matrix;

/// Rows integrated together; bounds working memory during sampling.
const SAMPLE_CHUNK: usize = 4096;

/// Anything that predicts a velocity for a batch at a shared timestep.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix>;
}

impl VelocityField for DenoiserModel {
    fn dim(&self) -> usize {
        self.config.d_act
    }

    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix> {
        DenoiserModel::velocity(self, z, t)
    }
}

/// A multi-layer denoiser pinned to one source layer.
pub struct AtLayer<'a> {
    pub model: &'a DenoiserModel,
    pub layer: usize,
}

impl VelocityField for AtLayer<'_> {
    fn dim(&self) -> usize {
        self.model.config.d_act
    }

    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix> {
        Ok(self.model.forward(z, &[t], Some(&[self.layer]), false)?.velocity)
    }
}

#[derive(Clone, Debug)]
pub struct FlowBatch {
    pub z0: Matrix,
    pub eps: Matrix,
    pub t: Vec<f64>,
    pub z_t: Matrix,
    pub target_u: Matrix,
}

/// Row-wise `(1 − t)·a + t·b`.
pub fn interpolate(a: &Matrix, b: &Matrix, t: &[f64]) -> Result<Matrix> {
    a.ensure_same_shape(b, "interpolate")?;
    if t.len() != a.rows() && t.len() != 1 {
        return Err(GlpError::shape(
            "interpolate",
            format!("{} timesteps for {} rows", t.len(), a.rows()),
        ));
    }
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let tr = t[if t.len() == 1 { 0 } else { r }];
        for ((o, &x), &y) in out.row_mut(r).iter_mut().zip(a.row(r)).zip(b.row(r)) {
            *o = (1.0 - tr) * x + tr * y;
        }
    }
    Ok(out)
}

impl FlowBatch {
    pub fn new(z0: Matrix, eps: Matrix, t: Vec<f64>) -> Result<Self> {
        if t.len() != z0.rows() {
            return Err(GlpError::shape(
                "flow_batch",
                format!("{} timesteps for {} rows", t.len(), z0.rows()),
            ));
        }
        if let Some(&bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(GlpError::TimestepOutOfRange(bad));
        }
        let z_t = interpolate(&z0, &eps, &t)?;
        let target_u = eps.sub(&z0);
        Ok(Self {
            z0,
            eps,
            t,
            z_t,
            target_u,
        })
    }

    /// Draws `t ~ U(0,1)` per row, then `ε ~ N(0, I)`.
    pub fn sample(z0: Matrix, rng: &mut Rng) -> Result<Self> {
        let t = rng.uniform_vec(z0.rows());
        let eps = rng.normal_matrix(z0.rows(), z0.cols());
        Self::new(z0, eps, t)
    }
}

/// Mean squared error of `model` on `batch` and its gradient for every
/// parameter (declaration order).
pub fn flow_loss_and_grads(
    model: &DenoiserModel,
    batch: &FlowBatch,
    layers: Option<&[usize]>,
) -> Result<(f64, Vec<Matrix>)> {
    let features = model.training_features(&batch.t, layers)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let z = tape.constant(batch.z_t.clone());
    let f = tape.constant(features);
    let pred = model.forward_tape(&mut tape, &vars, z, f);
    let target = tape.constant(batch.target_u.clone());
    let loss = tape.mse_loss(pred, target);
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss);
    let params = model.params();
    let out = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take(v, p.shape()))
        .collect();
    Ok((value, out))
}

/// One optimizer step on a raw batch. Returns the loss before the step.
pub fn flow_train_step(
    model: &mut DenoiserModel,
    opt: &mut AdamW,
    batch_raw: &Matrix,
    layers: Option<&[usize]>,
    scaler: &Scaler,
    rng: &mut Rng,
    lr: f64,
) -> Result<f64> {
    let z0 = scaler.apply(batch_raw)?;
    let batch = FlowBatch::sample(z0, rng)?;
    let (loss, grads) = flow_loss_and_grads(model, &batch, layers)?;
    if !loss.is_finite() {
        return Err(GlpError::NonFiniteLoss {
            step: opt.step_count() as usize,
            loss,
        });
    }
    opt.step(&mut model.params_mut(), &grads, lr)?;
    Ok(loss)
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub steps: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub adam: AdamWConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            base_lr: 1e-3,
            warmup_ratio: 0.01,
            adam: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub tokens: u64,
    pub flops: u128,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub n_params: u64,
    pub records: Vec<LossRecord>,
}

impl LossCurve {
    /// `step,flops,loss` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,flops,loss\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{:?}\n", r.step, r.flops, r.loss));
        }
        s
    }
}

/// Trains `model` for `settings.steps` steps (or until `batches` runs dry)
/// with warmup + cosine learning rate. `on_step` sees the model after each
/// update.
pub fn train_glp<I>(
    model: &mut DenoiserModel,
    batches: I,
    scaler: &Scaler,
    settings: &TrainSettings,
    rng: &mut Rng,
    mut on_step: impl FnMut(&DenoiserModel, &LossRecord) -> Result<()>,
) -> Result<LossCurve>
where
    I: IntoIterator<Item = Result<Matrix>>,
{
    let n_params = model.num_params();
    let mut opt = AdamW::new(settings.adam, model.params());
    let mut curve = LossCurve {
        n_params,
        records: Vec::with_capacity(settings.steps),
    };
    let mut tokens: u64 = 0;
    for (step, batch) in batches.into_iter().take(settings.steps).enumerate() {
        let batch = batch?;
        let lr = cosine_warmup_lr(step, settings.steps, settings.base_lr, settings.warmup_ratio)?;
        let loss = flow_train_step(model, &mut opt, &batch, None, scaler, rng, lr)?;
        tokens += batch.rows() as u64;
        let record = LossRecord {
            step,
            tokens,
            flops: crate::scaling::flops_estimate(n_params, tokens),
            loss,
        };
        on_step(model, &record)?;
        curve.records.push(record);
    }
    Ok(curve)
}

/// `n` evenly spaced values from `start` to `end`, endpoints exact.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let last = (n - 1) as f64;
            (0..n)
                .map(|i| start * ((n - 1 - i) as f64 / last) + end * (i as f64 / last))
                .collect()
        }
    }
}

/// Explicit Euler along `grid`: `z ← z + (t_{i+1} − t_i)·v(z, t_i)`.
pub fn euler_integrate<F: VelocityField + ?Sized>(field: &F, z: Matrix, grid: &[f64]) -> Result<Matrix> {
    let mut chunks = Vec::with_capacity(z.rows().div_ceil(SAMPLE_CHUNK));
    for start in (0..z.rows()).step_by(SAMPLE_CHUNK) {
        let mut zc = z.slice_rows(start, (start + SAMPLE_CHUNK).min(z.rows()));
        for w in grid.windows(2) {
            let v = field.velocity(&zc, w[0])?;
            zc.axpy(w[1] - w[0], &v);
        }
        chunks.push(zc);
    }
    if chunks.is_empty() {
        return Ok(z);
    }
    Matrix::vstack(&chunks)
}

/// Draws `n` samples: `z ~ N(0, I)` at `t = 1`, `num_steps` Euler steps on a
/// uniform grid to `t = 0`, then de-standardized.
pub fn euler_sample<F: VelocityField + ?Sized>(
    field: &F,
    n: usize,
    num_steps: usize,
    scaler: &Scaler,
    seed: u64,
) -> Result<Matrix> {
    if num_steps == 0 {
        return Err(GlpError::InvalidArgument("num_steps must be at least 1".into()));
    }
    let z = Rng::new(seed).normal_matrix(n, field.dim());
    let out = euler_integrate(field, z, &linspace(1.0, 0.0, num_steps + 1))?;
    if !out.all_finite() {
        return Err(GlpError::NonFiniteInput("euler_sample output"));
    }
    scaler.invert(&out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeditParams {
    pub t_start: f64,
    pub num_steps: usize,
    pub seed: u64,
    /// One noise row shared by every input row instead of independent rows.
    pub shared_noise: bool,
}

impl Default for SdeditParams {
    fn default() -> Self {
        Self {
            t_start: 0.5,
            num_steps: 20,
            seed: 0,
            shared_noise: false,
        }
    }
}

/// Adds `alpha·w`, standardizes, noises to `t_start`, integrates back to 0
/// over `linspace(t_start, 0, num_steps)`, and de-standardizes.
pub fn sdedit_project<F: VelocityField + ?Sized>(
    field: &F,
    acts_raw: &Matrix,
    steer_vec: &[f64],
    alpha: f64,
    params: &SdeditParams,
    scaler: &Scaler,
) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&params.t_start) {
        return Err(GlpError::TimestepOutOfRange(params.t_start));
    }
    if params.num_steps == 0 {
        return Err(GlpError::InvalidArgument("num_steps must be at least 1".into()));
    }
    if steer_vec.len() != acts_raw.cols() || acts_raw.cols() != field.dim() {
        return Err(GlpError::shape(
            "sdedit_project",
            format!(
                "acts {} cols, steering vector {}, field {}",
                acts_raw.cols(),
                steer_vec.len(),
                field.dim()
            ),
        ));
    }
    if !alpha.is_finite() {
        return Err(GlpError::InvalidArgument(format!("alpha must be finite, got {alpha}")));
    }
    let shift: Vec<f64> = steer_vec.iter().map(|w| alpha * w).collect();
    let edited = acts_raw.add_row(&shift);
    let z = scaler.apply(&edited)?;
    let mut rng = Rng::new(params.seed);
    let noise = if params.shared_noise {
        let row = rng.normal_matrix(1, z.cols());
        Matrix::zeros(z.rows(), z.cols()).add_row(row.as_slice())
    } else {
        rng.normal_matrix(z.rows(), z.cols())
    };
    let noisy = interpolate(&z, &noise, &[params.t_start])?;
    let out = euler_integrate(field, noisy, &linspace(params.t_start, 0.0, params.num_steps))?;
    scaler.invert(&out)
}

/// [`sdedit_project`] with a zero steering vector.
pub fn noisy_reconstruct<F: VelocityField + ?Sized>(
    field: &F,
    acts_raw: &Matrix,
    params: &SdeditParams,
    scaler: &Scaler,
) -> Result<Matrix> {
    let zero = vec![0.0; acts_raw.cols()];
    sdedit_project(field, acts_raw, &zero, 0.0, params, scaler)
}

/// The exact minimizer of the flow-matching loss when standardized data is
/// `N(m, S)`:
/// ```text
/// u*(z, t) = (t·I − (1 − t)·S) · C_t⁻¹ · (z − (1 − t)·m) − m,   C_t = (1 − t)²·S + t²·I
/// ```
/// evaluated in the eigenbasis of `S`.
#[derive(Clone, Debug)]
pub struct GaussianField {
    pub mean: Vec<f64>,
    eig: SymmetricEigen,
}

impl GaussianField {
    pub fn new(mean: Vec<f64>, cov: &Matrix) -> Result<Self> {
        if cov.rows() != mean.len() {
            return Err(GlpError::shape("gaussian_field", "mean/covariance size"));
        }
        Ok(Self {
            mean,
            eig: symmetric_eigen(cov)?,
        })
    }

    /// The field for raw data `N(μ, Σ)` seen through `scaler`.
    pub fn standardized(mu: &[f64], sigma: &Matrix, scaler: &Scaler) -> Result<Self> {
        let m: Vec<f64> = mu
            .iter()
            .zip(&scaler.mean)
            .zip(&scaler.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        let inv: Vec<f64> = scaler.std.iter().map(|s| 1.0 / s).collect();
        let s = Matrix::diag(&inv).matmul(sigma).matmul(&Matrix::diag(&inv));
        Self::new(m, &s.symmetrize())
    }

    /// Draws `n` rows of `z_t` from its marginal at `t`.
    pub fn sample_marginal(&self, t: f64, n: usize, rng: &mut Rng) -> Matrix {
        let d = self.mean.len();
        let scales: Vec<f64> = self.eig.values.iter().map(|l| l.max(0.0).sqrt()).collect();
        let z0 = rng
            .normal_matrix(n, d)
            .mul_row(&scales)
            .matmul_t(&self.eig.vectors)
            .add_row(&self.mean);
        let eps = rng.normal_matrix(n, d);
        interpolate(&z0, &eps, &[t]).expect("shapes agree")
    }

    /// Monte-Carlo estimate of the irreducible per-dimension loss
    /// `E‖u − u*(z_t, t)‖² / d` with `t ~ U(0, 1)`.
    pub fn irreducible_loss(&self, n: usize, rng: &mut Rng) -> f64 {
        let d = self.mean.len();
        let scales: Vec<f64> = self.eig.values.iter().map(|l| l.max(0.0).sqrt()).collect();
        let z0 = rng
            .normal_matrix(n, d)
            .mul_row(&scales)
            .matmul_t(&self.eig.vectors)
            .add_row(&self.mean);
        let batch = FlowBatch::sample(z0, rng).expect("valid batch");
        let mut total = 0.0;
        for r in 0..n {
            let zr = batch.z_t.slice_rows(r, r + 1);
            let u = self.velocity(&zr, batch.t[r]).expect("finite");
            total += u
                .as_slice()
                .iter()
                .zip(batch.target_u.row(r))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        total / (n * d) as f64
    }
}

impl VelocityField for GaussianField {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix> {
        let shift: Vec<f64> = self.mean.iter().map(|m| -(1.0 - t) * m).collect();
        let centered = z.add_row(&shift);
        let coef: Vec<f64> = self
            .eig
            .values
            .iter()
            .map(|&l| {
                let l = l.max(0.0);
                let c = (1.0 - t).powi(2) * l + t * t;
                if c > 0.0 {
                    (t - (1.0 - t) * l) / c
                } else {
                    // t = 0 with a degenerate direction: the data is a point.
                    -1.0
                }
            })
            .collect();
        let q = &self.eig.vectors;
        let proj = centered.matmul(q).mul_row(&coef);
        let neg_mean: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        Ok(proj.matmul_t(q).add_row(&neg_mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Probe};
    use crate::denoiser::DenoiserConfig;

    struct Constant(Vec<f64>);

    impl VelocityField for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, z: &Matrix, _t: f64) -> Result<Matrix> {
            Ok(Matrix::zeros(z.rows(), z.cols()).add_row(&self.0))
        }
    }

    #[test]
    fn interpolant_endpoints_are_exact() {
        let mut rng = Rng::new(1);
        let z0 = rng.normal_matrix(4, 3);
        let eps = rng.normal_matrix(4, 3);
        let b = FlowBatch::new(z0.clone(), eps.clone(), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(b.z_t.row(0), z0.row(0));
        assert_eq!(b.z_t.row(1), eps.row(1));
        assert_eq!(b.target_u, eps.sub(&z0));
        assert!(FlowBatch::new(z0, eps, vec![0.0, 1.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn initial_loss_near_two_on_standard_normals() {
        let model = DenoiserModel::init(DenoiserConfig::new(8, 2), 0).unwrap();
        let mut rng = Rng::new(2);
        let z0 = rng.normal_matrix(4000, 8);
        let batch = FlowBatch::sample(z0, &mut rng).unwrap();
        let (loss, _) = flow_loss_and_grads(&model, &batch, None).unwrap();
        // E‖ε − z0‖²/d = 2 plus the variance of the untrained output.
        assert!(loss > 1.8 && loss < 4.0, "{loss}");
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let cfg = DenoiserConfig::new(4, 2);
        let mut model = DenoiserModel::init(cfg, 3).unwrap();
        let mut rng = Rng::new(4);
        for p in model.params_mut() {
            let noise = rng.normal_matrix(p.rows(), p.cols()).scale(0.2);
            p.add_assign(&noise);
        }
        let batch = FlowBatch::sample(rng.normal_matrix(6, 4), &mut rng).unwrap();
        let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
        let f = |ps: &[Matrix]| {
            let mut m = model.clone();
            m.set_params(ps.to_vec()).unwrap();
            flow_loss_and_grads(&m, &batch, None).unwrap()
        };
        let err = grad_check(f, &params, 1e-5, Probe::Random { count: 30, seed: 5 }).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn one_step_touches_every_parameter() {
        let mut model = DenoiserModel::init(DenoiserConfig::new(4, 2), 1).unwrap();
        let before = model.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), model.params());
        let mut rng = Rng::new(2);
        let batch = rng.normal_matrix(32, 4);
        let scaler = Scaler::identity(4);
        let z0 = scaler.apply(&batch).unwrap();
        let fb = FlowBatch::sample(z0, &mut rng.clone()).unwrap();
        let (_, grads) = flow_loss_and_grads(&model, &fb, None).unwrap();
        for (g, name) in grads.iter().zip(model.param_names()) {
            assert!(g.max_abs() > 0.0 || name.starts_with("time_"), "{name} has zero gradient");
        }
        flow_train_step(&mut model, &mut opt, &batch, None, &scaler, &mut rng, 1e-3).unwrap();
        for ((a, b), name) in model.params().iter().zip(before.params()).zip(model.param_names()) {
            if !name.starts_with("time_") {
                assert_ne!(*a, b, "{name} unchanged");
            }
        }
    }

    #[test]
    fn single_euler_step_is_one_full_step() {
        let model = DenoiserModel::init(DenoiserConfig::new(3, 1), 0).unwrap();
        let scaler = Scaler::identity(3);
        let out = euler_sample(&model, 5, 1, &scaler, 9).unwrap();
        let z1 = Rng::new(9).normal_matrix(5, 3);
        let want = z1.sub(&model.velocity(&z1, 1.0).unwrap());
        assert_eq!(out, want);
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let field = Constant(vec![0.5, -1.25, 2.0]);
        let scaler = Scaler::identity(3);
        let one = euler_sample(&field, 4, 1, &scaler, 3).unwrap();
        for steps in [2, 7, 64] {
            let many = euler_sample(&field, 4, steps, &scaler, 3).unwrap();
            assert!(many.sub(&one).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.5, 0.0, 20);
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (0.5, 0.0));
        assert_eq!(linspace(1.0, 0.0, 2), vec![1.0, 0.0]);
    }

    #[test]
    fn sdedit_at_zero_start_returns_edit() {
        let model = DenoiserModel::init(DenoiserConfig::new(3, 1), 0).unwrap();
        let mut rng = Rng::new(1);
        let acts = rng.normal_matrix(6, 3).scale(4.0).add_row(&[1.0, 2.0, 3.0]);
        let scaler = Scaler::fit(&acts).unwrap();
        let w = [1.0, 0.0, -1.0];
        let p = SdeditParams {
            t_start: 0.0,
            ..Default::default()
        };
        let out = sdedit_project(&model, &acts, &w, 0.5, &p, &scaler).unwrap();
        let want = acts.add_row(&[0.5, 0.0, -0.5]);
        for (a, b) in out.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let bad = SdeditParams {
            t_start: 1.2,
            ..Default::default()
        };
        assert!(matches!(
            sdedit_project(&model, &acts, &w, 0.5, &bad, &scaler),
            Err(GlpError::TimestepOutOfRange(_))
        ));
    }

    #[test]
    fn reconstruct_equals_zero_vector_projection() {
        let model = DenoiserModel::init(DenoiserConfig::new(3, 1), 2).unwrap();
        let acts = Rng::new(5).normal_matrix(7, 3);
        let scaler = Scaler::fit(&acts).unwrap();
        let p = SdeditParams::default();
        let a = noisy_reconstruct(&model, &acts, &p, &scaler).unwrap();
        let b = sdedit_project(&model, &acts, &[0.0; 3], 123.0, &p, &scaler).unwrap();
        assert_eq!(a, b);
        let shared = SdeditParams {
            shared_noise: true,
            ..p
        };
        let c = noisy_reconstruct(&model, &acts, &shared, &scaler).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_field_endpoints() {
        let mut rng = Rng::new(3);
        let a = rng.normal_matrix(3, 3);
        let cov = a.matmul_t(&a).add(&Matrix::identity(3).scale(0.1));
        let f = GaussianField::new(vec![1.0, -1.0, 0.5], &cov).unwrap();
        let z = rng.normal_matrix(4, 3);
        // t = 0: z is the data point, so u* = E[ε] − z0 = −z.
        assert!(f.velocity(&z, 0.0).unwrap().add(&z).max_abs() < 1e-10);
        // t = 1: z is pure noise, so u* = z − m.
        let want = z.add_row(&[-1.0, 1.0, -0.5]);
        assert!(f.velocity(&z, 1.0).unwrap().sub(&want).max_abs() < 1e-10);
    }

    #[test]
    fn optimal_field_beats_best_constant_prediction() {
        let f = GaussianField::new(vec![0.3; 2], &Matrix::diag(&[0.5, 2.0])).unwrap();
        let base = f.irreducible_loss(20_000, &mut Rng::new(1));
        // The best constant predicts E[u] = −m and pays Var(ε − z0) = 1 + λ per dim.
        let constant = (1.5 + 3.0) / 2.0;
        assert!(base > 0.0 && base < 0.8 * constant, "{base}");
    }
}
