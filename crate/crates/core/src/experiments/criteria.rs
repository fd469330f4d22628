// SPDX-License-Identifier: MIT OR Apache-2.0

//! The ten end-to-end checks. Each returns an outcome with a one-line
//! summary and optional diagnostic lines; none of them panics on a failed
//! threshold.

use std::path::Path;
use std::process::Command;

use crate::autodiff::{grad_check, Probe};
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::error::{GlpError, Result};
use crate::flow::{
    euler_sample, flow_loss_and_grads, noisy_reconstruct, train_glp, FlowBatch, GaussianField, SdeditParams,
    TrainSettings, VelocityField,
};
use crate::metrics::{
    delta_lm_loss, frechet_distance, frechet_distance_sq, frechet_gaussian_analytic, roc_auc, roc_auc_pairs,
    GaussianSummary,
};
use crate::probing::{encode_task, run_1d_probes, run_probe, task_suite, CandidateFilter, Encoder, ProbeMode, ProbeTask};
use crate::rng::{derive_seed, Rng};
use crate::scaling::{compute_frontier, drop_warmup, ema_smooth, fit_power_law};
use crate::source::SourceLm;
use crate::store::{decode_activations, encode_activations, stream_activations, EpochBatches, Scaler};
use crate::tensor::Matrix;

use super::steering::{concept_fluency_mean, evaluate_steering, pareto_check, steering_setup, SteerMethod};
use super::world::{train_world_glp, Sizes, Trained, World};

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionOutcome {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub summary: String,
    pub details: Vec<String>,
}

impl CriterionOutcome {
    fn new(id: usize, title: &'static str, passed: bool, summary: String) -> Self {
        Self {
            id,
            title,
            passed,
            summary,
            details: Vec::new(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<24} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.summary
        )
    }
}

pub const SUMMARY_CSV_HEADER: &str = "criterion,title,status,summary";

pub fn summary_csv(outcomes: &[CriterionOutcome]) -> String {
    let mut s = format!("{SUMMARY_CSV_HEADER}\n");
    for o in outcomes {
        s.push_str(&format!(
            "{},{},{},\"{}\"\n",
            o.id,
            o.title,
            if o.passed { "pass" } else { "fail" },
            o.summary.replace('"', "'")
        ));
    }
    s
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Every step is within `slack` of (or above) its predecessor.
fn non_decreasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - slack)
}

// ---------------------------------------------------------------- 1

pub fn gradient_check(seed: u64) -> Result<CriterionOutcome> {
    let mut model = DenoiserModel::init(DenoiserConfig::new(16, 2), derive_seed(seed, "c1/init"))?;
    let mut rng = Rng::new(derive_seed(seed, "c1/data"));
    // Move off the zero-initialized modulation so every path carries gradient.
    for p in model.params_mut() {
        let noise = rng.normal_matrix(p.rows(), p.cols()).scale(0.2);
        p.add_assign(&noise);
    }
    let batch = FlowBatch::sample(rng.normal_matrix(8, 16), &mut rng)?;
    let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
    let f = |ps: &[Matrix]| {
        let mut m = model.clone();
        m.set_params(ps.to_vec()).expect("same shapes");
        flow_loss_and_grads(&m, &batch, None).expect("valid batch")
    };
    let count = 30;
    let err = grad_check(f, &params, 1e-5, Probe::Random { count, seed: derive_seed(seed, "c1/probe") })?;
    Ok(CriterionOutcome::new(
        1,
        "gradient-correctness",
        err <= 1e-4,
        format!("max relative error {err:.2e} over {count} coordinates (limit 1e-4)"),
    ))
}

// ---------------------------------------------------------------- 2

/// `N(μ, Σ)` with `Σ = A·Aᵀ/d + 0.1·I`.
pub fn random_gaussian(d: usize, rng: &mut Rng) -> (Vec<f64>, Matrix) {
    let mu: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let a = rng.normal_matrix(d, d);
    let sigma = a.matmul_t(&a).scale(1.0 / d as f64).add(&Matrix::identity(d).scale(0.1));
    (mu, sigma.symmetrize())
}

pub fn sample_gaussian(mu: &[f64], sigma: &Matrix, n: usize, rng: &mut Rng) -> Result<Matrix> {
    let root = crate::linalg::psd_sqrt(sigma)?;
    Ok(rng.normal_matrix(n, mu.len()).matmul(&root).add_row(mu))
}

pub fn gaussian_oracle(sizes: &Sizes, seed: u64) -> Result<CriterionOutcome> {
    let d = sizes.gauss_dim;
    let mut rng = Rng::new(derive_seed(seed, "c2/gaussian"));
    let (mu, sigma) = random_gaussian(d, &mut rng);
    let train = sample_gaussian(&mu, &sigma, sizes.gauss_train, &mut rng.derive("train"))?;
    let val = sample_gaussian(&mu, &sigma, sizes.gauss_train, &mut rng.derive("val"))?;
    let scaler = Scaler::fit(&train)?;

    let mut model = DenoiserModel::init(DenoiserConfig::new(d, 3), derive_seed(seed, "c2/init"))?;
    let batches = EpochBatches::new(std::sync::Arc::new(train.clone()), sizes.gauss_batch, derive_seed(seed, "c2/batches"))?;
    let settings = TrainSettings {
        steps: sizes.gauss_steps,
        ..TrainSettings::default()
    };
    let curve = train_glp(
        &mut model,
        batches,
        &scaler,
        &settings,
        &mut Rng::new(derive_seed(seed, "c2/noise")),
        |_, _| Ok(()),
    )?;

    let field = GaussianField::standardized(&mu, &sigma, &scaler)?;
    let mut vrng = Rng::new(derive_seed(seed, "c2/velocity"));
    let mut per_t = Vec::new();
    for i in 1..=9 {
        let t = i as f64 / 10.0;
        let z = field.sample_marginal(t, 500, &mut vrng);
        let diff = model.velocity(&z, t)?.sub(&field.velocity(&z, t)?);
        per_t.push(diff.as_slice().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64);
    }
    let velocity_mse = mean(&per_t);

    let samples = euler_sample(
        &model,
        sizes.gauss_samples,
        sizes.gauss_sample_steps,
        &scaler,
        derive_seed(seed, "c2/sample"),
    )?;
    let s = GaussianSummary::from_samples(&samples)?;
    let fd_gen = frechet_gaussian_analytic(&s.mean, &s.cov, &mu, &sigma)?;
    let fd_floor = frechet_distance(&train, &val)?;
    let ok_v = velocity_mse <= 0.05;
    let ok_fd = fd_gen <= 1.5 * fd_floor;
    let mut out = CriterionOutcome::new(
        2,
        "gaussian-flow-oracle",
        ok_v && ok_fd,
        format!(
            "velocity MSE {velocity_mse:.4} (limit 0.05); FD samples-vs-truth {fd_gen:.4} vs 1.5 x train-vs-val {:.4}",
            1.5 * fd_floor
        ),
    );
    out.details.push(format!(
        "per-t velocity MSE: {}",
        per_t.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
    ));
    out.details.push(format!(
        "final training loss {:.4}, irreducible {:.4}",
        curve.records.last().map_or(f64::NAN, |r| r.loss),
        field.irreducible_loss(20_000, &mut Rng::new(derive_seed(seed, "c2/floor")))
    ));
    Ok(out)
}

// ---------------------------------------------------------------- 3

/// FD to held-out activations at each step count, same initial noise.
pub fn convergence_curve<F: VelocityField + ?Sized>(
    model: &F,
    world: &World,
    steps: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let real = GaussianSummary::from_samples(&world.heldout_acts)?;
    steps
        .iter()
        .map(|&k| {
            let samples = euler_sample(model, n, k, &world.scaler, derive_seed(seed, "c3/sample"))?;
            let fd2 = crate::metrics::frechet_sq_from_summaries(&GaussianSummary::from_samples(&samples)?, &real)?;
            Ok((k, fd2.max(0.0).sqrt()))
        })
        .collect()
}

pub fn sampling_convergence(trained: &Trained, seed: u64) -> Result<CriterionOutcome> {
    let s = &trained.world.sizes;
    let curve = convergence_curve(&trained.glp, &trained.world, &s.convergence_steps, s.convergence_samples, seed)?;
    let fds: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let monotone = fds.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let at = |k: usize| curve.iter().find(|c| c.0 == k).map(|c| c.1);
    let last = *fds.last().unwrap_or(&f64::NAN);
    let at20 = at(20).unwrap_or(f64::NAN);
    let converged = at20 <= 1.1 * last;
    let mut out = CriterionOutcome::new(
        3,
        "sampling-convergence",
        monotone && converged,
        format!(
            "FD by steps: {}; FD@20 / FD@{} = {:.3} (limit 1.1)",
            curve.iter().map(|(k, v)| format!("{k}:{v:.4}")).collect::<Vec<_>>().join(" "),
            curve.last().map_or(0, |c| c.0),
            at20 / last
        ),
    );
    // Reference: the exact field of a Gaussian with the training moments,
    // sampled on the same grids. Its 20-step error is pure discretization.
    let world = &trained.world;
    let fit = GaussianSummary::from_samples(&world.acts)?;
    let field = GaussianField::standardized(&fit.mean, &fit.cov, &world.scaler)?;
    let gauss = convergence_curve(&field, world, &s.convergence_steps, s.convergence_samples, seed)?;
    let g_last = gauss.last().map_or(f64::NAN, |c| c.1);
    let g20 = gauss.iter().find(|c| c.0 == 20).map_or(f64::NAN, |c| c.1);
    out.details.push(format!(
        "exact Gaussian field with the training moments: {}; FD@20 / FD@last = {:.3}",
        gauss.iter().map(|(k, v)| format!("{k}:{v:.4}")).collect::<Vec<_>>().join(" "),
        g20 / g_last
    ));
    Ok(out)
}

// ---------------------------------------------------------------- 4

pub fn frechet_checks(seed: u64) -> Result<CriterionOutcome> {
    let d = 16;
    let n = 50_000;
    let mut rng = Rng::new(derive_seed(seed, "c4"));
    let (mu1, s1) = random_gaussian(d, &mut rng);
    let (mu2, s2) = random_gaussian(d, &mut rng);

    // A rank-deficient self-comparison is the hard case for the square root.
    let low = rng.normal_matrix(300, 5).matmul(&rng.normal_matrix(5, d));
    let x = sample_gaussian(&mu1, &s1, 2000, &mut rng)?;
    let self_fd = frechet_distance_sq(&x, &x)?.max(frechet_distance_sq(&low, &low)?);

    let a = sample_gaussian(&mu1, &s1, n, &mut rng.derive("a"))?;
    let b = sample_gaussian(&mu2, &s2, n, &mut rng.derive("b"))?;
    let emp = frechet_distance(&a, &b)?;
    let exact = frechet_gaussian_analytic(&mu1, &s1, &mu2, &s2)?;
    let rel = (emp - exact).abs() / exact;
    let asym = (frechet_distance_sq(&a, &b)? - frechet_distance_sq(&b, &a)?).abs();
    Ok(CriterionOutcome::new(
        4,
        "frechet-distance",
        self_fd <= 1e-8 && rel <= 0.05 && asym <= 1e-10,
        format!(
            "FD(X,X) {self_fd:.1e}; empirical {emp:.4} vs closed form {exact:.4} (rel {rel:.4}); asymmetry {asym:.1e}"
        ),
    ))
}

// ---------------------------------------------------------------- 5

pub const POWER_LAW_TRUTH: (f64, f64, f64) = (0.52, 435.1, 0.169);

/// Log-spaced compute over `[1e14, 1e19]`; `noise` scales `L − E` by
/// `1 + noise·N(0,1)`.
pub fn power_law_points(n: usize, noise: f64, rng: &mut Rng) -> Vec<(f64, f64)> {
    let (e, a, alpha) = POWER_LAW_TRUTH;
    (0..n)
        .map(|i| {
            let c = 10f64.powf(14.0 + 5.0 * i as f64 / (n - 1) as f64);
            let gap = a * c.powf(-alpha) * (1.0 + noise * rng.normal());
            (c, e + gap)
        })
        .collect()
}

pub fn power_law_recovery(seed: u64) -> Result<CriterionOutcome> {
    let (e, a, alpha) = POWER_LAW_TRUTH;
    let rel = |x: f64, y: f64| (x / y - 1.0).abs();
    let clean = fit_power_law(&power_law_points(40, 0.0, &mut Rng::new(0)))?;
    let clean_err = rel(clean.e, e).max(rel(clean.a, a)).max(rel(clean.alpha, alpha));
    let mut es = Vec::new();
    let mut alphas = Vec::new();
    for s in 0..20 {
        let mut rng = Rng::new(derive_seed(seed, &format!("c5/{s}")));
        let fit = fit_power_law(&power_law_points(40, 0.05, &mut rng))?;
        es.push(fit.e);
        alphas.push(fit.alpha);
    }
    let (me, ma) = (median(es.clone()), median(alphas.clone()));
    let (ee, ea) = (rel(me, e), rel(ma, alpha));
    let mut out = CriterionOutcome::new(
        5,
        "power-law-fit",
        clean_err <= 0.01 && ee <= 0.05 && ea <= 0.10,
        format!(
            "noiseless max rel error {clean_err:.1e}; noisy medians E {me:.4} ({:.1}%), alpha {ma:.4} ({:.1}%)",
            100.0 * ee,
            100.0 * ea
        ),
    );
    out.details.push(format!(
        "median per-seed rel error: E {:.3}, alpha {:.3}",
        median(es.iter().map(|&x| rel(x, e)).collect()),
        median(alphas.iter().map(|&x| rel(x, alpha)).collect())
    ));
    Ok(out)
}

// ---------------------------------------------------------------- 6

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingCheckpoint {
    pub blocks: usize,
    pub step: usize,
    pub flops: f64,
    pub val_loss: f64,
    pub probe_auc: f64,
    pub steer_score: f64,
}

/// Flow loss on a fixed held-out batch (same `t` and noise for every model).
fn fixed_val_loss(model: &DenoiserModel, batch: &FlowBatch) -> Result<f64> {
    Ok(flow_loss_and_grads(model, batch, None)?.0)
}

/// Mean 1-D test AUC over the task suite with the top-512 filter.
pub fn probe_suite_auc(lm: &SourceLm, tasks: &[ProbeTask], encoder: &Encoder) -> Result<f64> {
    let mut aucs = Vec::with_capacity(tasks.len());
    for task in tasks {
        let enc = encode_task(lm, task, encoder)?;
        aucs.push(run_probe(task, &enc, encoder, CandidateFilter::TopK(512), ProbeMode::OneD)?.test_auc);
    }
    Ok(mean(&aucs))
}

pub fn scaling_run(world: &World, seed: u64) -> Result<CriterionOutcome> {
    let s = &world.sizes;
    let steps = s.scaling_steps;
    let snaps: Vec<usize> = [16, 8, 4, 2, 1].iter().map(|f| (steps / f).max(1)).collect();
    let run_seed = derive_seed(seed, "c6/runs");
    let val_rows: Vec<usize> = (0..world.heldout_acts.rows().min(4096)).collect();
    let val_z0 = world.scaler.apply(&world.heldout_acts.select_rows(&val_rows))?;
    let val_batch = FlowBatch::sample(val_z0, &mut Rng::new(derive_seed(seed, "c6/val")))?;
    let half_life = (steps as f64 / 40.0).max(1.0);

    let (mut curves, mut fitted) = (Vec::new(), Vec::new());
    let mut checkpoints = Vec::new();
    for &blocks in &s.scaling_blocks {
        // Same data order for every size: the batch stream seed is shared.
        let (_, curve, snapshots) = train_world_glp(world, blocks, steps, run_seed, &snaps)?;
        let smooth = ema_smooth(&curve.records.iter().map(|r| r.loss).collect::<Vec<_>>(), half_life);
        let points: Vec<(f64, f64)> = curve.records.iter().zip(&smooth).map(|(r, &l)| (r.flops as f64, l)).collect();
        fitted.push(drop_warmup(&points, TrainSettings::default().warmup_ratio));
        curves.push(points);
        let run = curves.len() - 1;
        for (step, model) in snapshots {
            checkpoints.push((run, blocks, step, model));
        }
    }
    let frontier = compute_frontier(&fitted)?;
    let fit = fit_power_law(&frontier)?;
    let monotone = frontier.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1);
    let (lo, hi) = frontier.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let residual_ok = fit.residual < 0.1 * (hi - lo);

    // A checkpoint is on the frontier when no other run reaches a lower
    // smoothed loss at equal or smaller compute. Its own curve is left out so
    // step-to-step noise does not decide membership.
    let on_envelope = |run: usize, c: f64, l: f64| {
        curves
            .iter()
            .enumerate()
            .filter(|&(r, _)| r != run)
            .flat_map(|(_, curve)| curve)
            .all(|&(c2, l2)| c2 > c || l2 >= l)
    };
    let mut scored: Vec<(usize, usize, f64, f64, DenoiserModel)> = Vec::new();
    for (run, blocks, step, model) in checkpoints {
        let (c, l) = curves[run][step - 1];
        if on_envelope(run, c, l) {
            scored.push((blocks, step, c, fixed_val_loss(&model, &val_batch)?, model));
        }
    }
    scored.sort_by(|a, b| a.2.total_cmp(&b.2));

    let tasks = task_suite(&world.spec, s.probe_sizes, derive_seed(seed, "probe/tasks"))?;
    let setup = steering_setup(world, seed)?;
    let coefs: Vec<f64> = s.steer_coefficients.iter().copied().filter(|&r| r >= 1.0).collect();
    let mut rows = Vec::new();
    for (blocks, step, flops, val_loss, model) in &scored {
        let encoder = Encoder::GlpMetaNeurons {
            model,
            scaler: &world.scaler,
            t: 0.5,
            seed: derive_seed(seed, "c6/probe"),
        };
        let probe_auc = probe_suite_auc(&world.lm, &tasks, &encoder)?;
        let method = SteerMethod::Projected {
            model,
            scaler: &world.scaler,
            params: SdeditParams {
                seed: derive_seed(seed, "c6/steer"),
                ..SdeditParams::default()
            },
        };
        let evals = coefs
            .iter()
            .map(|&r| evaluate_steering(world, &setup, method, r, seed))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ScalingCheckpoint {
            blocks: *blocks,
            step: *step,
            flops: *flops,
            val_loss: *val_loss,
            probe_auc,
            steer_score: concept_fluency_mean(world, &evals),
        });
    }
    let probes: Vec<f64> = rows.iter().map(|r| r.probe_auc).collect();
    let steers: Vec<f64> = rows.iter().map(|r| r.steer_score).collect();
    let probe_ok = non_decreasing(&probes, 0.02);
    let steer_ok = non_decreasing(&steers, 0.02);
    let mut out = CriterionOutcome::new(
        6,
        "scaling-trends",
        fit.alpha > 0.0 && monotone && residual_ok && probe_ok && steer_ok,
        format!(
            "frontier {} pts, alpha {:.3}, E {:.3}, residual {:.1}% of range; {} frontier checkpoints, probe AUC {} / steer {}",
            frontier.len(),
            fit.alpha,
            fit.e,
            100.0 * fit.residual / (hi - lo),
            rows.len(),
            if probe_ok { "non-decreasing" } else { "DECREASES" },
            if steer_ok { "non-decreasing" } else { "DECREASES" },
        ),
    );
    for r in &rows {
        out.details.push(format!(
            "blocks {} step {:>5} C {:.3e} val loss {:.4} probe AUC {:.4} steer {:.4}",
            r.blocks, r.step, r.flops, r.val_loss, r.probe_auc, r.steer_score
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------- 7

pub fn steering_pareto(trained: &Trained, seed: u64) -> Result<CriterionOutcome> {
    let world = &trained.world;
    let s = &world.sizes;
    let setup = steering_setup(world, seed)?;
    let method = SteerMethod::Projected {
        model: &trained.glp,
        scaler: &world.scaler,
        params: SdeditParams {
            seed: derive_seed(seed, "c7/steer"),
            ..SdeditParams::default()
        },
    };
    let mut out = CriterionOutcome::new(7, "steering-pareto", false, String::new());
    let mut winners = Vec::new();
    for &r in s.steer_coefficients.iter().filter(|&&r| r >= 1.0) {
        let raw = evaluate_steering(world, &setup, SteerMethod::Raw, r, seed)?;
        let glp = evaluate_steering(world, &setup, method, r, seed)?;
        let p = pareto_check(&raw, &glp, s.bootstrap_resamples, derive_seed(seed, &format!("c7/ci/{r:?}")))?;
        out.details.push(format!(
            "r {r}: NLL raw {:.3} [{:.3},{:.3}] glp {:.3} [{:.3},{:.3}]; concept raw {:.3} [{:.3},{:.3}] glp {:.3} [{:.3},{:.3}]",
            p.raw_fluency.0,
            p.raw_fluency.1,
            p.raw_fluency.2,
            p.glp_fluency.0,
            p.glp_fluency.1,
            p.glp_fluency.2,
            p.raw_concept.0,
            p.raw_concept.1,
            p.raw_concept.2,
            p.glp_concept.0,
            p.glp_concept.1,
            p.glp_concept.2,
        ));
        if p.fluency_better && p.concept_not_lower {
            winners.push(r);
        }
    }
    out.passed = !winners.is_empty();
    out.summary = if winners.is_empty() {
        "no coefficient r >= 1 with separated lower NLL at matched concept".to_string()
    } else {
        format!("projected steering dominates raw at r in {winners:?}")
    };
    Ok(out)
}

// ---------------------------------------------------------------- 8

pub fn delta_lm_ordering(trained: &Trained, seed: u64) -> Result<CriterionOutcome> {
    let world = &trained.world;
    let docs = &world.heldout_docs;
    let identity = delta_lm_loss(&world.lm, docs, &mut |h| Ok(h.clone()))?;
    let glp_at = |t: f64| -> Result<f64> {
        let params = SdeditParams {
            t_start: t,
            num_steps: 20,
            seed: derive_seed(seed, "c8/noise"),
            shared_noise: false,
        };
        delta_lm_loss(&world.lm, docs, &mut |h| {
            noisy_reconstruct(&trained.glp, h, &params, &world.scaler)
        })
    };
    let glp = glp_at(0.5)?;
    let sae = delta_lm_loss(&world.lm, docs, &mut |h| trained.sae.reconstruct_raw(h, &world.scaler))?;
    let mut out = CriterionOutcome::new(
        8,
        "delta-lm-ordering",
        identity == 0.0 && glp < sae,
        format!(
            "identity {identity}; GLP(t=0.5) {glp:.4} vs SAE {sae:.4} over {} sequences",
            docs.len()
        ),
    );
    for t in [0.1, 0.3] {
        out.details.push(format!("GLP delta at t_start {t}: {:.4}", glp_at(t)?));
    }
    let n = world.heldout_acts.rows().min(20_000);
    let real = world.heldout_acts.slice_rows(0, n);
    let params = SdeditParams {
        seed: derive_seed(seed, "c8/fd"),
        ..SdeditParams::default()
    };
    let fd_glp = frechet_distance(&noisy_reconstruct(&trained.glp, &real, &params, &world.scaler)?, &real)?;
    let fd_sae = frechet_distance(&trained.sae.reconstruct_raw(&real, &world.scaler)?, &real)?;
    out.details.push(format!("FD of reconstructions to inputs: GLP {fd_glp:.4}, SAE {fd_sae:.4}"));
    Ok(out)
}

// ---------------------------------------------------------------- 9

/// `roc_auc` equals the pairwise count on random tied scores for every
/// `n ≤ 200`.
pub fn auc_matches_pair_oracle(seed: u64) -> Result<bool> {
    let mut rng = Rng::new(derive_seed(seed, "c9/auc"));
    for n in 2..=200 {
        let labels: Vec<bool> = (0..n).map(|i| if i < 2 { i == 0 } else { rng.uniform() < 0.4 }).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.below(n / 3 + 2) as f64 * 0.25).collect();
        if roc_auc(&scores, &labels)? != roc_auc_pairs(&scores, &labels) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn probing_ordering(trained: &Trained, seed: u64) -> Result<CriterionOutcome> {
    let world = &trained.world;
    let tasks = task_suite(&world.spec, world.sizes.probe_sizes, derive_seed(seed, "probe/tasks"))?;
    let glp = Encoder::GlpMetaNeurons {
        model: &trained.glp,
        scaler: &world.scaler,
        t: 0.1,
        seed: derive_seed(seed, "c9/meta"),
    };
    let encoders = [
        glp,
        Encoder::RawHook,
        Encoder::RawSourceMlp,
        Encoder::SaeLatents {
            sae: &trained.sae,
            scaler: &world.scaler,
        },
    ];
    let filtered = CandidateFilter::TopK(512);
    let small = CandidateFilter::TopK(32);
    let mut means = Vec::new();
    let (mut exhaustive, mut small_k) = (Vec::new(), Vec::new());
    for encoder in &encoders {
        let mut aucs = Vec::new();
        for task in &tasks {
            let enc = encode_task(&world.lm, task, encoder)?;
            if matches!(encoder, Encoder::GlpMetaNeurons { .. }) {
                let r = run_1d_probes(task, &enc, encoder, &[filtered, CandidateFilter::Exhaustive, small])?;
                aucs.push(r[0].test_auc);
                exhaustive.push(r[1].test_auc);
                small_k.push(r[2].test_auc);
            } else {
                aucs.push(run_probe(task, &enc, encoder, filtered, ProbeMode::OneD)?.test_auc);
            }
        }
        means.push((encoder.name(), mean(&aucs)));
    }
    let (glp_auc, raw_auc) = (means[0].1, means[1].1);
    let gap = (glp_auc - mean(&exhaustive)).abs();
    let oracle = auc_matches_pair_oracle(seed)?;
    let mut out = CriterionOutcome::new(
        9,
        "probing-ordering",
        glp_auc >= raw_auc && gap <= 0.001 && oracle,
        format!(
            "mean 1-D AUC GLP {glp_auc:.4} vs raw hook {raw_auc:.4}; filter-vs-exhaustive gap {gap:.4}; AUC oracle {}",
            if oracle { "exact" } else { "MISMATCH" }
        ),
    );
    out.details.push(format!(
        "per-encoder mean AUC: {}",
        means.iter().map(|(n, a)| format!("{n} {a:.4}")).collect::<Vec<_>>().join(", ")
    ));
    out.details.push(format!(
        "GLP with top-32 filter: {:.4} (gap {:.4})",
        mean(&small_k),
        (mean(&small_k) - mean(&exhaustive)).abs()
    ));
    Ok(out)
}

// ---------------------------------------------------------------- 10

/// Randomized producer/consumer schedules; every row must arrive once.
pub fn stream_stress(rows: usize, trials: usize, seed: u64) -> Result<bool> {
    for trial in 0..trials {
        let mut rng = Rng::new(derive_seed(seed, &format!("c10/stream/{trial}")));
        let batch = 1 + rng.below(256);
        let capacity = batch + rng.below(2048);
        let chunk_max = 1 + rng.below(1000);
        let yield_p = rng.uniform() * 0.5;
        let mut prng = rng.derive("producer");
        let mut next = 0usize;
        let producer = move || {
            if next >= rows {
                return None;
            }
            if prng.uniform() < yield_p {
                std::thread::yield_now();
            }
            let n = (1 + prng.below(chunk_max)).min(rows - next);
            let data: Vec<f64> = (next..next + n).map(|i| i as f64).collect();
            next += n;
            Some(Matrix::from_vec(n, 1, data))
        };
        let stream = stream_activations(producer, 1, capacity, batch, rng.next_u64())?;
        let mut seen = vec![false; rows];
        let mut crng = rng.derive("consumer");
        for b in stream {
            if crng.uniform() < yield_p {
                std::thread::yield_now();
            }
            for &v in b?.as_slice() {
                let i = v as usize;
                if i >= rows || seen[i] {
                    return Ok(false);
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The encoding of a fixed 2×2 matrix, byte for byte.
pub fn activation_golden_bytes() -> Result<bool> {
    let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 0.0]]);
    let bytes = encode_activations(&x, 7);
    #[rustfmt::skip]
    let golden: [u8; 40] = [
        b'G', b'L', b'P', b'A', 1, 0, 0, 0, 2, 0, 0, 0, 7, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0,
        0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x00, 0x00,
    ];
    let (_, back) = decode_activations(&bytes, Path::new("golden"))?;
    Ok(bytes == golden && back == x)
}

/// Runs the CLI pipeline twice into separate directories and compares
/// every produced file. Returns the number of files compared.
pub fn cli_reproducible(exe: &Path, scratch: &Path, seed: u64) -> Result<usize> {
    let a = scratch.join("run_a");
    let b = scratch.join("run_b");
    run_cli_pipeline(exe, &a, seed)?;
    run_cli_pipeline(exe, &b, seed)?;
    let files_a = list_files(&a)?;
    let files_b = list_files(&b)?;
    let rel = |root: &Path, v: &[std::path::PathBuf]| -> Vec<std::path::PathBuf> {
        v.iter().map(|p| p.strip_prefix(root).expect("under root").to_path_buf()).collect()
    };
    if rel(&a, &files_a) != rel(&b, &files_b) {
        return Err(GlpError::Config("runs produced different file sets".into()));
    }
    for (fa, fb) in files_a.iter().zip(&files_b) {
        if std::fs::read(fa).map_err(|e| GlpError::io(fa, e))? != std::fs::read(fb).map_err(|e| GlpError::io(fb, e))? {
            return Err(GlpError::Config(format!("{} differs between runs", fa.display())));
        }
    }
    Ok(files_a.len())
}

fn list_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| GlpError::io(&d, e))? {
            let p = entry.map_err(|e| GlpError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Every data subcommand in smoke mode, each writing its own directory.
pub fn run_cli_pipeline(exe: &Path, root: &Path, seed: u64) -> Result<()> {
    let seed = seed.to_string();
    let d = |name: &str| root.join(name).display().to_string();
    let f = |dir: &str, file: &str| root.join(dir).join(file).display().to_string();
    let common = ["--profile", "smoke", "--seed", seed.as_str()];
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("gen-corpus", vec!["--out".into(), d("corpus")]),
        ("train-source", vec!["--corpus".into(), f("corpus", "corpus.txt"), "--out".into(), d("source")]),
        (
            "cache",
            vec![
                "--source".into(),
                f("source", "source.glpw"),
                "--corpus".into(),
                f("corpus", "corpus.txt"),
                "--out".into(),
                d("cache"),
            ],
        ),
        ("fit-scaler", vec!["--acts".into(), f("cache", "acts.glpa"), "--out".into(), d("scaler")]),
        (
            "train",
            vec![
                "--acts".into(),
                f("cache", "acts.glpa"),
                "--scaler".into(),
                f("scaler", "scaler.txt"),
                "--out".into(),
                d("glp"),
            ],
        ),
        (
            "train-sae",
            vec![
                "--acts".into(),
                f("cache", "acts.glpa"),
                "--scaler".into(),
                f("scaler", "scaler.txt"),
                "--out".into(),
                d("sae"),
            ],
        ),
        (
            "sample",
            vec![
                "--model".into(),
                f("glp", "glp.glpw"),
                "--scaler".into(),
                f("scaler", "scaler.txt"),
                "--out".into(),
                d("samples"),
            ],
        ),
        (
            "fd",
            vec![
                "--a".into(),
                f("cache", "acts.glpa"),
                "--b".into(),
                f("samples", "samples.glpa"),
                "--out".into(),
                d("fd"),
            ],
        ),
        ("pca", vec!["--acts".into(), f("cache", "acts.glpa"), "--out".into(), d("pca")]),
        (
            "delta-lm",
            vec![
                "--source".into(),
                f("source", "source.glpw"),
                "--corpus".into(),
                f("corpus", "corpus.txt"),
                "--glp".into(),
                f("glp", "glp.glpw"),
                "--sae".into(),
                f("sae", "sae.glpw"),
                "--scaler".into(),
                f("scaler", "scaler.txt"),
                "--out".into(),
                d("delta"),
            ],
        ),
        (
            "steer",
            vec![
                "--source".into(),
                f("source", "source.glpw"),
                "--corpus".into(),
                f("corpus", "corpus.txt"),
                "--glp".into(),
                f("glp", "glp.glpw"),
                "--scaler".into(),
                f("scaler", "scaler.txt"),
                "--out".into(),
                d("steer"),
            ],
        ),
        (
            "probe",
            vec![
                "--source".into(),
                f("source", "source.glpw"),
                "--glp".into(),
                f("glp", "glp.glpw"),
                "--sae".into(),
                f("sae", "sae.glpw"),
                "--scaler".into(),
                f("scaler", "scaler.txt"),
                "--out".into(),
                d("probe"),
            ],
        ),
        ("scaling-fit", vec!["--loss".into(), f("glp", "loss.csv"), "--out".into(), d("scaling")]),
    ];
    for (cmd, args) in steps {
        let status = Command::new(exe)
            .arg(cmd)
            .args(common)
            .args(&args)
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::piped())
            .output()
            .map_err(|e| GlpError::io(exe, e))?;
        if !status.status.success() {
            return Err(GlpError::Config(format!(
                "`{cmd}` exited with {}: {}",
                status.status,
                String::from_utf8_lossy(&status.stderr).trim()
            )));
        }
    }
    Ok(())
}

/// Stream stress, golden bytes, and (given the binary) CLI reproducibility.
pub fn pipeline_integrity(sizes: &Sizes, seed: u64, cli: Option<(&Path, &Path)>) -> Result<CriterionOutcome> {
    let stream_ok = stream_stress(sizes.stream_rows, sizes.stream_trials, seed)?;
    let golden_ok = activation_golden_bytes()?;
    let (cli_ok, cli_note) = match cli {
        Some((exe, scratch)) => match cli_reproducible(exe, scratch, seed) {
            Ok(n) => (true, format!("{n} CLI outputs identical across runs")),
            Err(e) => (false, format!("CLI not reproducible: {e}")),
        },
        None => (false, "CLI binary not provided".to_string()),
    };
    Ok(CriterionOutcome::new(
        10,
        "pipeline-integrity",
        stream_ok && golden_ok && cli_ok,
        format!(
            "stream exactly-once over {} trials x {} rows: {}; golden bytes: {}; {cli_note}",
            sizes.stream_trials,
            sizes.stream_rows,
            if stream_ok { "ok" } else { "VIOLATED" },
            if golden_ok { "ok" } else { "CHANGED" },
        ),
    ))
}

/// All ten in order; the trained world is built once and shared.
pub fn run_all(sizes: Sizes, seed: u64, cli: Option<(&Path, &Path)>, mut report: impl FnMut(&CriterionOutcome)) -> Result<Vec<CriterionOutcome>> {
    let mut out = Vec::new();
    let mut push = |o: CriterionOutcome| {
        report(&o);
        out.push(o);
    };
    push(gradient_check(seed)?);
    push(gaussian_oracle(&sizes, seed)?);
    let trained = super::world::build_trained(sizes.clone(), seed)?;
    push(sampling_convergence(&trained, seed)?);
    push(frechet_checks(seed)?);
    push(power_law_recovery(seed)?);
    push(scaling_run(&trained.world, seed)?);
    push(steering_pareto(&trained, seed)?);
    push(delta_lm_ordering(&trained, seed)?);
    push(probing_ordering(&trained, seed)?);
    push(pipeline_integrity(&sizes, seed, cli)?);
    Ok(out)
}
