// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering the source model toward the positive regime, raw or projected
//! through a denoiser, and the concept/fluency judges.

use crate::denoiser::DenoiserModel;
use crate::error::{GlpError, Result};
use crate::flow::{sdedit_project, SdeditParams};
use crate::metrics::bootstrap_mean_ci;
use crate::rng::{derive_seed, Rng};
use crate::source::{diffmean_vector, hook_rows, relative_coefficient, Document};
use crate::store::Scaler;
use crate::tensor::Matrix;

use super::world::World;

/// Prefixes from the negative regime and the unit DiffMean direction toward
/// the positive one.
#[derive(Clone, Debug)]
pub struct SteerSetup {
    pub prefixes: Vec<Vec<usize>>,
    pub direction: Vec<f64>,
    pub mean_norm: f64,
}

pub fn steering_setup(world: &World, seed: u64) -> Result<SteerSetup> {
    let (pos, neg): (Vec<Document>, Vec<Document>) = world.train_docs.iter().cloned().partition(|d| d.positive);
    if pos.is_empty() || neg.is_empty() {
        return Err(GlpError::InvalidArgument("corpus lacks one of the regimes".into()));
    }
    let raw = diffmean_vector(&hook_rows(&world.lm, &pos)?, &hook_rows(&world.lm, &neg)?)?;
    // Unit direction, so `α = r·‖a‖` sets the edit norm directly.
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(GlpError::InvalidArgument("regimes have identical mean activations".into()));
    }
    let direction = raw.iter().map(|v| v / norm).collect();
    let mean_norm = relative_coefficient(1.0, &world.heldout_acts)?.mean_norm;
    let mut rng = Rng::new(derive_seed(seed, "steer/prefixes"));
    let s = &world.sizes;
    let prefixes = (0..s.steer_prefixes)
        .map(|_| world.spec.sample_doc(false, s.steer_prefix_len, &mut rng))
        .collect();
    Ok(SteerSetup {
        prefixes,
        direction,
        mean_norm,
    })
}

#[derive(Clone, Copy)]
pub enum SteerMethod<'a> {
    /// `h + α·w` at every generated position.
    Raw,
    /// The same edit projected by the denoiser.
    Projected {
        model: &'a DenoiserModel,
        scaler: &'a Scaler,
        params: SdeditParams,
    },
}

impl SteerMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            SteerMethod::Raw => "diffmean",
            SteerMethod::Projected { .. } => "glp",
        }
    }
}

/// Per-prefix judge scores of the generated continuations.
#[derive(Clone, Debug, PartialEq)]
pub struct SteerEval {
    pub relative: f64,
    pub concept: Vec<f64>,
    pub fluency: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl SteerEval {
    pub fn concept_mean(&self) -> f64 {
        mean(&self.concept)
    }

    pub fn fluency_mean(&self) -> f64 {
        mean(&self.fluency)
    }
}

/// Generates continuations under steering at relative coefficient `r`. The
/// sampling stream depends only on `(seed, r)`, so methods are compared on
/// common random numbers.
pub fn evaluate_steering(world: &World, setup: &SteerSetup, method: SteerMethod, r: f64, seed: u64) -> Result<SteerEval> {
    let alpha = r * setup.mean_norm;
    let shift: Vec<f64> = setup.direction.iter().map(|w| alpha * w).collect();
    let mut rng = Rng::new(derive_seed(seed, &format!("steer/sample/{r:?}")));
    let mut step = 0u64;
    let mut intervene = |h: &Matrix| -> Result<Matrix> {
        step += 1;
        match method {
            SteerMethod::Raw => Ok(h.add_row(&shift)),
            SteerMethod::Projected { model, scaler, params } => {
                let p = SdeditParams {
                    seed: derive_seed(params.seed, &format!("steer/noise/{step}")),
                    ..params
                };
                sdedit_project(model, h, &setup.direction, alpha, &p, scaler)
            }
        }
    };
    let n_new = world.sizes.steer_new_tokens;
    let seqs = world.lm.generate(&setup.prefixes, n_new, &mut rng, &mut intervene)?;
    let mut concept = Vec::with_capacity(seqs.len());
    let mut fluency = Vec::with_capacity(seqs.len());
    for (s, p) in seqs.iter().zip(&setup.prefixes) {
        concept.push(world.spec.concept_score(&s[p.len()..])?);
        fluency.push(world.lm.continuation_nll(s, p.len())?);
    }
    Ok(SteerEval {
        relative: r,
        concept,
        fluency,
    })
}

/// Fluency NLL mapped to [0, 1]: 1 at the entropy-rate floor, 0 at the
/// uniform-guess NLL.
pub fn fluency_score(world: &World, nll: f64) -> f64 {
    let ceiling = (world.sizes.vocab as f64).ln();
    let floor = world.spec.entropy_rate();
    ((ceiling - nll) / (ceiling - floor)).clamp(0.0, 1.0)
}

/// Concept & fluency mean: per coefficient, then averaged over coefficients.
pub fn concept_fluency_mean(world: &World, evals: &[SteerEval]) -> f64 {
    let per: Vec<f64> = evals
        .iter()
        .map(|e| 0.5 * (e.concept_mean() + fluency_score(world, e.fluency_mean())))
        .collect();
    mean(&per)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoCheck {
    pub relative: f64,
    pub raw_fluency: (f64, f64, f64),
    pub glp_fluency: (f64, f64, f64),
    pub raw_concept: (f64, f64, f64),
    pub glp_concept: (f64, f64, f64),
    /// Fluency intervals separated with the projected run lower.
    pub fluency_better: bool,
    /// Projected concept interval reaches the raw one or lies above it.
    pub concept_not_lower: bool,
}

/// `(mean, lo, hi)` with a percentile bootstrap interval.
pub fn mean_with_ci(v: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let (lo, hi) = bootstrap_mean_ci(v, resamples, 0.95, seed)?;
    Ok((mean(v), lo, hi))
}

pub fn pareto_check(raw: &SteerEval, glp: &SteerEval, resamples: usize, seed: u64) -> Result<ParetoCheck> {
    let raw_fluency = mean_with_ci(&raw.fluency, resamples, derive_seed(seed, "ci/raw/fluency"))?;
    let glp_fluency = mean_with_ci(&glp.fluency, resamples, derive_seed(seed, "ci/glp/fluency"))?;
    let raw_concept = mean_with_ci(&raw.concept, resamples, derive_seed(seed, "ci/raw/concept"))?;
    let glp_concept = mean_with_ci(&glp.concept, resamples, derive_seed(seed, "ci/glp/concept"))?;
    Ok(ParetoCheck {
        relative: raw.relative,
        fluency_better: glp_fluency.2 < raw_fluency.1,
        concept_not_lower: glp_concept.2 >= raw_concept.1,
        raw_fluency,
        glp_fluency,
        raw_concept,
        glp_concept,
    })
}

pub const STEER_CSV_HEADER: &str = "method,r,concept_mean,fluency_mean,concept_fluency_mean";

pub fn steer_csv(world: &World, rows: &[(&str, &SteerEval)]) -> String {
    let mut s = format!("{STEER_CSV_HEADER}\n");
    for (name, e) in rows {
        let combined = 0.5 * (e.concept_mean() + fluency_score(world, e.fluency_mean()));
        s.push_str(&format!(
            "{name},{:?},{:?},{:?},{:?}\n",
            e.relative,
            e.concept_mean(),
            e.fluency_mean(),
            combined
        ));
    }
    s
}
