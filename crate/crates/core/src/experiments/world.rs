// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run profiles and the shared toy world: grammar, corpora, trained source
//! model, cached hook activations, and the desk-size denoiser and SAE.

use std::sync::Arc;

use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::error::{GlpError, Result};
use crate::flow::{train_glp, LossCurve, TrainSettings};
use crate::rng::{derive_seed, Rng};
use crate::sae::{sae_train, SaeConfig, SaeModel, SaeTrainSettings};
use crate::source::{
    corpus_nll, generate_corpus, hook_rows, train_source_lm, Document, GrammarSpec, SourceLm, SourceLmConfig,
    SourceTrainSettings,
};
use crate::store::{EpochBatches, Scaler};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Full-size runs used for acceptance.
    Desk,
    /// Tiny runs that exercise every code path in seconds.
    Smoke,
}

impl std::str::FromStr for Profile {
    type Err = GlpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "smoke" => Ok(Profile::Smoke),
            other => Err(GlpError::Config(format!("unknown profile {other:?} (desk|smoke)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sizes {
    pub vocab: usize,
    pub corpus_docs: usize,
    pub doc_len: usize,
    pub heldout_docs: usize,
    pub lm_steps: usize,
    pub glp_blocks: usize,
    pub glp_steps: usize,
    pub batch: usize,
    pub sae_steps: usize,
    pub probe_sizes: (usize, usize, usize),
    pub steer_prefixes: usize,
    pub steer_prefix_len: usize,
    pub steer_new_tokens: usize,
    pub steer_coefficients: Vec<f64>,
    pub bootstrap_resamples: usize,
    pub gauss_dim: usize,
    pub gauss_train: usize,
    pub gauss_batch: usize,
    pub gauss_steps: usize,
    pub gauss_samples: usize,
    pub gauss_sample_steps: usize,
    pub convergence_samples: usize,
    pub convergence_steps: Vec<usize>,
    pub scaling_blocks: Vec<usize>,
    pub scaling_steps: usize,
    pub stream_rows: usize,
    pub stream_trials: usize,
}

impl Sizes {
    pub fn of(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                vocab: 32,
                corpus_docs: 2000,
                doc_len: 64,
                heldout_docs: 2048,
                lm_steps: 3000,
                glp_blocks: 3,
                glp_steps: 6000,
                batch: 256,
                sae_steps: 6000,
                probe_sizes: (1000, 500, 500),
                steer_prefixes: 100,
                steer_prefix_len: 8,
                steer_new_tokens: 20,
                steer_coefficients: vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0],
                bootstrap_resamples: 10_000,
                gauss_dim: 16,
                gauss_train: 50_000,
                gauss_batch: 2048,
                gauss_steps: 5000,
                gauss_samples: 50_000,
                gauss_sample_steps: 1000,
                convergence_samples: 10_000,
                convergence_steps: vec![1, 4, 20, 1000],
                scaling_blocks: vec![1, 2, 4, 8],
                scaling_steps: 4000,
                stream_rows: 100_000,
                stream_trials: 100,
            },
            Profile::Smoke => Self {
                vocab: 32,
                corpus_docs: 60,
                doc_len: 24,
                heldout_docs: 16,
                lm_steps: 60,
                glp_blocks: 2,
                glp_steps: 40,
                batch: 64,
                sae_steps: 40,
                probe_sizes: (40, 20, 20),
                steer_prefixes: 8,
                steer_prefix_len: 8,
                steer_new_tokens: 4,
                steer_coefficients: vec![1.0, 2.0],
                bootstrap_resamples: 200,
                gauss_dim: 4,
                gauss_train: 2000,
                gauss_batch: 64,
                gauss_steps: 50,
                gauss_samples: 2000,
                gauss_sample_steps: 20,
                convergence_samples: 500,
                convergence_steps: vec![1, 4, 20],
                scaling_blocks: vec![1, 2],
                scaling_steps: 40,
                stream_rows: 2000,
                stream_trials: 3,
            },
        }
    }
}

pub struct World {
    pub sizes: Sizes,
    pub seed: u64,
    pub spec: GrammarSpec,
    pub train_docs: Vec<Document>,
    pub heldout_docs: Vec<Document>,
    pub lm: SourceLm,
    pub lm_val_nll: f64,
    /// Hook rows of every non-special training position.
    pub acts: Arc<Matrix>,
    /// Hook rows of the held-out corpus, for norms and FD references.
    pub heldout_acts: Matrix,
    pub scaler: Scaler,
}

pub fn build_world(sizes: Sizes, seed: u64) -> Result<World> {
    let spec = GrammarSpec::two_regime(sizes.vocab, derive_seed(seed, "grammar"))?;
    let train_docs = generate_corpus(&spec, sizes.corpus_docs, sizes.doc_len, derive_seed(seed, "corpus"))?;
    let heldout_docs = generate_corpus(&spec, sizes.heldout_docs, sizes.doc_len, derive_seed(seed, "heldout"))?;
    let lm = train_world_source(&train_docs, &sizes, seed)?;
    World::assemble(sizes, seed, spec, train_docs, heldout_docs, lm)
}

pub fn train_world_source(docs: &[Document], sizes: &Sizes, seed: u64) -> Result<SourceLm> {
    let config = SourceLmConfig {
        vocab: sizes.vocab,
        ..SourceLmConfig::default()
    };
    let settings = SourceTrainSettings {
        steps: sizes.lm_steps,
        ..SourceTrainSettings::default()
    };
    Ok(train_source_lm(docs, config, &settings, derive_seed(seed, "source"))?.0)
}

impl World {
    /// Caches activations and fits the scaler around an existing model.
    pub fn assemble(
        sizes: Sizes,
        seed: u64,
        spec: GrammarSpec,
        train_docs: Vec<Document>,
        heldout_docs: Vec<Document>,
        lm: SourceLm,
    ) -> Result<World> {
        let lm_val_nll = corpus_nll(&lm, &heldout_docs)?;
        let acts = hook_rows(&lm, &train_docs)?;
        let heldout_acts = hook_rows(&lm, &heldout_docs)?;
        let scaler = Scaler::fit(&acts)?;
        Ok(World {
            sizes,
            seed,
            spec,
            train_docs,
            heldout_docs,
            lm,
            lm_val_nll,
            acts: Arc::new(acts),
            heldout_acts,
            scaler,
        })
    }
}

/// Trains a denoiser on `acts`. `snapshot_at` lists steps (1-based counts
/// of completed updates) at which copies are kept.
#[allow(clippy::too_many_arguments)]
pub fn train_glp_on(
    acts: Arc<Matrix>,
    scaler: &Scaler,
    n_blocks: usize,
    steps: usize,
    batch: usize,
    base_lr: f64,
    seed: u64,
    snapshot_at: &[usize],
) -> Result<(DenoiserModel, LossCurve, Vec<(usize, DenoiserModel)>)> {
    let d = acts.cols();
    let mut model = DenoiserModel::init(DenoiserConfig::new(d, n_blocks), derive_seed(seed, "glp/init"))?;
    let batches = EpochBatches::new(acts, batch, derive_seed(seed, "glp/batches"))?;
    let settings = TrainSettings {
        steps,
        base_lr,
        ..TrainSettings::default()
    };
    let mut snapshots = Vec::new();
    let curve = train_glp(
        &mut model,
        batches,
        scaler,
        &settings,
        &mut Rng::new(derive_seed(seed, "glp/noise")),
        |m, rec| {
            if snapshot_at.contains(&(rec.step + 1)) {
                snapshots.push((rec.step + 1, m.clone()));
            }
            Ok(())
        },
    )?;
    Ok((model, curve, snapshots))
}

pub fn train_world_glp(
    world: &World,
    n_blocks: usize,
    steps: usize,
    seed: u64,
    snapshot_at: &[usize],
) -> Result<(DenoiserModel, LossCurve, Vec<(usize, DenoiserModel)>)> {
    let lr = TrainSettings::default().base_lr;
    train_glp_on(world.acts.clone(), &world.scaler, n_blocks, steps, world.sizes.batch, lr, seed, snapshot_at)
}

pub fn train_sae_on(
    acts: Arc<Matrix>,
    scaler: &Scaler,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<(SaeModel, Vec<f64>)> {
    let d = acts.cols();
    let batches = EpochBatches::new(acts, batch, derive_seed(seed, "sae/batches"))?;
    let settings = SaeTrainSettings {
        steps,
        ..SaeTrainSettings::default()
    };
    sae_train(batches, SaeConfig::new(d), scaler, &settings, derive_seed(seed, "sae"))
}

pub fn train_world_sae(world: &World, steps: usize, seed: u64) -> Result<(SaeModel, Vec<f64>)> {
    train_sae_on(world.acts.clone(), &world.scaler, steps, world.sizes.batch, seed)
}

/// The world plus its desk denoiser and SAE.
pub struct Trained {
    pub world: World,
    pub glp: DenoiserModel,
    pub glp_curve: LossCurve,
    pub sae: SaeModel,
}

pub fn build_trained(sizes: Sizes, seed: u64) -> Result<Trained> {
    let world = build_world(sizes, seed)?;
    let (glp, glp_curve, _) = train_world_glp(&world, world.sizes.glp_blocks, world.sizes.glp_steps, seed, &[])?;
    let (sae, _) = train_world_sae(&world, world.sizes.sae_steps, seed)?;
    Ok(Trained {
        world,
        glp,
        glp_curve,
        sae,
    })
}
