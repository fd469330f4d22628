// SPDX-License-Identifier: MIT OR Apache-2.0

//! Meta-neuron features, the mean-difference candidate filter, 1-D and dense
//! logistic probes, and max-activating example search.

pub mod logistic;
pub mod tasks;

pub use logistic::{fit_logistic, fit_with_cv, logistic_objective, stratified_folds, CvFit, LogisticModel, L2_GRID};
pub use tasks::{build_task, task_suite, ProbeTask, Split, TaskKind, TestScorer};

use crate::denoiser::DenoiserModel;
use crate::error::{GlpError, Result};
use crate::flow::interpolate;
use crate::metrics::roc_auc;
use crate::rng::{derive_seed, Rng};
use crate::sae::SaeModel;
use crate::source::{context_ids, Document, SourceLm};
use crate::store::Scaler;
use crate::tensor::Matrix;

/// Rows per denoiser forward pass during extraction.
const EXTRACT_CHUNK: usize = 4096;
const FILTER_STD_FLOOR: f64 = 1e-8;
/// Fold assignment seed shared by every probe.
pub const FOLD_SEED: u64 = 0x5eed_f01d;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    MetaNeuron { block: usize, unit: usize },
    Dim(usize),
    SaeUnit(usize),
}

impl FeatureSource {
    fn block(&self) -> usize {
        match *self {
            FeatureSource::MetaNeuron { block, .. } => block,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub sources: Vec<FeatureSource>,
}

/// Standardize, noise to `t` with seeded noise, one tapped forward pass,
/// and concatenate every block's units: `n × (n_blocks · expansion)`.
pub fn extract_meta_neurons(
    model: &DenoiserModel,
    acts_raw: &Matrix,
    t: f64,
    scaler: &Scaler,
    seed: u64,
) -> Result<FeatureMatrix> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GlpError::TimestepOutOfRange(t));
    }
    let z = scaler.apply(acts_raw)?;
    let noise = Rng::new(seed).normal_matrix(z.rows(), z.cols());
    let zt = interpolate(&z, &noise, &[t])?;
    let cfg = &model.config;
    let mut parts = Vec::with_capacity(zt.rows().div_ceil(EXTRACT_CHUNK));
    let mut start = 0;
    while start < zt.rows() {
        let end = (start + EXTRACT_CHUNK).min(zt.rows());
        let out = model.forward(&zt.slice_rows(start, end), &[t], None, true)?;
        let taps = out.taps.expect("taps requested");
        parts.push(Matrix::hstack(&taps)?);
        start = end;
    }
    let values = if parts.is_empty() {
        Matrix::zeros(0, cfg.meta_neuron_count())
    } else {
        Matrix::vstack(&parts)?
    };
    let sources = (0..cfg.n_blocks)
        .flat_map(|block| (0..cfg.expansion).map(move |unit| FeatureSource::MetaNeuron { block, unit }))
        .collect();
    Ok(FeatureMatrix { values, sources })
}

/// `|mean₁ − mean₀| / pooled std` per column.
pub fn mean_diff_scores(features: &Matrix, labels: &[bool]) -> Result<Vec<f64>> {
    if features.rows() != labels.len() {
        return Err(GlpError::shape("mean_diff_filter", "rows and labels differ"));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 < 2 || n0 < 2 {
        return Err(GlpError::InvalidArgument("filter needs two examples per class".into()));
    }
    let f = features.cols();
    let (mut s1, mut s0) = (vec![0.0; f], vec![0.0; f]);
    for (r, &l) in features.iter_rows().zip(labels) {
        let acc = if l { &mut s1 } else { &mut s0 };
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    let m1: Vec<f64> = s1.iter().map(|s| s / n1 as f64).collect();
    let m0: Vec<f64> = s0.iter().map(|s| s / n0 as f64).collect();
    let mut ss = vec![0.0; f];
    for (r, &l) in features.iter_rows().zip(labels) {
        let m = if l { &m1 } else { &m0 };
        for ((a, v), mu) in ss.iter_mut().zip(r).zip(m) {
            *a += (v - mu).powi(2);
        }
    }
    let dof = (n1 + n0 - 2) as f64;
    Ok((0..f)
        .map(|j| (m1[j] - m0[j]).abs() / (ss[j] / dof).sqrt().max(FILTER_STD_FLOOR))
        .collect())
}

fn rank_desc(scores: &[f64], cols: &[usize]) -> Vec<usize> {
    let mut order = cols.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Top-`k` columns by normalized mean difference; ties go to the lower index.
pub fn mean_diff_filter(features: &Matrix, labels: &[bool], k: usize) -> Result<Vec<usize>> {
    if k > features.cols() {
        return Err(GlpError::InvalidArgument(format!("k={k} exceeds {} features", features.cols())));
    }
    let scores = mean_diff_scores(features, labels)?;
    let mut order = rank_desc(&scores, &(0..features.cols()).collect::<Vec<_>>());
    order.truncate(k);
    Ok(order)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateFilter {
    /// Every column is a candidate.
    Exhaustive,
    /// Global top-`k`, capped at the feature count.
    TopK(usize),
    /// Top-`k` within each block.
    PerBlock(usize),
}

impl CandidateFilter {
    pub fn label(&self) -> String {
        match self {
            CandidateFilter::Exhaustive => "all".into(),
            CandidateFilter::TopK(k) => k.to_string(),
            CandidateFilter::PerBlock(k) => format!("{k}/block"),
        }
    }

    pub fn candidates(&self, f: &FeatureMatrix, labels: &[bool]) -> Result<Vec<usize>> {
        let cols = f.values.cols();
        match *self {
            CandidateFilter::Exhaustive => Ok((0..cols).collect()),
            CandidateFilter::TopK(k) => mean_diff_filter(&f.values, labels, k.min(cols)),
            CandidateFilter::PerBlock(k) => {
                let scores = mean_diff_scores(&f.values, labels)?;
                let n_blocks = f.sources.iter().map(|s| s.block() + 1).max().unwrap_or(0);
                let mut out = Vec::new();
                for b in 0..n_blocks {
                    let in_block: Vec<usize> = (0..cols).filter(|&j| f.sources[j].block() == b).collect();
                    out.extend(rank_desc(&scores, &in_block).into_iter().take(k));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneDProbe {
    pub feature: usize,
    pub model: LogisticModel,
    pub val_auc: f64,
    pub converged: bool,
}

/// Cross-validated penalty choice on one training column, refit, and the
/// validation AUC.
pub fn fit_1d_probe(
    train_col: &[f64],
    train_labels: &[bool],
    val_col: &[f64],
    val_labels: &[bool],
    folds: &[usize],
) -> Result<OneDProbe> {
    let x = Matrix::from_vec(train_col.len(), 1, train_col.to_vec())?;
    let cv = fit_with_cv(&x, train_labels, folds)?;
    let xv = Matrix::from_vec(val_col.len(), 1, val_col.to_vec())?;
    let val_auc = roc_auc(&cv.model.decision(&xv)?, val_labels)?;
    Ok(OneDProbe {
        feature: 0,
        model: cv.model,
        val_auc,
        converged: cv.converged,
    })
}

/// Where probe inputs come from. Every encoder reads the source model's
/// state after the whole document (the position that predicts the next
/// token).
#[derive(Clone, Copy, Debug)]
pub enum Encoder<'a> {
    GlpMetaNeurons {
        model: &'a DenoiserModel,
        scaler: &'a Scaler,
        t: f64,
        seed: u64,
    },
    RawHook,
    RawSourceMlp,
    SaeLatents {
        sae: &'a SaeModel,
        scaler: &'a Scaler,
    },
}

impl Encoder<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Encoder::GlpMetaNeurons { .. } => "glp",
            Encoder::RawHook => "raw-hook",
            Encoder::RawSourceMlp => "raw-source-mlp",
            Encoder::SaeLatents { .. } => "sae",
        }
    }

    pub fn t(&self) -> Option<f64> {
        match self {
            Encoder::GlpMetaNeurons { t, .. } => Some(*t),
            _ => None,
        }
    }

    /// Features of given hook rows (and the matching source MLP rows).
    pub fn encode_hooks(&self, hook: &Matrix, mlp: &Matrix, seed_tag: &str) -> Result<FeatureMatrix> {
        match *self {
            Encoder::GlpMetaNeurons { model, scaler, t, seed } => {
                extract_meta_neurons(model, hook, t, scaler, derive_seed(seed, seed_tag))
            }
            Encoder::RawHook => Ok(FeatureMatrix {
                values: hook.clone(),
                sources: (0..hook.cols()).map(FeatureSource::Dim).collect(),
            }),
            Encoder::RawSourceMlp => Ok(FeatureMatrix {
                values: mlp.clone(),
                sources: (0..mlp.cols()).map(FeatureSource::Dim).collect(),
            }),
            Encoder::SaeLatents { sae, scaler } => Ok(FeatureMatrix {
                values: sae.encode(&scaler.apply(hook)?)?,
                sources: (0..sae.config.latents).map(FeatureSource::SaeUnit).collect(),
            }),
        }
    }

    pub fn encode_docs(&self, lm: &SourceLm, docs: &[Vec<usize>], seed_tag: &str) -> Result<FeatureMatrix> {
        let (hook, mlp) = final_states(lm, docs)?;
        self.encode_hooks(&hook, &mlp, seed_tag)
    }
}

/// Hook and MLP rows for the position after each document's last token.
pub fn final_states(lm: &SourceLm, docs: &[Vec<usize>]) -> Result<(Matrix, Matrix)> {
    let k = lm.config.context;
    let mut ids = Vec::with_capacity(docs.len() * k);
    for d in docs {
        let mut ext = d.clone();
        ext.push(0);
        let all = context_ids(&ext, k, lm.config.bos());
        ids.extend_from_slice(&all[d.len() * k..]);
    }
    if docs.iter().flatten().any(|&t| t >= lm.config.vocab) {
        return Err(GlpError::InvalidArgument("token id out of range".into()));
    }
    let hook = lm.hook_from_ids(&ids);
    let (_, mlp) = lm.head_from_hook(&hook);
    Ok((hook, mlp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeMode {
    OneD,
    Dense,
}

impl ProbeMode {
    pub fn label(&self) -> &'static str {
        match self {
            ProbeMode::OneD => "1d",
            ProbeMode::Dense => "dense",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub task: String,
    pub encoder: String,
    pub mode: ProbeMode,
    pub t: Option<f64>,
    pub filter: String,
    pub chosen_l2: f64,
    pub val_auc: f64,
    pub test_auc: f64,
    /// The selected column's origin (1-D mode only).
    pub feature: Option<FeatureSource>,
    pub converged: bool,
}

/// Encoded train/val features for one task; reusable across filters and
/// modes.
pub struct EncodedTask {
    pub train: FeatureMatrix,
    pub val: FeatureMatrix,
    pub test: TestScorer,
    pub folds: Vec<usize>,
}

pub fn encode_task(lm: &SourceLm, task: &ProbeTask, encoder: &Encoder) -> Result<EncodedTask> {
    let train = encoder.encode_docs(lm, &task.train.docs, "probe/train")?;
    let val = encoder.encode_docs(lm, &task.val.docs, "probe/val")?;
    let test = task.test_scorer(|docs| Ok(encoder.encode_docs(lm, docs, "probe/test")?.values))?;
    Ok(EncodedTask {
        train,
        val,
        test,
        folds: stratified_folds(&task.train.labels, logistic::CV_FOLDS, FOLD_SEED),
    })
}

/// 1-D mode: filter, fit each candidate, keep the best validation AUC (lower
/// column on ties), score it on test. Dense mode: one probe on every column.
pub fn run_probe(
    task: &ProbeTask,
    enc: &EncodedTask,
    encoder: &Encoder,
    filter: CandidateFilter,
    mode: ProbeMode,
) -> Result<ProbeReport> {
    let (ytr, yva) = (&task.train.labels, &task.val.labels);
    let report = |chosen_l2, val_auc, test_auc, feature, converged| ProbeReport {
        task: task.name.clone(),
        encoder: encoder.name().to_string(),
        mode,
        t: encoder.t(),
        filter: filter.label(),
        chosen_l2,
        val_auc,
        test_auc,
        feature,
        converged,
    };
    match mode {
        ProbeMode::OneD => {
            let mut reports = run_1d_probes(task, enc, encoder, &[filter])?;
            Ok(reports.remove(0))
        }
        ProbeMode::Dense => {
            let cv = fit_with_cv(&enc.train.values, ytr, &enc.folds)?;
            let val_auc = roc_auc(&cv.model.decision(&enc.val.values)?, yva)?;
            let test_auc = enc.test.auc(|x| cv.model.decision(x))?;
            Ok(report(cv.model.lambda, val_auc, test_auc, None, cv.converged))
        }
    }
}

/// 1-D probes under several filters. Each column is fitted at most once
/// and shared between filters whose candidate sets overlap.
pub fn run_1d_probes(
    task: &ProbeTask,
    enc: &EncodedTask,
    encoder: &Encoder,
    filters: &[CandidateFilter],
) -> Result<Vec<ProbeReport>> {
    let (ytr, yva) = (&task.train.labels, &task.val.labels);
    let mut fitted: Vec<Option<OneDProbe>> = vec![None; enc.train.values.cols()];
    let mut out = Vec::with_capacity(filters.len());
    for &filter in filters {
        let cands = filter.candidates(&enc.train, ytr)?;
        let mut best: Option<usize> = None;
        for &c in &cands {
            if fitted[c].is_none() {
                let mut p = fit_1d_probe(&enc.train.values.col(c), ytr, &enc.val.values.col(c), yva, &enc.folds)?;
                p.feature = c;
                fitted[c] = Some(p);
            }
            let auc = fitted[c].as_ref().map_or(f64::NAN, |p| p.val_auc);
            let better = match best {
                None => true,
                Some(b) => {
                    let b_auc = fitted[b].as_ref().map_or(f64::NAN, |p| p.val_auc);
                    auc > b_auc || (auc == b_auc && c < b)
                }
            };
            if better {
                best = Some(c);
            }
        }
        let col = best.ok_or_else(|| GlpError::InvalidArgument("no candidate features".into()))?;
        let best = fitted[col].as_ref().expect("fitted above");
        let test_auc = enc.test.auc(|x| best.model.decision(&x.select_cols(&[col])))?;
        out.push(ProbeReport {
            task: task.name.clone(),
            encoder: encoder.name().to_string(),
            mode: ProbeMode::OneD,
            t: encoder.t(),
            filter: filter.label(),
            chosen_l2: best.model.lambda,
            val_auc: best.val_auc,
            test_auc,
            feature: Some(enc.train.sources[col]),
            converged: best.converged,
        });
    }
    Ok(out)
}

/// Encode and probe in one call.
pub fn probe_task_pipeline(
    lm: &SourceLm,
    task: &ProbeTask,
    encoder: &Encoder,
    filter: CandidateFilter,
    mode: ProbeMode,
) -> Result<ProbeReport> {
    let enc = encode_task(lm, task, encoder)?;
    run_probe(task, &enc, encoder, filter, mode)
}

pub const PROBE_CSV_HEADER: &str = "task,encoder,mode,t,k,chosen_l2,val_auc,test_auc,feature_block,feature_unit";

pub fn probe_csv(reports: &[ProbeReport]) -> String {
    let mut s = format!("{PROBE_CSV_HEADER}\n");
    for r in reports {
        let (block, unit) = match r.feature {
            Some(FeatureSource::MetaNeuron { block, unit }) => (block.to_string(), unit.to_string()),
            Some(FeatureSource::Dim(u)) | Some(FeatureSource::SaeUnit(u)) => (String::new(), u.to_string()),
            None => (String::new(), String::new()),
        };
        let t = r.t.map(|t| format!("{t:?}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{:?},{:?},{:?},{},{}\n",
            r.task,
            r.encoder,
            r.mode.label(),
            t,
            r.filter,
            r.chosen_l2,
            r.val_auc,
            r.test_auc,
            block,
            unit
        ));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivatingExample {
    pub doc: usize,
    pub position: usize,
    pub value: f64,
}

/// Exhaustive scan for the `top_n` largest values of `column`; `features`
/// returns one row per position of a document. Ties go to the earlier
/// `(doc, position)`.
pub fn max_activating_examples(
    corpus: &[Document],
    features: &mut dyn FnMut(&Document) -> Result<Matrix>,
    column: usize,
    top_n: usize,
) -> Result<Vec<ActivatingExample>> {
    let mut all = Vec::new();
    for (i, d) in corpus.iter().enumerate() {
        let f = features(d)?;
        if column >= f.cols() {
            return Err(GlpError::InvalidArgument(format!("column {column} of {}", f.cols())));
        }
        if f.rows() != d.tokens.len() {
            return Err(GlpError::shape("max_activating_examples", "one row per position"));
        }
        all.extend((0..f.rows()).map(|p| ActivatingExample {
            doc: i,
            position: p,
            value: f.get(p, column),
        }));
    }
    all.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then(a.doc.cmp(&b.doc))
            .then(a.position.cmp(&b.position))
    });
    all.truncate(top_n);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::source::{generate_corpus, GrammarSpec, SourceLmConfig};

    #[test]
    fn meta_neuron_extraction_accounting_and_t0() {
        let model = DenoiserModel::init(DenoiserConfig::new(8, 3), 1).unwrap();
        let acts = Rng::new(2).normal_matrix(10, 8);
        let sc = Scaler::fit(&acts).unwrap();
        let a = extract_meta_neurons(&model, &acts, 0.0, &sc, 1).unwrap();
        let b = extract_meta_neurons(&model, &acts, 0.0, &sc, 99).unwrap();
        assert_eq!(a.values.shape(), (10, 3 * 32));
        assert_eq!(a.values, b.values);
        assert_eq!(a.sources[33], FeatureSource::MetaNeuron { block: 1, unit: 1 });
        let c = extract_meta_neurons(&model, &acts, 0.5, &sc, 1).unwrap();
        assert_ne!(a.values, c.values);
        assert!(extract_meta_neurons(&model, &acts, 1.5, &sc, 1).is_err());
        assert_eq!(DenoiserConfig::new(32, 3).meta_neuron_count(), 384);
    }

    #[test]
    fn filter_ranks_the_separating_column_first() {
        let mut rng = Rng::new(4);
        let labels: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
        let mut x = rng.normal_matrix(60, 5);
        for (i, &l) in labels.iter().enumerate() {
            x.set(i, 3, if l { 5.0 } else { -5.0 } + 0.01 * rng.normal());
        }
        assert_eq!(mean_diff_filter(&x, &labels, 1).unwrap(), vec![3]);
        let mut all = mean_diff_filter(&x, &labels, 5).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        // Constant columns tie at zero and keep index order.
        let flat = Matrix::filled(10, 3, 1.0);
        let lab: Vec<bool> = (0..10).map(|i| i < 5).collect();
        assert_eq!(mean_diff_filter(&flat, &lab, 3).unwrap(), vec![0, 1, 2]);
        assert!(mean_diff_filter(&flat, &lab, 4).is_err());
    }

    #[test]
    fn one_d_probe_separable_and_noise() {
        let mut rng = Rng::new(6);
        let ytr: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let yva: Vec<bool> = (0..200).map(|i| i % 2 == 1).collect();
        let sep = |y: &[bool]| y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect::<Vec<f64>>();
        let folds = stratified_folds(&ytr, 5, FOLD_SEED);
        let p = fit_1d_probe(&sep(&ytr), &ytr, &sep(&yva), &yva, &folds).unwrap();
        assert_eq!(p.val_auc, 1.0);
        let noise_tr = rng.uniform_vec(200);
        let noise_va = rng.uniform_vec(200);
        let q = fit_1d_probe(&noise_tr, &ytr, &noise_va, &yva, &folds).unwrap();
        // Binomial standard error of an AUC at n=200 is about 0.04.
        assert!((q.val_auc - 0.5).abs() < 0.15, "{}", q.val_auc);
        assert!(L2_GRID.contains(&q.model.lambda));
    }

    #[test]
    fn monotone_transform_leaves_auc_unchanged() {
        let mut rng = Rng::new(8);
        let ytr: Vec<bool> = (0..120).map(|i| i % 2 == 0).collect();
        let yva: Vec<bool> = (0..80).map(|i| i % 2 == 0).collect();
        let col = |y: &[bool], rng: &mut Rng| y.iter().map(|&l| rng.normal() + if l { 0.8 } else { 0.0 }).collect::<Vec<f64>>();
        let (tr, va) = (col(&ytr, &mut rng), col(&yva, &mut rng));
        let folds = stratified_folds(&ytr, 5, FOLD_SEED);
        let a = fit_1d_probe(&tr, &ytr, &va, &yva, &folds).unwrap();
        let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() + 3.0 * x).collect::<Vec<f64>>();
        let b = fit_1d_probe(&f(&tr), &ytr, &f(&va), &yva, &folds).unwrap();
        assert!((a.val_auc - b.val_auc).abs() <= 1e-9);
    }

    #[test]
    fn pipeline_runs_end_to_end_and_hides_test_labels() {
        let spec = GrammarSpec::two_regime(32, 1).unwrap();
        let lm = SourceLm::init(SourceLmConfig::default(), 2).unwrap();
        let task = build_task("regime", TaskKind::Regime { doc_len: 8 }, &spec, (80, 40, 40), 3).unwrap();
        let model = DenoiserModel::init(DenoiserConfig::new(32, 2), 4).unwrap();
        let corpus: Vec<Vec<usize>> = generate_corpus(&spec, 30, 16, 5).unwrap().into_iter().map(|d| d.tokens).collect();
        let (hook, _) = final_states(&lm, &corpus).unwrap();
        let scaler = Scaler::fit(&hook).unwrap();
        let glp = Encoder::GlpMetaNeurons { model: &model, scaler: &scaler, t: 0.1, seed: 1 };
        let enc = encode_task(&lm, &task, &glp).unwrap();
        assert_eq!(enc.train.values.cols(), 2 * 128);
        let r = run_probe(&task, &enc, &glp, CandidateFilter::TopK(8), ProbeMode::OneD).unwrap();
        assert!((0.0..=1.0).contains(&r.val_auc) && (0.0..=1.0).contains(&r.test_auc));
        assert!(matches!(r.feature, Some(FeatureSource::MetaNeuron { .. })));
        let blocks = CandidateFilter::PerBlock(1).candidates(&enc.train, &task.train.labels).unwrap();
        assert_eq!(blocks.len(), 2);
        assert!(blocks[0] < 128 && blocks[1] >= 128);
        let raw = probe_task_pipeline(&lm, &task, &Encoder::RawHook, CandidateFilter::Exhaustive, ProbeMode::Dense).unwrap();
        let csv = probe_csv(&[r, raw]);
        assert!(csv.starts_with(PROBE_CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn max_activating_planted_and_constant() {
        let spec = GrammarSpec::two_regime(32, 1).unwrap();
        let docs = generate_corpus(&spec, 20, 16, 9).unwrap();
        let v = 4;
        let mut planted = |d: &Document| {
            Ok(Matrix::from_rows(&d.tokens.iter().map(|&t| [if t == v { 1.0 } else { 0.0 }]).collect::<Vec<_>>()))
        };
        let top = max_activating_examples(&docs, &mut planted, 0, 5).unwrap();
        assert_eq!(top.len(), 5);
        for e in &top {
            assert_eq!(docs[e.doc].tokens[e.position], v);
        }
        let mut constant = |d: &Document| Ok(Matrix::filled(d.tokens.len(), 2, 0.5));
        let top = max_activating_examples(&docs, &mut constant, 1, 3).unwrap();
        let at: Vec<(usize, usize)> = top.iter().map(|e| (e.doc, e.position)).collect();
        assert_eq!(at, vec![(0, 0), (0, 1), (0, 2)]);
        assert!(max_activating_examples(&docs, &mut constant, 2, 3).is_err());
    }
}
