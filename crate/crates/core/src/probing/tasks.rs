// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic binary concept tasks over grammar documents. Test labels stay
//! inside [`TestScorer`], which only hands back an AUC.

use crate::error::{GlpError, Result};
use crate::metrics::roc_auc;
use crate::rng::Rng;
use crate::source::GrammarSpec;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    /// Label is the document's regime.
    Regime { doc_len: usize },
    /// Positives have `token` planted among the last `window` tokens;
    /// negatives have no `token` there.
    TokenInWindow { token: usize, window: usize, doc_len: usize },
    /// As above for the consecutive pair `(first, second)`.
    BigramInWindow { first: usize, second: usize, window: usize, doc_len: usize },
    /// Label is `last token < vocab / 2`.
    LastTokenLow { doc_len: usize },
    /// Label is the parity of a document length drawn from `min_len..=max_len`.
    /// Invisible to a short context window.
    LengthParity { min_len: usize, max_len: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub docs: Vec<Vec<usize>>,
    pub labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
struct HiddenSplit {
    docs: Vec<Vec<usize>>,
    labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTask {
    pub name: String,
    pub kind: TaskKind,
    pub train: Split,
    pub val: Split,
    test: HiddenSplit,
}

/// Test features and labels, readable only through [`TestScorer::auc`].
pub struct TestScorer {
    features: Matrix,
    labels: Vec<bool>,
}

impl TestScorer {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// AUC of `score` applied to the test features.
    pub fn auc(&self, score: impl FnOnce(&Matrix) -> Result<Vec<f64>>) -> Result<f64> {
        roc_auc(&score(&self.features)?, &self.labels)
    }
}

impl ProbeTask {
    pub fn test_len(&self) -> usize {
        self.test.labels.len()
    }

    /// Encodes the test documents and seals them with their labels.
    pub fn test_scorer(&self, encode: impl FnOnce(&[Vec<usize>]) -> Result<Matrix>) -> Result<TestScorer> {
        let features = encode(&self.test.docs)?;
        if features.rows() != self.test.labels.len() {
            return Err(GlpError::shape("test_scorer", "one feature row per document"));
        }
        Ok(TestScorer {
            features,
            labels: self.test.labels.clone(),
        })
    }
}

fn window_has(doc: &[usize], window: usize, pred: impl Fn(&[usize]) -> bool, width: usize) -> bool {
    let start = doc.len().saturating_sub(window);
    doc[start..].windows(width).any(pred)
}

fn sample_example(kind: &TaskKind, spec: &GrammarSpec, label: bool, rng: &mut Rng) -> Vec<usize> {
    let regime = rng.uniform() < spec.prior_pos;
    match *kind {
        TaskKind::Regime { doc_len } => spec.sample_doc(label, doc_len, rng),
        TaskKind::TokenInWindow { token, window, doc_len } => loop {
            let mut doc = spec.sample_doc(regime, doc_len, rng);
            if label {
                let w = window.min(doc_len);
                doc[doc_len - 1 - rng.below(w)] = token;
                return doc;
            }
            if !window_has(&doc, window, |s| s[0] == token, 1) {
                return doc;
            }
        },
        TaskKind::BigramInWindow { first, second, window, doc_len } => loop {
            let mut doc = spec.sample_doc(regime, doc_len, rng);
            if label {
                let w = window.min(doc_len) - 1;
                let at = doc_len - 2 - rng.below(w);
                doc[at] = first;
                doc[at + 1] = second;
                return doc;
            }
            if !window_has(&doc, window, |s| s[0] == first && s[1] == second, 2) {
                return doc;
            }
        },
        TaskKind::LastTokenLow { doc_len } => loop {
            let doc = spec.sample_doc(regime, doc_len, rng);
            if (doc[doc_len - 1] < spec.vocab_size / 2) == label {
                return doc;
            }
        },
        TaskKind::LengthParity { min_len, max_len } => loop {
            let len = min_len + rng.below(max_len - min_len + 1);
            if (len % 2 == 1) == label {
                return spec.sample_doc(regime, len, rng);
            }
        },
    }
}

fn balanced_split(kind: &TaskKind, spec: &GrammarSpec, n: usize, rng: &mut Rng) -> (Vec<Vec<usize>>, Vec<bool>) {
    let mut labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    rng.shuffle(&mut labels);
    let docs = labels.iter().map(|&l| sample_example(kind, spec, l, rng)).collect();
    (docs, labels)
}

/// Builds one task with class-balanced train/val/test splits.
pub fn build_task(
    name: &str,
    kind: TaskKind,
    spec: &GrammarSpec,
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<ProbeTask> {
    if sizes.0 < 20 || sizes.1 < 2 || sizes.2 < 2 {
        return Err(GlpError::InvalidArgument("every split needs both classes".into()));
    }
    let mut rng = Rng::new(seed).derive(name);
    let (docs, labels) = balanced_split(&kind, spec, sizes.0, &mut rng);
    let train = Split { docs, labels };
    let (docs, labels) = balanced_split(&kind, spec, sizes.1, &mut rng);
    let val = Split { docs, labels };
    let (docs, labels) = balanced_split(&kind, spec, sizes.2, &mut rng);
    Ok(ProbeTask {
        name: name.to_string(),
        kind,
        train,
        val,
        test: HiddenSplit { docs, labels },
    })
}

/// The twelve-task suite: regime detection at four lengths, four planted
/// tokens, two planted bigrams, a last-token control, and a length-parity
/// control that no short-context feature can see.
pub fn task_suite(spec: &GrammarSpec, sizes: (usize, usize, usize), seed: u64) -> Result<Vec<ProbeTask>> {
    let v = spec.vocab_size;
    let kinds = vec![
        ("regime_len2", TaskKind::Regime { doc_len: 2 }),
        ("regime_len4", TaskKind::Regime { doc_len: 4 }),
        ("regime_len8", TaskKind::Regime { doc_len: 8 }),
        ("regime_len32", TaskKind::Regime { doc_len: 32 }),
        ("token_a", TaskKind::TokenInWindow { token: 3 % v, window: 4, doc_len: 24 }),
        ("token_b", TaskKind::TokenInWindow { token: 11 % v, window: 4, doc_len: 24 }),
        ("token_c", TaskKind::TokenInWindow { token: 20 % v, window: 4, doc_len: 24 }),
        ("token_d", TaskKind::TokenInWindow { token: 29 % v, window: 4, doc_len: 24 }),
        ("bigram_a", TaskKind::BigramInWindow { first: 5 % v, second: 17 % v, window: 6, doc_len: 24 }),
        ("bigram_b", TaskKind::BigramInWindow { first: 26 % v, second: 9 % v, window: 6, doc_len: 24 }),
        ("last_token_low", TaskKind::LastTokenLow { doc_len: 24 }),
        ("length_parity", TaskKind::LengthParity { min_len: 20, max_len: 40 }),
    ];
    kinds
        .into_iter()
        .map(|(name, kind)| build_task(name, kind, spec, sizes, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GrammarSpec {
        GrammarSpec::two_regime(32, 1).unwrap()
    }

    #[test]
    fn labels_follow_their_definitions() {
        let s = spec();
        let tasks = task_suite(&s, (40, 10, 10), 3).unwrap();
        assert_eq!(tasks.len(), 12);
        for t in &tasks {
            for split in [&t.train, &t.val] {
                assert!(split.labels.iter().any(|&l| l) && split.labels.iter().any(|&l| !l));
                for (d, &l) in split.docs.iter().zip(&split.labels) {
                    match t.kind {
                        TaskKind::TokenInWindow { token, window, .. } => {
                            assert_eq!(window_has(d, window, |w| w[0] == token, 1), l)
                        }
                        TaskKind::BigramInWindow { first, second, window, .. } => {
                            assert_eq!(window_has(d, window, |w| w[0] == first && w[1] == second, 2), l)
                        }
                        TaskKind::LastTokenLow { .. } => assert_eq!(*d.last().unwrap() < 16, l),
                        TaskKind::LengthParity { .. } => assert_eq!(d.len() % 2 == 1, l),
                        TaskKind::Regime { doc_len } => assert_eq!(d.len(), doc_len),
                    }
                }
            }
        }
    }

    #[test]
    fn seeded_and_disjoint_streams() {
        let a = task_suite(&spec(), (40, 10, 10), 3).unwrap();
        let b = task_suite(&spec(), (40, 10, 10), 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].train.docs, a[0].val.docs);
    }

    #[test]
    fn scorer_reports_auc_only() {
        let t = build_task("regime", TaskKind::Regime { doc_len: 6 }, &spec(), (40, 10, 10), 1).unwrap();
        let scorer = t
            .test_scorer(|docs| Ok(Matrix::from_rows(&docs.iter().map(|d| [d[5] as f64]).collect::<Vec<_>>())))
            .unwrap();
        assert_eq!(scorer.len(), 10);
        // Low tokens belong to the positive regime.
        let auc = scorer.auc(|f| Ok(f.col(0).iter().map(|v| -v).collect())).unwrap();
        assert!(auc > 0.7, "{auc}");
        assert!(t.test_scorer(|_| Ok(Matrix::zeros(3, 1))).is_err());
    }
}
