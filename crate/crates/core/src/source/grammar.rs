// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-regime Markov token grammar, labeled corpora, and the exact Bayes
//! judge for the regime label.

use crate::error::{GlpError, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;
use std::path::Path;

/// Mass each row puts on its three planted successors; the rest is spread
/// uniformly over the vocabulary.
pub const SUCCESSOR_MASS: f64 = 0.85;
pub const SUCCESSORS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GrammarSpec {
    pub vocab_size: usize,
    /// Row-stochastic transitions of the positive regime.
    pub p_pos: Matrix,
    pub p_neg: Matrix,
    pub init_pos: Vec<f64>,
    pub init_neg: Vec<f64>,
    /// Prior probability of the positive label.
    pub prior_pos: f64,
}

impl GrammarSpec {
    /// Positive-regime rows send most mass into the lower half of the
    /// vocabulary, negative-regime rows into the upper half.
    pub fn two_regime(vocab_size: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 * SUCCESSORS {
            return Err(GlpError::InvalidArgument(format!(
                "vocab_size {vocab_size} too small for {SUCCESSORS} successors per half"
            )));
        }
        let mut rng = Rng::new(seed);
        let half = vocab_size / 2;
        let background = (1.0 - SUCCESSOR_MASS) / vocab_size as f64;
        let mut build = |lo: usize, hi: usize| {
            let mut p = Matrix::filled(vocab_size, vocab_size, background);
            for s in 0..vocab_size {
                let pool: Vec<usize> = (lo..hi).collect();
                let pick = rng.permutation(pool.len());
                for &i in &pick[..SUCCESSORS] {
                    let v = p.get(s, pool[i]);
                    p.set(s, pool[i], v + SUCCESSOR_MASS / SUCCESSORS as f64);
                }
            }
            p
        };
        let p_pos = build(0, half);
        let p_neg = build(half, vocab_size);
        let uniform = vec![1.0 / vocab_size as f64; vocab_size];
        let spec = Self {
            vocab_size,
            p_pos,
            p_neg,
            init_pos: uniform.clone(),
            init_neg: uniform,
            prior_pos: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab_size;
        for (name, p) in [("p_pos", &self.p_pos), ("p_neg", &self.p_neg)] {
            if p.shape() != (v, v) {
                return Err(GlpError::shape("grammar", format!("{name} is {:?}", p.shape())));
            }
            for (r, row) in p.iter_rows().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(GlpError::InvalidArgument(format!(
                        "{name} row {r} is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        for init in [&self.init_pos, &self.init_neg] {
            if init.len() != v || (init.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(GlpError::InvalidArgument("initial distribution invalid".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.prior_pos) {
            return Err(GlpError::InvalidArgument("prior outside [0, 1]".into()));
        }
        Ok(())
    }

    fn chain(&self, positive: bool) -> (&Matrix, &[f64]) {
        if positive {
            (&self.p_pos, &self.init_pos)
        } else {
            (&self.p_neg, &self.init_neg)
        }
    }

    /// Appends `n` tokens drawn from one regime, continuing from the last
    /// token of `tokens` (or the initial distribution when empty).
    pub fn extend(&self, positive: bool, tokens: &mut Vec<usize>, n: usize, rng: &mut Rng) {
        let (p, init) = self.chain(positive);
        for _ in 0..n {
            let next = match tokens.last() {
                Some(&prev) => rng.categorical(p.row(prev)),
                None => rng.categorical(init),
            };
            tokens.push(next);
        }
    }

    pub fn sample_doc(&self, positive: bool, len: usize, rng: &mut Rng) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(len);
        self.extend(positive, &mut tokens, len, rng);
        tokens
    }

    /// `log P(tokens | regime)`; `−∞` when some transition is impossible.
    pub fn log_likelihood(&self, tokens: &[usize], positive: bool) -> f64 {
        let (p, init) = self.chain(positive);
        let Some(&first) = tokens.first() else {
            return 0.0;
        };
        let mut ll = init[first].ln();
        for w in tokens.windows(2) {
            ll += p.get(w[0], w[1]).ln();
        }
        ll
    }

    /// Posterior `P(label = + | tokens)`.
    pub fn concept_score(&self, tokens: &[usize]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(GlpError::InvalidArgument("concept score of an empty sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(GlpError::InvalidArgument(format!("token {bad} outside vocabulary")));
        }
        let lp = self.log_likelihood(tokens, true) + self.prior_pos.ln();
        let ln = self.log_likelihood(tokens, false) + (1.0 - self.prior_pos).ln();
        Ok(match (lp == f64::NEG_INFINITY, ln == f64::NEG_INFINITY) {
            (true, true) => self.prior_pos,
            (false, true) => 1.0,
            (true, false) => 0.0,
            (false, false) => crate::ops::sigmoid(lp - ln),
        })
    }

    /// Long-run per-token entropy of the labeled source: each regime's
    /// stationary distribution weighted row entropy, mixed by the prior.
    pub fn entropy_rate(&self) -> f64 {
        let rate = |p: &Matrix| {
            let pi = stationary(p);
            (0..p.rows())
                .map(|s| {
                    let h: f64 = p
                        .row(s)
                        .iter()
                        .filter(|&&x| x > 0.0)
                        .map(|&x| -x * x.ln())
                        .sum();
                    pi[s] * h
                })
                .sum::<f64>()
        };
        self.prior_pos * rate(&self.p_pos) + (1.0 - self.prior_pos) * rate(&self.p_neg)
    }
}

/// Stationary distribution by power iteration from uniform.
pub fn stationary(p: &Matrix) -> Vec<f64> {
    let n = p.rows();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let next = Matrix::row_vector(&pi).matmul(p).into_vec();
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub positive: bool,
    pub tokens: Vec<usize>,
}

pub fn generate_corpus(spec: &GrammarSpec, n_docs: usize, doc_len: usize, seed: u64) -> Result<Vec<Document>> {
    if doc_len < 2 {
        return Err(GlpError::InvalidArgument(format!("doc_len must be >= 2, got {doc_len}")));
    }
    let mut rng = Rng::new(seed);
    Ok((0..n_docs)
        .map(|_| {
            let positive = rng.uniform() < spec.prior_pos;
            Document {
                positive,
                tokens: spec.sample_doc(positive, doc_len, &mut rng),
            }
        })
        .collect())
}

/// One document per line: `+` or `-`, a tab, space-separated token ids.
pub fn corpus_to_text(docs: &[Document]) -> String {
    let mut s = String::new();
    for d in docs {
        s.push(if d.positive { '+' } else { '-' });
        s.push('\t');
        let ids: Vec<String> = d.tokens.iter().map(|t| t.to_string()).collect();
        s.push_str(&ids.join(" "));
        s.push('\n');
    }
    s
}

pub fn corpus_from_text(text: &str) -> Result<Vec<Document>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |detail: &str| GlpError::Parse {
                what: "corpus",
                detail: format!("line {}: {detail}", i + 1),
            };
            let (label, body) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let positive = match label {
                "+" => true,
                "-" => false,
                _ => return Err(bad("label must be + or -")),
            };
            let tokens = body
                .split(' ')
                .map(|t| t.parse::<usize>().map_err(|_| bad("bad token id")))
                .collect::<Result<Vec<_>>>()?;
            Ok(Document { positive, tokens })
        })
        .collect()
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    std::fs::write(path, corpus_to_text(docs)).map_err(|e| GlpError::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| GlpError::io(path, e))?;
    corpus_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(p_pos: [[f64; 2]; 2], p_neg: [[f64; 2]; 2], prior: f64) -> GrammarSpec {
        GrammarSpec {
            vocab_size: 2,
            p_pos: Matrix::from_rows(&p_pos),
            p_neg: Matrix::from_rows(&p_neg),
            init_pos: vec![0.5, 0.5],
            init_neg: vec![0.5, 0.5],
            prior_pos: prior,
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let g = GrammarSpec::two_regime(32, 1).unwrap();
        g.validate().unwrap();
        for r in 0..32 {
            assert!((g.p_pos.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn hand_computed_posterior() {
        // tokens 0,1,1; P+ = [[.9,.1],[.2,.8]], P− = [[.5,.5],[.6,.4]], prior .3
        let g = two_state([[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.6, 0.4]], 0.3);
        let lp = 0.5 * 0.1 * 0.8;
        let ln = 0.5 * 0.5 * 0.4;
        let want = 0.3 * lp / (0.3 * lp + 0.7 * ln);
        let got = g.concept_score(&[0, 1, 1]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn degenerate_posteriors() {
        let g = two_state([[0.5, 0.5], [0.5, 0.5]], [[1.0, 0.0], [0.0, 1.0]], 0.4);
        assert_eq!(g.concept_score(&[0, 1]).unwrap(), 1.0);
        let same = two_state([[0.7, 0.3], [0.1, 0.9]], [[0.7, 0.3], [0.1, 0.9]], 0.4);
        assert!((same.concept_score(&[0, 1, 1, 0]).unwrap() - 0.4).abs() < 1e-15);
        assert!(g.concept_score(&[]).is_err());
    }

    #[test]
    fn absorbing_chain_gives_constant_docs() {
        let g = two_state([[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]], 1.0);
        for d in generate_corpus(&g, 20, 10, 3).unwrap() {
            assert!(d.positive);
            assert!(d.tokens.iter().all(|&t| t == d.tokens[0]));
        }
    }

    #[test]
    fn corpus_is_seeded_and_roundtrips() {
        let g = GrammarSpec::two_regime(32, 2).unwrap();
        let a = generate_corpus(&g, 30, 16, 9).unwrap();
        assert_eq!(a, generate_corpus(&g, 30, 16, 9).unwrap());
        assert_eq!(corpus_from_text(&corpus_to_text(&a)).unwrap(), a);
        assert!(corpus_from_text("x\t1 2\n").is_err());
        assert!(generate_corpus(&g, 1, 1, 0).is_err());
    }

    #[test]
    fn entropy_rate_of_iid_chain() {
        let g = two_state([[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]], 0.5);
        assert!((g.entropy_rate() - 2f64.ln()).abs() < 1e-12);
    }
}
