// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy source world: a two-regime token grammar, a small language model
//! with a hookable activation, and steering helpers.

pub mod grammar;
pub mod lm;
pub mod steer;

pub use grammar::{
    corpus_from_text, corpus_to_text, generate_corpus, read_corpus, write_corpus, Document,
    GrammarSpec,
};
pub use lm::{
    context_ids, corpus_fluency, corpus_nll, train_source_lm, SourceLm, SourceLmConfig,
    SourceOutput, SourceTrainSettings,
};
pub use steer::{diffmean_vector, relative_coefficient, SteeringCoefficient};

use crate::error::Result;
use crate::tensor::Matrix;

/// Hook activations of every non-special position (1..) of each document,
/// stacked in document order.
pub fn hook_rows(lm: &SourceLm, docs: &[Document]) -> Result<Matrix> {
    let mut parts = Vec::with_capacity(docs.len());
    for d in docs {
        let out = lm.source_forward(&d.tokens, None)?;
        parts.push(out.hook.slice_rows(1.min(out.hook.rows()), out.hook.rows()));
    }
    Matrix::vstack(&parts)
}
