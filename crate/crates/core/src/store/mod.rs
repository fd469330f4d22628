// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation data pipeline: buffered streaming, the on-disk activation
//! format, standardization, and splitting.

mod file;
mod scaler;
mod stream;

pub use file::{
    decode_activations, encode_activations, quantize_f32, read_activations, write_activations,
    ActivationHeader, HEADER_BYTES,
};
pub use scaler::{Scaler, STD_FLOOR};
pub use stream::{stream_activations, ActivationStream, EpochBatches, Flush, RingBuffer};

use crate::error::{GlpError, Result};
use crate::rng::Rng;

/// Seeded disjoint split of `0..n` into `(train, val)` index lists, each
/// sorted ascending.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(GlpError::InvalidArgument(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let perm = Rng::new(seed).permutation(n);
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}
