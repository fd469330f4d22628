// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation files.
//!
//! ```text
//! "GLPA" | version u32 = 1 | d_act u32 | layer_id u32 | row_count u64 | f32 × d_act·row_count
//! ```
//! Little-endian throughout; the header is 24 bytes.

use crate::error::{GlpError, Result};
use crate::tensor::Matrix;
use std::path::Path;

const MAGIC: &[u8; 4] = b"GLPA";
const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivationHeader {
    pub d_act: u32,
    pub layer_id: u32,
    pub row_count: u64,
}

/// Rows are narrowed to f32 on write.
pub fn encode_activations(acts: &Matrix, layer_id: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * acts.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(acts.cols() as u32).to_le_bytes());
    out.extend_from_slice(&layer_id.to_le_bytes());
    out.extend_from_slice(&(acts.rows() as u64).to_le_bytes());
    for &v in acts.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_activations(bytes: &[u8], path: &Path) -> Result<(ActivationHeader, Matrix)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(GlpError::BadMagic {
            path: path.to_path_buf(),
            expected: "GLPA",
        });
    }
    if bytes.len() < HEADER_BYTES {
        return Err(GlpError::TruncatedPayload {
            path: path.to_path_buf(),
            expected: HEADER_BYTES as u64,
            found: bytes.len() as u64,
        });
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(GlpError::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let header = ActivationHeader {
        d_act: u32_at(8),
        layer_id: u32_at(12),
        row_count: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
    };
    let expected = HEADER_BYTES as u64 + 4 * header.d_act as u64 * header.row_count;
    if bytes.len() as u64 != expected {
        return Err(GlpError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let m = Matrix::from_vec(header.row_count as usize, header.d_act as usize, data)?;
    Ok((header, m))
}

pub fn write_activations(path: &Path, acts: &Matrix, layer_id: u32) -> Result<()> {
    std::fs::write(path, encode_activations(acts, layer_id)).map_err(|e| GlpError::io(path, e))
}

pub fn read_activations(path: &Path) -> Result<(ActivationHeader, Matrix)> {
    let bytes = std::fs::read(path).map_err(|e| GlpError::io(path, e))?;
    decode_activations(&bytes, path)
}

/// Rounds every entry through f32, matching what a file roundtrip stores.
pub fn quantize_f32(acts: &Matrix) -> Matrix {
    acts.map(|v| v as f32 as f64)
}
