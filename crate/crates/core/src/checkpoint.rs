// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary weight files.
//!
//! ```text
//! "GLPW" | version u32 | kind u32 | n_config u32 | config u64 × n_config
//!        | n_tensors u32 | per tensor: rows u32, cols u32, f64 × rows·cols
//! ```
//! All integers and floats little-endian.

use crate::error::{GlpError, Result};
use crate::tensor::Matrix;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"GLPW";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Denoiser = 1,
    Sae = 2,
    SourceLm = 3,
}

impl ModelKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Self::Denoiser),
            2 => Some(Self::Sae),
            3 => Some(Self::SourceLm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: Vec<u64>,
    pub tensors: Vec<Matrix>,
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: ModelKind, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(GlpError::Parse {
                what: "checkpoint",
                detail: format!("{} holds {:?}, expected {:?}", path.display(), self.kind, kind),
            });
        }
        Ok(())
    }
}

pub fn encode(kind: ModelKind, config: &[u64], tensors: &[&Matrix]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| 8 + 8 * t.len()).sum();
    let mut out = Vec::with_capacity(20 + 8 * config.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    for w in config {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GlpError::TruncatedPayload {
                path: self.path.to_path_buf(),
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(GlpError::BadMagic {
            path: path.to_path_buf(),
            expected: "GLPW",
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GlpError::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let kind_raw = r.u32()?;
    let kind = ModelKind::from_u32(kind_raw).ok_or_else(|| GlpError::Parse {
        what: "checkpoint",
        detail: format!("unknown model kind {kind_raw}"),
    })?;
    let n_config = r.u32()? as usize;
    let config = (0..n_config).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(GlpError::Parse {
            what: "checkpoint",
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(Checkpoint {
        kind,
        config,
        tensors,
    })
}

pub fn write(path: &Path, kind: ModelKind, config: &[u64], tensors: &[&Matrix]) -> Result<()> {
    let bytes = encode(kind, config, tensors);
    let mut f = std::fs::File::create(path).map_err(|e| GlpError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| GlpError::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| GlpError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let a = Matrix::from_rows(&[[1.0, -0.0, f64::MIN_POSITIVE], [3.5, 1e300, -7.25]]);
        let b = Matrix::zeros(0, 4);
        let bytes = encode(ModelKind::Sae, &[7, 9], &[&a, &b]);
        let ck = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(ck.kind, ModelKind::Sae);
        assert_eq!(ck.config, vec![7, 9]);
        assert_eq!(ck.tensors[0].as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ck.tensors[1].shape(), (0, 4));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let a = Matrix::filled(2, 2, 1.0);
        let bytes = encode(ModelKind::Denoiser, &[1], &[&a]);
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, p), Err(GlpError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad, p), Err(GlpError::BadVersion { found: 9, .. })));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3], p),
            Err(GlpError::TruncatedPayload { .. })
        ));
    }
}
