// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{GlpError, Result};
use crate::tensor::Matrix;
use std::fmt::Write as _;
use std::path::Path;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension standardizer: `apply(x) = (x − mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fit_count: usize,
}

impl Scaler {
    /// Population statistics, std floored at [`STD_FLOOR`].
    pub fn fit(acts: &Matrix) -> Result<Self> {
        if acts.rows() < 2 {
            return Err(GlpError::InvalidArgument(format!(
                "fit_scaler needs at least 2 rows, got {}",
                acts.rows()
            )));
        }
        if !acts.all_finite() {
            return Err(GlpError::NonFiniteInput("fit_scaler"));
        }
        let n = acts.rows() as f64;
        let mean = acts.col_means();
        let mut var = vec![0.0; acts.cols()];
        for row in acts.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self {
            mean,
            std,
            fit_count: acts.rows(),
        })
    }

    /// Identity transform for `d` dimensions.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
            fit_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(GlpError::shape(
                op,
                format!("{} columns, scaler has {}", x.cols(), self.dim()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x, "scaler_apply")?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z, "scaler_invert")?;
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    /// Text form: a header line, then `mean` and `std` lines of
    /// shortest-roundtrip decimals.
    pub fn to_text(&self) -> String {
        let mut s = format!("glp-scaler 1\nd {}\nfit_count {}\nmean", self.dim(), self.fit_count);
        for v in &self.mean {
            write!(s, " {v:?}").unwrap();
        }
        s.push_str("\nstd");
        for v in &self.std {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |detail: String| GlpError::Parse {
            what: "scaler",
            detail,
        };
        let mut lines = text.lines();
        if lines.next() != Some("glp-scaler 1") {
            return Err(bad("missing header".into()));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected {name} line, found {line:?}")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let parse_usize = |v: Vec<String>| -> Result<usize> {
            v.first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad integer".into()))
        };
        let parse_vec = |v: Vec<String>| -> Result<Vec<f64>> {
            v.iter()
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
                .collect()
        };
        let d = parse_usize(field("d")?)?;
        let fit_count = parse_usize(field("fit_count")?)?;
        let mean = parse_vec(field("mean")?)?;
        let std = parse_vec(field("std")?)?;
        if mean.len() != d || std.len() != d {
            return Err(bad(format!("expected {d} values per line")));
        }
        if std.iter().any(|&s| !(s >= STD_FLOOR)) {
            return Err(bad("std below floor".into()));
        }
        Ok(Self {
            mean,
            std,
            fit_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| GlpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GlpError::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn two_point_set() {
        let s = Scaler::fit(&Matrix::from_rows(&[[0.0], [2.0]])).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn constant_column_is_floored() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [3.0, 2.0], [3.0, 4.0]]);
        let s = Scaler::fit(&x).unwrap();
        assert_eq!(s.std[0], STD_FLOOR);
        let z = s.apply(&x).unwrap();
        assert!(z.col(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_invert_roundtrip_and_text() {
        let mut rng = Rng::new(3);
        let x = rng.normal_matrix(50, 6).scale(7.0).add_row(&[1.0, -2.0, 3.0, 100.0, 0.0, -1e3]);
        let s = Scaler::fit(&x).unwrap();
        let back = s.invert(&s.apply(&x).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        assert_eq!(Scaler::from_text(&s.to_text()).unwrap(), s);
        assert!(Scaler::fit(&Matrix::zeros(1, 3)).is_err());
        assert!(s.apply(&Matrix::zeros(2, 5)).is_err());
    }
}
