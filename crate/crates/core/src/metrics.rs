// SPDX-License-Identifier: MIT OR Apache-2.0

//! Distributional and task metrics: Frechet distance, PCA, ROC-AUC, Delta
//! LM loss, and bootstrap intervals.

use crate::error::{GlpError, Result};
use crate::linalg::{psd_sqrt, spectral_map, svd_square, symmetric_eigen};
use crate::rng::Rng;
use crate::source::{Document, SourceLm};
use crate::tensor::Matrix;

/// Mean and population covariance of a point set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianSummary {
    pub fn from_samples(x: &Matrix) -> Result<Self> {
        if x.rows() < 2 {
            return Err(GlpError::InvalidArgument(format!(
                "need at least 2 rows, got {}",
                x.rows()
            )));
        }
        if !x.all_finite() {
            return Err(GlpError::NonFiniteInput("gaussian_summary"));
        }
        let mean = x.col_means();
        let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
        let xc = x.add_row(&neg);
        let cov = xc.t_matmul(&xc).scale(1.0 / x.rows() as f64).symmetrize();
        Ok(Self { mean, cov })
    }
}

fn mean_gap_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Relative eigenvalue cut below which a covariance direction is treated
/// as rounding noise when taking square roots.
const SQRT_RANK_CUT: f64 = 1e-12;

fn covariance_sqrt(cov: &Matrix) -> Result<Matrix> {
    let e = symmetric_eigen(cov)?;
    let cut = SQRT_RANK_CUT * e.values.first().copied().unwrap_or(0.0).max(0.0);
    Ok(spectral_map(&e, |l| if l > cut { l.sqrt() } else { 0.0 }))
}

/// Squared Frechet distance between Gaussian summaries, in the form
/// `‖μx − μy‖² + min_U ‖Σx^{1/2} − Σy^{1/2}·U‖²_F` over orthogonal `U`.
/// This equals the usual trace expression but is a sum of squares, so it
/// does not cancel to noise when the two summaries coincide.
pub fn frechet_sq_from_summaries(x: &GaussianSummary, y: &GaussianSummary) -> Result<f64> {
    if x.mean.len() != y.mean.len() {
        return Err(GlpError::shape(
            "frechet_distance",
            format!("dimension {} vs {}", x.mean.len(), y.mean.len()),
        ));
    }
    let p = covariance_sqrt(&x.cov)?;
    let q = covariance_sqrt(&y.cov)?;
    let svd = svd_square(&q.matmul(&p))?;
    let u = svd.u.matmul_t(&svd.v);
    let diff = p.sub(&q.matmul(&u));
    Ok(mean_gap_sq(&x.mean, &y.mean) + diff.frobenius_norm().powi(2))
}

pub fn frechet_distance_sq(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(GlpError::shape(
            "frechet_distance",
            format!("dimension {} vs {}", x.cols(), y.cols()),
        ));
    }
    frechet_sq_from_summaries(&GaussianSummary::from_samples(x)?, &GaussianSummary::from_samples(y)?)
}

/// Frechet distance between Gaussian fits of two point sets.
pub fn frechet_distance(x: &Matrix, y: &Matrix) -> Result<f64> {
    Ok(frechet_distance_sq(x, y)?.max(0.0).sqrt())
}

/// Closed form `‖μ1 − μ2‖² + tr(S1 + S2 − 2·(S1^{1/2} S2 S1^{1/2})^{1/2})`,
/// returned as a distance.
pub fn frechet_gaussian_analytic(mu1: &[f64], s1: &Matrix, mu2: &[f64], s2: &Matrix) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(GlpError::shape("frechet_gaussian_analytic", "mismatched sizes"));
    }
    let r1 = psd_sqrt(s1)?;
    let middle = r1.matmul(s2).matmul(&r1).symmetrize();
    let cross = psd_sqrt(&middle)?;
    let fd2 = mean_gap_sq(mu1, mu2) + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(fd2.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    /// `k × d`, orthonormal rows.
    pub components: Matrix,
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(GlpError::shape("pca_project", "dimension mismatch"));
        }
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        Ok(x.add_row(&neg).matmul_t(&self.components))
    }

    pub fn reconstruct(&self, scores: &Matrix) -> Matrix {
        scores.matmul(&self.components).add_row(&self.mean)
    }
}

/// Top-`k` principal components of the sample covariance. Each component's
/// largest-magnitude entry is made positive.
pub fn pca_top_k(x: &Matrix, k: usize) -> Result<PcaModel> {
    let d = x.cols();
    if k == 0 || k > d || x.rows() <= k {
        return Err(GlpError::InvalidArgument(format!(
            "pca needs 0 < k <= d and n > k (k={k}, d={d}, n={})",
            x.rows()
        )));
    }
    let mean = x.col_means();
    let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
    let xc = x.add_row(&neg);
    let cov = xc.t_matmul(&xc).scale(1.0 / (x.rows() - 1) as f64).symmetrize();
    let eig = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(k, d);
    for i in 0..k {
        let col = eig.vectors.col(i);
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, &v)| if v.abs() > best.1.abs() { (j, v) } else { best })
            .0;
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (j, v) in col.iter().enumerate() {
            components.set(i, j, sign * v);
        }
    }
    Ok(PcaModel {
        components,
        mean,
        variances: eig.values[..k].iter().map(|v| v.max(0.0)).collect(),
    })
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GlpError::shape("roc_auc", "scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GlpError::NonFiniteInput("roc_auc"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(GlpError::InvalidArgument("roc_auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives, computed in doubled units so it
    // stays an exact integer.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&o| labels[o]).count() as u128;
        rank_sum2 += mid2 * pos_in_tie;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// O(n²) pair-counting AUC; ties count one half.
pub fn roc_auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins2 = 0u128;
    let mut pairs = 0u128;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            wins2 += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    wins2 as f64 / (2 * pairs) as f64
}

/// Documents handed to the reconstructor per call.
const DELTA_CHUNK_DOCS: usize = 256;

/// `mean NLL(with reconstructed hook) − mean NLL(clean)` over every
/// non-special position (1..) of `docs`. Position 0 keeps its own hook.
pub fn delta_lm_loss(
    lm: &SourceLm,
    docs: &[Document],
    reconstructor: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
) -> Result<f64> {
    let mut clean_total = 0.0;
    let mut recon_total = 0.0;
    let mut count = 0usize;
    for chunk in docs.chunks(DELTA_CHUNK_DOCS) {
        let outs = chunk
            .iter()
            .map(|d| lm.source_forward(&d.tokens, None))
            .collect::<Result<Vec<_>>>()?;
        let parts: Vec<Matrix> = outs
            .iter()
            .map(|o| o.hook.slice_rows(1.min(o.hook.rows()), o.hook.rows()))
            .collect();
        let stacked = Matrix::vstack(&parts)?;
        let recon = reconstructor(&stacked)?;
        if recon.shape() != stacked.shape() {
            return Err(GlpError::shape("delta_lm_loss", "reconstructor changed the shape"));
        }
        let mut offset = 0;
        for (d, o) in chunk.iter().zip(&outs) {
            let n = d.tokens.len();
            if n < 2 {
                continue;
            }
            let inject = Matrix::vstack(&[o.hook.slice_rows(0, 1), recon.slice_rows(offset, offset + n - 1)])?;
            offset += n - 1;
            let r = lm.source_forward(&d.tokens, Some(&inject))?;
            clean_total += o.nll[1..].iter().sum::<f64>();
            recon_total += r.nll[1..].iter().sum::<f64>();
            count += n - 1;
        }
    }
    if count == 0 {
        return Err(GlpError::InvalidArgument("no non-special positions".into()));
    }
    Ok((recon_total - clean_total) / count as f64)
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() || resamples == 0 || !(0.0 < level && level < 1.0) {
        return Err(GlpError::InvalidArgument("bootstrap needs data, resamples, 0<level<1".into()));
    }
    let mut rng = Rng::new(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.below(n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = means[((tail * resamples as f64).floor() as usize).min(resamples - 1)];
    let hi = means[(((1.0 - tail) * resamples as f64).ceil() as usize).saturating_sub(1).min(resamples - 1)];
    Ok((lo, hi))
}

/// `metric,config_hash,value` rows with a header.
pub fn metric_csv(rows: &[(String, String, f64)]) -> String {
    let mut s = String::from("metric,config_hash,value\n");
    for (m, h, v) in rows {
        s.push_str(&format!("{m},{h},{v:?}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_set_with_itself_is_zero() {
        let x = Rng::new(1).normal_matrix(500, 6).add_row(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(frechet_distance(&x, &x).unwrap() <= 1e-8);
        // Rank-deficient covariance.
        let low = Rng::new(2).normal_matrix(50, 2).matmul_t(&Rng::new(3).normal_matrix(5, 2));
        assert!(frechet_distance(&low, &low).unwrap() <= 1e-8);
    }

    #[test]
    fn analytic_examples() {
        let z = [0.0, 0.0];
        let f = frechet_gaussian_analytic(&z, &Matrix::identity(2).scale(4.0), &z, &Matrix::identity(2)).unwrap();
        assert!((f - 2f64.sqrt()).abs() < 1e-12);
        let s = Matrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]]);
        assert!(frechet_gaussian_analytic(&z, &s, &z, &s).unwrap() < 1e-7);
        let g = frechet_gaussian_analytic(&[0.0, 0.0], &s, &[3.0, 4.0], &s).unwrap();
        assert!((g - 5.0).abs() < 1e-6);
    }

    #[test]
    fn both_forms_agree() {
        let mut rng = Rng::new(5);
        let x = rng.normal_matrix(300, 4).matmul(&rng.normal_matrix(4, 4));
        let y = rng.normal_matrix(200, 4).add_row(&[0.5, 0.0, -1.0, 0.2]);
        let (sx, sy) = (GaussianSummary::from_samples(&x).unwrap(), GaussianSummary::from_samples(&y).unwrap());
        let a = frechet_sq_from_summaries(&sx, &sy).unwrap().sqrt();
        let b = frechet_gaussian_analytic(&sx.mean, &sx.cov, &sy.mean, &sy.cov).unwrap();
        assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
        let ab = frechet_distance(&x, &y).unwrap();
        let ba = frechet_distance(&y, &x).unwrap();
        assert!((ab - ba).abs() <= 1e-10);
        assert!(frechet_distance(&x, &Matrix::zeros(3, 5)).is_err());
    }

    #[test]
    fn pca_line_and_full_rank() {
        let x = Matrix::from_rows(&(0..20).map(|i| [i as f64, 2.0 * i as f64]).collect::<Vec<_>>());
        let p = pca_top_k(&x, 2).unwrap();
        let c = p.components.row(0);
        assert!((c[1] / c[0] - 2.0).abs() < 1e-10 && c[0] > 0.0);
        assert!(p.variances[1].abs() < 1e-9);
        let y = Rng::new(1).normal_matrix(40, 5);
        let full = pca_top_k(&y, 5).unwrap();
        let back = full.reconstruct(&full.project(&y).unwrap());
        assert!(back.sub(&y).max_abs() < 1e-8);
        let g = full.components.matmul_t(&full.components);
        assert!(g.sub(&Matrix::identity(5)).max_abs() < 1e-8);
        assert!(full.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
        assert_eq!(roc_auc_pairs(&s, &l), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn delta_lm_loss_of_identity_is_zero() {
        use crate::source::{generate_corpus, GrammarSpec, SourceLmConfig};
        let spec = GrammarSpec::two_regime(32, 1).unwrap();
        let docs = generate_corpus(&spec, 5, 12, 2).unwrap();
        let lm = SourceLm::init(SourceLmConfig::default(), 3).unwrap();
        assert_eq!(delta_lm_loss(&lm, &docs, &mut |h| Ok(h.clone())).unwrap(), 0.0);
        let zeroed = delta_lm_loss(&lm, &docs, &mut |h| Ok(Matrix::zeros(h.rows(), h.cols()))).unwrap();
        assert!(zeroed.is_finite() && zeroed != 0.0);
        assert!(delta_lm_loss(&lm, &docs, &mut |h| Ok(h.slice_rows(0, 1))).is_err());
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let v: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let (lo, hi) = bootstrap_mean_ci(&v, 2000, 0.95, 1).unwrap();
        assert!(lo < m && m < hi && hi - lo < 1.0);
    }
}
