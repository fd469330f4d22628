// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::Arc;

use proptest::prelude::*;

use glp::flow::{euler_integrate, interpolate, linspace, VelocityField};
use glp::linalg::{psd_sqrt, symmetric_eigen};
use glp::metrics::{frechet_distance_sq, pca_top_k, roc_auc, roc_auc_pairs};
use glp::rng::Rng;
use glp::sae::{SaeConfig, SaeModel};
use glp::scaling::{compute_frontier, fit_power_law};
use glp::store::{stream_activations, Scaler};
use glp::{Matrix, Result};

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    Rng::new(seed).normal_matrix(rows, cols)
}

struct Constant(Vec<f64>);

impl VelocityField for Constant {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn velocity(&self, z: &Matrix, _t: f64) -> Result<Matrix> {
        Ok(Matrix::zeros(z.rows(), z.cols()).add_row(&self.0))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fd_is_symmetric_and_grows_with_mean_shift(seed in any::<u64>(), n in 20usize..200, d in 1usize..6, shift in 0.1f64..3.0) {
        let x = matrix(n, d, seed);
        let y = matrix(n + 7, d, seed ^ 1);
        let a = frechet_distance_sq(&x, &y).unwrap();
        let b = frechet_distance_sq(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
        let dir: Vec<f64> = Rng::new(seed ^ 2).normal_matrix(1, d).as_slice().to_vec();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let step: Vec<f64> = dir.iter().map(|v| v / norm * shift).collect();
        let mean_gap: Vec<f64> = {
            let (mx, my) = (x.col_means(), y.col_means());
            mx.iter().zip(&my).map(|(p, q)| q - p).collect()
        };
        // Shift y away from x along the gap direction so the distance must grow.
        let sign = if mean_gap.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
        let moved = y.add_row(&step.iter().map(|s| sign * s).collect::<Vec<_>>());
        prop_assert!(frechet_distance_sq(&x, &moved).unwrap() > a);
    }

    #[test]
    fn auc_equals_pair_oracle(seed in any::<u64>(), n in 2usize..=200, levels in 1usize..20) {
        let mut rng = Rng::new(seed);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc_pairs(&scores, &labels));
    }

    #[test]
    fn auc_ignores_increasing_maps(seed in any::<u64>(), n in 4usize..150) {
        let mut rng = Rng::new(seed);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + s.powi(3)).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn full_rank_pca_reconstructs(seed in any::<u64>(), n in 10usize..80, d in 1usize..8) {
        let x = matrix(n, d, seed);
        let pca = pca_top_k(&x, d).unwrap();
        let back = pca.reconstruct(&pca.project(&x).unwrap());
        prop_assert!(back.sub(&x).max_abs() <= 1e-8);
    }

    #[test]
    fn psd_sqrt_squares_back(seed in any::<u64>(), m in 1usize..10, rank in 0usize..10) {
        let r = rank.min(m);
        let a = matrix(m, r.max(1), seed).scale(if r == 0 { 0.0 } else { 1.0 });
        let s = a.matmul_t(&a).symmetrize();
        let root = psd_sqrt(&s).unwrap();
        let eig = symmetric_eigen(&root.symmetrize()).unwrap();
        prop_assert!(eig.values.iter().all(|&v| v >= -1e-10));
        prop_assert!(root.matmul(&root).sub(&s).frobenius_norm() <= 1e-6 * m as f64 * s.max_abs().max(1.0));
    }

    #[test]
    fn interpolation_endpoints_exact(seed in any::<u64>(), n in 1usize..20, d in 1usize..6) {
        let a = matrix(n, d, seed);
        let b = matrix(n, d, seed ^ 9);
        prop_assert_eq!(interpolate(&a, &b, &[0.0]).unwrap(), a.clone());
        prop_assert_eq!(interpolate(&a, &b, &[1.0]).unwrap(), b);
    }

    #[test]
    fn euler_exact_for_constant_fields(seed in any::<u64>(), steps in 1usize..200) {
        // Dyadic velocities and starts keep every partial sum exact.
        let mut rng = Rng::new(seed);
        let v: Vec<f64> = (0..3).map(|_| rng.below(64) as f64 / 8.0 - 4.0).collect();
        let z = Matrix::from_rows(&[[rng.below(16) as f64 / 4.0, 0.5, -1.0]]);
        let field = Constant(v);
        let one = euler_integrate(&field, z.clone(), &linspace(1.0, 0.0, 2)).unwrap();
        let many = euler_integrate(&field, z, &linspace(1.0, 0.0, steps + 1)).unwrap();
        prop_assert!(one.sub(&many).max_abs() <= 1e-12);
    }

    #[test]
    fn sae_topk_matches_sort(seed in any::<u64>(), d in 2usize..8, n in 1usize..10) {
        let cfg = SaeConfig::new(d);
        let sae = SaeModel::init(cfg, seed).unwrap();
        let x = matrix(n, d, seed ^ 3);
        let codes = sae.encode(&x).unwrap();
        let neg: Vec<f64> = sae.pre_bias.as_slice().iter().map(|v| -v).collect();
        let pre = x.add_row(&neg).matmul_t(&sae.encoder).add_row(sae.encoder_bias.as_slice());
        for r in 0..n {
            let mut order: Vec<usize> = (0..cfg.latents).collect();
            order.sort_by(|&a, &b| pre.get(r, b).total_cmp(&pre.get(r, a)).then(a.cmp(&b)));
            for (rank, &j) in order.iter().enumerate() {
                let expect = if rank < cfg.k { pre.get(r, j) } else { 0.0 };
                prop_assert_eq!(codes.get(r, j), expect);
            }
        }
    }

    #[test]
    fn frontier_is_non_increasing(seed in any::<u64>(), runs in 1usize..5, len in 1usize..30) {
        let mut rng = Rng::new(seed);
        let curves: Vec<Vec<(f64, f64)>> = (0..runs)
            .map(|_| (0..len).map(|_| (rng.uniform() * 1e6, rng.uniform() * 5.0)).collect())
            .collect();
        let f = compute_frontier(&curves).unwrap();
        prop_assert!(f.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 < w[0].1));
    }

    #[test]
    fn power_law_scale_equivariance(scale_exp in -3i32..=3) {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let c = 10f64.powf(14.0 + 5.0 * i as f64 / 19.0);
                (c, 0.52 + 435.1 * c.powf(-0.169))
            })
            .collect();
        let s = 10f64.powi(scale_exp);
        let f1 = fit_power_law(&pts).unwrap();
        let f2 = fit_power_law(&pts.iter().map(|&(c, l)| (c * s, l)).collect::<Vec<_>>()).unwrap();
        prop_assert!((f1.e - f2.e).abs() < 1e-6);
        prop_assert!((f1.alpha - f2.alpha).abs() < 1e-6);
        prop_assert!((f2.a / (f1.a * s.powf(f1.alpha)) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rng_streams_reproduce(seed in any::<u64>()) {
        let a = Rng::new(seed).normal_matrix(4, 4);
        let b = Rng::new(seed).normal_matrix(4, 4);
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stream_delivers_each_row_once(seed in any::<u64>(), total in 0usize..3000, chunk in 1usize..300, batch in 1usize..64, extra in 0usize..256) {
        let mut next = 0usize;
        let producer = move || {
            if next >= total {
                return None;
            }
            let n = chunk.min(total - next);
            let data: Vec<f64> = (next..next + n).map(|i| i as f64).collect();
            next += n;
            Some(Matrix::from_vec(n, 1, data))
        };
        let stream = stream_activations(producer, 1, batch + extra, batch, seed).unwrap();
        let mut seen: Vec<usize> = stream.flat_map(|b| b.unwrap().into_vec()).map(|v| v as usize).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..total).collect::<Vec<_>>());
    }

    #[test]
    fn standardized_fresh_sample_is_near_unit(seed in any::<u64>()) {
        let n = 20_000;
        let mut rng = Rng::new(seed);
        let x = rng.normal_matrix(n, 3).mul_row(&[2.0, 0.5, 7.0]).add_row(&[1.0, -3.0, 10.0]);
        let scaler = Scaler::fit(&x).unwrap();
        let fresh = Arc::new(rng.normal_matrix(n, 3).mul_row(&[2.0, 0.5, 7.0]).add_row(&[1.0, -3.0, 10.0]));
        let z = scaler.apply(&fresh).unwrap();
        let means = z.col_means();
        for (j, m) in means.iter().enumerate() {
            let var = z.col(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            // Both fits carry sampling error, hence the doubled bounds.
            prop_assert!(m.abs() <= 2.0 * 3.0 / (n as f64).sqrt(), "mean {m}");
            prop_assert!((var.sqrt() - 1.0).abs() <= 2.0 * 3.0 / (2.0 * n as f64).sqrt(), "std {}", var.sqrt());
        }
    }
}
