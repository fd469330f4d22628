// SPDX-License-Identifier: MIT OR Apache-2.0

//! Symmetric eigendecomposition (cyclic Jacobi), PSD square roots, and a
//! one-sided Jacobi SVD.

use crate::error::{GlpError, Result};
use crate::tensor::Matrix;

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending;
/// column `i` of `vectors` pairs with `values[i]`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(GlpError::shape("symmetric", format!("{:?} is not square", s.shape())));
    }
    let tol = 1e-8 * s.max_abs().max(1.0);
    let asym = s.asymmetry();
    if asym > tol {
        return Err(GlpError::NotSymmetric(asym));
    }
    Ok(())
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `1e-12 · max(1, ‖S‖_F)`.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut a = s.symmetrize();
    let mut v = Matrix::identity(n);
    let tol = 1e-12 * s.frobenius_norm().max(1.0);
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = v.select_cols(&order);
    Ok(SymmetricEigen { values, vectors })
}

/// `V · diag(f(λ)) · Vᵀ`
pub fn spectral_map(e: &SymmetricEigen, f: impl Fn(f64) -> f64) -> Matrix {
    let scaled: Vec<f64> = e.values.iter().map(|&l| f(l)).collect();
    let vs = e.vectors.mul_row(&scaled);
    vs.matmul_t(&e.vectors).symmetrize()
}

/// Symmetric PSD square root; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    let e = symmetric_eigen(s)?;
    Ok(spectral_map(&e, |l| l.max(0.0).sqrt()))
}

/// Thin SVD `K = U · diag(σ) · Vᵀ` of a square matrix by one-sided Jacobi.
/// `U` is completed to a full orthonormal basis where `σ` vanishes.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

pub fn svd_square(k: &Matrix) -> Result<Svd> {
    if k.rows() != k.cols() {
        return Err(GlpError::shape("svd_square", format!("{:?}", k.shape())));
    }
    let n = k.rows();
    let mut g = k.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let gp = g.get(i, p);
                    let gq = g.get(i, q);
                    alpha += gp * gp;
                    beta += gq * gq;
                    gamma += gp * gq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let gp = g.get(i, p);
                    let gq = g.get(i, q);
                    g.set(i, p, c * gp - s * gq);
                    g.set(i, q, s * gp + c * gq);
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| g.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let floor = smax * 1e-13;
    let mut u = Matrix::zeros(n, n);
    let mut have: Vec<usize> = Vec::new();
    for j in 0..n {
        if sigma[j] > floor && sigma[j] > 0.0 {
            for i in 0..n {
                u.set(i, j, g.get(i, j) / sigma[j]);
            }
            have.push(j);
        }
    }
    // Gram–Schmidt completion against the standard basis.
    let mut basis = 0;
    for j in 0..n {
        if have.contains(&j) {
            continue;
        }
        loop {
            let mut cand: Vec<f64> = (0..n).map(|i| if i == basis { 1.0 } else { 0.0 }).collect();
            basis += 1;
            for _ in 0..2 {
                for &h in &have {
                    let dot: f64 = (0..n).map(|i| cand[i] * u.get(i, h)).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= dot * u.get(i, h);
                    }
                }
            }
            let norm = cand.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for (i, c) in cand.iter().enumerate() {
                    u.set(i, j, c / norm);
                }
                have.push(j);
                break;
            }
            if basis >= n {
                return Err(GlpError::InvalidArgument("svd completion failed".into()));
            }
        }
    }
    Ok(Svd { u, sigma, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_orthogonal(n: usize, rng: &mut Rng) -> Matrix {
        let a = rng.normal_matrix(n, n);
        let sym = a.add(&a.transpose());
        symmetric_eigen(&sym).unwrap().vectors
    }

    #[test]
    fn identity_and_diagonal_roots() {
        let i = Matrix::identity(3);
        assert!(psd_sqrt(&i).unwrap().sub(&i).max_abs() < 1e-15);
        let d = psd_sqrt(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert!(d.sub(&Matrix::diag(&[2.0, 3.0])).max_abs() < 1e-15);
    }

    #[test]
    fn rotated_spectrum_squares_back() {
        let mut rng = Rng::new(1);
        let q = random_orthogonal(3, &mut rng);
        let s = q.matmul(&Matrix::diag(&[1.0, 2.0, 3.0])).matmul_t(&q);
        let r = psd_sqrt(&s).unwrap();
        assert!(r.matmul(&r).sub(&s).frobenius_norm() <= 1e-8);
        assert!(r.asymmetry() < 1e-14);
    }

    #[test]
    fn eigen_sorted_and_orthonormal() {
        let mut rng = Rng::new(2);
        let a = rng.normal_matrix(6, 6);
        let s = a.matmul_t(&a);
        let e = symmetric_eigen(&s).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let vtv = e.vectors.t_matmul(&e.vectors);
        assert!(vtv.sub(&Matrix::identity(6)).max_abs() < 1e-12);
        let back = spectral_map(&e, |l| l);
        assert!(back.sub(&s).max_abs() < 1e-10);
    }

    #[test]
    fn negative_eigenvalues_are_clamped() {
        let s = Matrix::diag(&[4.0, -1e-3]);
        let r = psd_sqrt(&s).unwrap();
        assert!(r.sub(&Matrix::diag(&[2.0, 0.0])).max_abs() < 1e-15);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let s = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]);
        assert!(matches!(psd_sqrt(&s), Err(GlpError::NotSymmetric(_))));
    }

    #[test]
    fn svd_reconstructs_including_rank_deficient() {
        let mut rng = Rng::new(4);
        let a = rng.normal_matrix(5, 5);
        let mut low = rng.normal_matrix(5, 2).matmul_t(&rng.normal_matrix(5, 2));
        for m in [&a, &mut low.clone()] {
            let svd = svd_square(m).unwrap();
            let rec = svd.u.mul_row(&svd.sigma).matmul_t(&svd.v);
            assert!(rec.sub(m).max_abs() < 1e-10);
            assert!(svd.u.t_matmul(&svd.u).sub(&Matrix::identity(5)).max_abs() < 1e-10);
            assert!(svd.v.t_matmul(&svd.v).sub(&Matrix::identity(5)).max_abs() < 1e-10);
        }
        low = Matrix::zeros(3, 3);
        let svd = svd_square(&low).unwrap();
        assert!(svd.u.t_matmul(&svd.u).sub(&Matrix::identity(3)).max_abs() < 1e-12);
    }
}
