// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse-mode differentiation over matrix primitives.
//!
//! A [`Tape`] records each primitive as a node holding its forward value and
//! whatever it needs for the backward pass. Nodes only reference earlier
//! nodes, so the insertion order is a topological order and
//! [`Tape::backward`] walks it once in reverse.

use crate::error::{GlpError, Result};
use crate::ops::{self, silu, silu_grad};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row` broadcast over rows
    AddRow(Var, Var),
    /// `a - row` broadcast over rows
    SubRow(Var, Var),
    /// `1 + a`
    OnePlus(Var),
    Scale(Var, f64),
    Silu(Var),
    RmsNorm {
        x: Var,
        scale: Var,
        inv_rms: Vec<f64>,
    },
    TopK {
        x: Var,
        kept: Vec<Vec<usize>>,
    },
    /// Row `i` is the concatenation of `table[ids[i*k + j]]` for `j < k`.
    EmbedConcat {
        table: Var,
        ids: Vec<usize>,
        k: usize,
    },
    MseLoss(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation; single-owner, rebuilt for every step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hadamard(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a).add_row(self.value(row).as_slice());
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        let neg: Vec<f64> = self.value(row).as_slice().iter().map(|v| -v).collect();
        let v = self.value(a).add_row(&neg);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::SubRow(a, row), ng)
    }

    pub fn one_plus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 + x);
        let ng = self.ng(a);
        self.push(v, Op::OnePlus(a), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(silu);
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn rmsnorm(&mut self, x: Var, scale: Var) -> Var {
        let (v, inv_rms) = ops::rmsnorm(self.value(x), self.value(scale).as_slice());
        let ng = self.ng(x) || self.ng(scale);
        self.push(v, Op::RmsNorm { x, scale, inv_rms }, ng)
    }

    pub fn topk(&mut self, x: Var, k: usize) -> Var {
        let (v, kept) = ops::topk_rows(self.value(x), k);
        let ng = self.ng(x);
        self.push(v, Op::TopK { x, kept }, ng)
    }

    pub fn embed_concat(&mut self, table: Var, ids: Vec<usize>, k: usize) -> Var {
        let t = self.value(table);
        let e = t.cols();
        assert!(k > 0 && ids.len() % k == 0, "embed_concat: ids not a multiple of k");
        let n = ids.len() / k;
        let mut out = Matrix::zeros(n, k * e);
        for i in 0..n {
            let dst = out.row_mut(i);
            for j in 0..k {
                dst[j * e..(j + 1) * e].copy_from_slice(t.row(ids[i * k + j]));
            }
        }
        let ng = self.ng(table);
        self.push(out, Op::EmbedConcat { table, ids, k }, ng)
    }

    /// Mean of squared differences over all entries.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Var {
        let p = self.value(pred);
        let t = self.value(target);
        assert_eq!(p.shape(), t.shape(), "mse_loss: shapes");
        let n = p.len() as f64;
        let loss = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let ng = self.ng(pred) || self.ng(target);
        self.push(Matrix::filled(1, 1, loss), Op::MseLoss(pred, target), ng)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "cross_entropy: one target per row");
        let mut probs = Matrix::zeros(l.rows(), l.cols());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let lp = ops::log_softmax(l.row(r));
            total -= lp[t];
            for (p, v) in probs.row_mut(r).iter_mut().zip(&lp) {
                *p = v.exp();
            }
        }
        let loss = total / targets.len() as f64;
        let ng = self.ng(logits);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            ng,
        )
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, op: &Op, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, contrib: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                // out = a · bᵀ: da = g · b, db = gᵀ · a
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.hadamard(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.hadamard(self.value(*a)));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    acc(*row, Matrix::row_vector(&g.col_sums()));
                }
            }
            Op::SubRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    let s: Vec<f64> = g.col_sums().into_iter().map(|v| -v).collect();
                    acc(*row, Matrix::row_vector(&s));
                }
            }
            Op::OnePlus(a) => acc(*a, g.clone()),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Silu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gv, xv| gv * silu_grad(xv)));
            }
            Op::RmsNorm { x, scale, inv_rms } => {
                let xv = self.value(*x);
                let sv = self.value(*scale).as_slice();
                let (n, w) = xv.shape();
                if self.ng(*scale) {
                    let mut ds = vec![0.0; w];
                    for r in 0..n {
                        let ir = inv_rms[r];
                        for ((d, &gv), &xx) in ds.iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                            *d += gv * xx * ir;
                        }
                    }
                    acc(*scale, Matrix::row_vector(&ds));
                }
                if self.ng(*x) {
                    let mut dx = Matrix::zeros(n, w);
                    let wf = w as f64;
                    for r in 0..n {
                        let ir = inv_rms[r];
                        let xr = xv.row(r);
                        let gr = g.row(r);
                        // dxhat = g ⊙ scale; dx = ir · (dxhat − xhat · mean(dxhat ⊙ xhat))
                        let dot: f64 = gr
                            .iter()
                            .zip(sv)
                            .zip(xr)
                            .map(|((gv, s), xx)| gv * s * xx * ir)
                            .sum::<f64>()
                            / wf;
                        for (((d, &gv), &s), &xx) in dx.row_mut(r).iter_mut().zip(gr).zip(sv).zip(xr) {
                            *d = ir * (gv * s - xx * ir * dot);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::TopK { x, kept } => {
                let mut dx = Matrix::zeros(g.rows(), g.cols());
                for (r, cols) in kept.iter().enumerate() {
                    let gr = g.row(r);
                    let dr = dx.row_mut(r);
                    for &c in cols {
                        dr[c] = gr[c];
                    }
                }
                acc(*x, dx);
            }
            Op::EmbedConcat { table, ids, k } => {
                let t = self.value(*table);
                let e = t.cols();
                let mut dt = Matrix::zeros(t.rows(), e);
                for (i, chunk) in ids.chunks_exact(*k).enumerate() {
                    let gr = g.row(i);
                    for (j, &id) in chunk.iter().enumerate() {
                        for (d, &gv) in dt.row_mut(id).iter_mut().zip(&gr[j * e..(j + 1) * e]) {
                            *d += gv;
                        }
                    }
                }
                acc(*table, dt);
            }
            Op::MseLoss(pred, target) => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let scale = 2.0 * g.get(0, 0) / p.len() as f64;
                let diff = p.zip_map(t, |a, b| scale * (a - b));
                if self.ng(*target) {
                    acc(*target, diff.scale(-1.0));
                }
                acc(*pred, diff);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut d = probs.scale(scale);
                for (r, &t) in targets.iter().enumerate() {
                    let v = d.get(r, t);
                    d.set(r, t, v - scale);
                }
                acc(*logits, d);
            }
        }
    }
}

/// Which parameter coordinates [`grad_check`] perturbs.
#[derive(Clone, Debug)]
pub enum Probe {
    All,
    /// `count` coordinates drawn uniformly over all parameter entries.
    Random { count: usize, seed: u64 },
}

/// Compares analytic gradients with central finite differences.
///
/// `f` maps parameters to `(loss, gradients)`; gradients are only read at the
/// unperturbed point. Returns the maximum over probed coordinates of
/// `|analytic − numeric| / max(|analytic|, 1e-8)`.
///
/// The objective must be smooth at `params`: at a kink (e.g. `|x|` at 0)
/// the central difference and the analytic subgradient legitimately differ,
/// and the result is meaningless.
pub fn grad_check<F>(f: F, params: &[Matrix], perturbation: f64, probe: Probe) -> Result<f64>
where
    F: Fn(&[Matrix]) -> (f64, Vec<Matrix>),
{
    if !(perturbation > 0.0) {
        return Err(GlpError::InvalidArgument(format!(
            "perturbation must be positive, got {perturbation}"
        )));
    }
    let (loss, analytic) = f(params);
    if !loss.is_finite() {
        return Err(GlpError::NonFiniteObjective);
    }
    if analytic.len() != params.len() {
        return Err(GlpError::shape(
            "grad_check",
            format!("{} gradients for {} parameters", analytic.len(), params.len()),
        ));
    }
    let coords: Vec<(usize, usize)> = match probe {
        Probe::All => params
            .iter()
            .enumerate()
            .flat_map(|(p, m)| (0..m.len()).map(move |i| (p, i)))
            .collect(),
        Probe::Random { count, seed } => {
            let total: usize = params.iter().map(Matrix::len).sum();
            let mut rng = Rng::new(seed);
            (0..count)
                .map(|_| {
                    let mut flat = rng.below(total);
                    let mut p = 0;
                    while flat >= params[p].len() {
                        flat -= params[p].len();
                        p += 1;
                    }
                    (p, flat)
                })
                .collect()
        }
    };
    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, i) in coords {
        let orig = work[p].as_slice()[i];
        work[p].as_mut_slice()[i] = orig + perturbation;
        let (plus, _) = f(&work);
        work[p].as_mut_slice()[i] = orig - perturbation;
        let (minus, _) = f(&work);
        work[p].as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GlpError::NonFiniteObjective);
        }
        let numeric = (plus - minus) / (2.0 * perturbation);
        let a = analytic[p].as_slice()[i];
        let rel = (a - numeric).abs() / a.abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
