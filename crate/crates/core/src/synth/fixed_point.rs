//! Midnight distribution: fixed point of the daily cyclic product.

use serde::Serialize;

use super::SynthError;
use crate::markov::StepOperator;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Require some power `≤ N` of the daily product to be entrywise positive.
    pub check_primitivity: bool,
    /// Stop when the L1 change between iterates drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { check_primitivity: true, tol: 1e-12, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub v: Vec<f64>,
    /// `‖P v - v‖₁` for the daily product `P`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `M^{T} ⋯ M^{1}` for the operators in order, as a dense matrix.
pub fn cyclic_product(ops: &[StepOperator]) -> DenseMatrix {
    let n = ops.first().map_or(0, StepOperator::n);
    let mut p = DenseMatrix::identity(n);
    for op in ops {
        let m = op.matrix();
        let mut next = DenseMatrix::zeros(n);
        for c in 0..n {
            let col = m.mul_vec(p.column(c));
            next.column_mut(c).copy_from_slice(&col);
        }
        p = next;
    }
    p
}

/// Smallest `k ≤ n` with the support of `p^k` full, if any.
fn primitive_power(p: &DenseMatrix) -> Option<usize> {
    let n = p.n();
    let base: Vec<bool> = p.as_col_major().iter().map(|&x| x > 0.0).collect();
    let mut cur = base.clone();
    for k in 1..=n.max(1) {
        if cur.iter().all(|&b| b) {
            return Some(k);
        }
        // cur ← base · cur on supports, column-major.
        let mut next = vec![false; n * n];
        for c in 0..n {
            for r in 0..n {
                if cur[c * n + r] {
                    for i in 0..n {
                        next[c * n + i] |= base[r * n + i];
                    }
                }
            }
        }
        cur = next;
    }
    None
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Power iteration on the daily product from the uniform vector.
pub fn periodic_fixed_point(ops: &[StepOperator], opts: &FixedPointOptions) -> Result<FixedPoint, SynthError> {
    let p = cyclic_product(ops);
    let n = p.n();
    if n == 0 {
        return Err(SynthError::Empty);
    }
    if opts.check_primitivity && primitive_power(&p).is_none() {
        return Err(SynthError::NotPrimitive(n));
    }
    let mut v = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let w = normalized(p.mul_vec(&v));
        let delta = l1(&w, &v);
        v = w;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let residual = l1(&p.mul_vec(&v), &v);
    if !converged {
        log::warn!("fixed point iteration stopped after {iterations} steps (residual {residual:e})");
    }
    Ok(FixedPoint { v, residual, iterations, converged })
}
