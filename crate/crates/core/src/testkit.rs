//! Random instance generators and brute-force reference implementations,
//! used by the test suites to cross-check the fast code paths.

use rand::Rng;

use crate::baseline::ScatterPoint;
use crate::geo::CellId;
use crate::ingest::{FlowRecord, FlowSlice, Summary};
use crate::markov::{Measure, StepOperator};
use crate::matrix::{CscMatrix, DenseMatrix};

pub fn cell_ids(n: usize) -> Vec<CellId> {
    (0..n).map(|k| CellId::new(format!("c{k:03}")).unwrap()).collect()
}

/// Column-stochastic operator with each entry present with probability
/// `density` (at least one per column) and random costs in `[0, 20)`.
pub fn random_operator<R: Rng>(rng: &mut R, t: usize, n: usize, density: f64) -> StepOperator {
    let mut cols = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(density)).collect();
        if rows.is_empty() {
            rows.push(rng.random_range(0..n));
        }
        let w: Vec<f64> = rows.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        cols.push(rows.into_iter().zip(w).map(|(r, x)| (r, x / s)).collect::<Vec<_>>());
    }
    let nnz: usize = cols.iter().map(Vec::len).sum();
    let dist = (0..nnz).map(|_| Some(rng.random_range(0.0..20.0))).collect();
    let dur = (0..nnz).map(|_| Some(rng.random_range(0.0..60.0))).collect();
    StepOperator::new(t, CscMatrix::from_columns(n, cols), dist, dur).unwrap()
}

pub fn random_ops<R: Rng>(rng: &mut R, n: usize, steps: usize, density: f64) -> Vec<StepOperator> {
    (0..steps).map(|t| random_operator(rng, t, n, density)).collect()
}

/// Random slice over `cells` with integer counts on a random edge set.
pub fn random_slice<R: Rng>(rng: &mut R, t: usize, cells: &[CellId], density: f64) -> FlowSlice {
    let mut records = Vec::new();
    for o in cells {
        for d in cells {
            if rng.random_bool(density) {
                let dist = rng.random_range(0.1..30.0);
                records.push(FlowRecord {
                    t,
                    origin: o.clone(),
                    dest: d.clone(),
                    count: f64::from(rng.random_range(1u32..50)),
                    dist: Summary::exact(dist),
                    dur: Summary::exact(dist * 2.0),
                });
            }
        }
    }
    FlowSlice { t, records, wall_time: None }
}

/// Every admissible path from `origin` to `dest` within `t_max` steps,
/// as `(arrival_step, nodes, probability, cost)`.
pub fn enumerate_paths(
    ops: &[StepOperator],
    origin: usize,
    dest: usize,
    t_max: usize,
    measure: Measure,
) -> Vec<(usize, Vec<usize>, f64, f64)> {
    let n = ops[0].n();
    let mut out = Vec::new();
    let mut stack = vec![(vec![origin], 1.0, 0.0)];
    while let Some((nodes, prob, cost)) = stack.pop() {
        let step = nodes.len();
        if step > t_max {
            continue;
        }
        let at = *nodes.last().unwrap();
        let op = &ops[step - 1];
        for k in 0..n {
            let m = op.prob(k, at);
            if m == 0.0 {
                continue;
            }
            let c = op.cost(measure, k, at).unwrap();
            let mut next = nodes.clone();
            next.push(k);
            if k == dest {
                out.push((step, next, prob * m, cost + c));
            } else if k != origin {
                stack.push((next, prob * m, cost + c));
            }
        }
    }
    out
}

/// `(π^t, x^t)` by summing over enumerated paths.
pub fn brute_first_passage(
    ops: &[StepOperator],
    origin: usize,
    dest: usize,
    t_max: usize,
    measure: Measure,
) -> (Vec<f64>, Vec<Option<f64>>) {
    let mut pi = vec![0.0; t_max];
    let mut wx = vec![0.0; t_max];
    for (t, _, p, c) in enumerate_paths(ops, origin, dest, t_max, measure) {
        pi[t - 1] += p;
        wx[t - 1] += p * c;
    }
    let x = pi.iter().zip(&wx).map(|(&p, &w)| (p > 0.0).then(|| w / p)).collect();
    (pi, x)
}

/// Dense product `M^T ⋯ M^1`, multiplied out naively.
pub fn dense_elapsed(ops: &[StepOperator]) -> DenseMatrix {
    let n = ops[0].n();
    ops.iter().fold(DenseMatrix::identity(n), |a, op| op.matrix().to_dense().mul(&a))
}

/// Expected net counts by enumerating every length-`T` cell sequence:
/// `n_j` walkers start at each `j`, and `s(i, j)` is the expected number
/// ending at `i` from `j` minus the number ending at `j` from `i`.
pub fn brute_net_flows(ops: &[StepOperator], n_by_origin: &[f64]) -> DenseMatrix {
    let n = ops[0].n();
    let steps = ops.len();
    let mut reach = DenseMatrix::zeros(n);
    for start in 0..n {
        let mut seq = vec![(start, 1.0)];
        for op in ops.iter().take(steps) {
            let mut next = Vec::new();
            for &(at, p) in &seq {
                for k in 0..n {
                    let m = op.prob(k, at);
                    if m > 0.0 {
                        next.push((k, p * m));
                    }
                }
            }
            seq = next;
        }
        for (end, p) in seq {
            reach.set(end, start, reach.get(end, start) + p);
        }
    }
    let mut s = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, reach.get(i, j) * n_by_origin[j] - reach.get(j, i) * n_by_origin[i]);
        }
    }
    s
}

/// Weighted least squares by solving the 2×2 normal equations with Cramer's rule.
pub fn normal_equation_fit(points: &[ScatterPoint]) -> (f64, f64) {
    let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        sw += p.weight;
        swx += p.weight * p.geo_km;
        swxx += p.weight * p.geo_km * p.geo_km;
        swy += p.weight * p.median_km;
        swxy += p.weight * p.geo_km * p.median_km;
    }
    // [sw swx; swx swxx] [b; a] = [swy; swxy]
    let det = sw * swxx - swx * swx;
    let intercept = (swy * swxx - swx * swxy) / det;
    let slope = (sw * swxy - swx * swy) / det;
    (slope, intercept)
}

/// Random column-stochastic dense matrix with entries bounded away from zero.
pub fn random_dense_stochastic<R: Rng>(rng: &mut R, n: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n);
    for j in 0..n {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (i, x) in w.iter().enumerate() {
            m.set(i, j, x / s);
        }
    }
    m
}
