//! Experimental approximate stochastic p-th root of a transition matrix.
//!
//! Finds a column-stochastic `H` with `H^p ≈ M` by projected gradient
//! descent: a gradient step on the chosen discrepancy followed by Euclidean
//! projection of every column onto the probability simplex. Step lengths
//! use a Barzilai-Borwein guess with backtracking, and only iterates that
//! lower the objective are accepted.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::markov::MarkovError;
use crate::matrix::DenseMatrix;

const KL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootMetric {
    #[default]
    Frobenius,
    KullbackLeibler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    pub max_iter: usize,
    /// Stop once the residual is at or below this value.
    pub tol: f64,
    pub metric: RootMetric,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { max_iter: 10_000, tol: 1e-10, metric: RootMetric::Frobenius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootResult {
    pub h: DenseMatrix,
    /// `metric(M, H^p)` at the returned iterate: Frobenius norm of `M - H^p`,
    /// or `KL(M || H^p)`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual after each accepted step, starting with the initial guess.
    pub history: Vec<f64>,
    pub experimental: bool,
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx = 1}` (sort-based).
pub fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    // Remove the last ulp-level drift so the column sums to one.
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
}

fn project_columns(h: &mut DenseMatrix) {
    for j in 0..h.n() {
        project_simplex(h.column_mut(j));
    }
}

struct Objective<'a> {
    target: &'a DenseMatrix,
    p: u32,
    metric: RootMetric,
}

impl Objective<'_> {
    fn powers(&self, h: &DenseMatrix) -> Vec<DenseMatrix> {
        let mut pw = vec![DenseMatrix::identity(h.n())];
        for k in 0..self.p as usize {
            pw.push(h.mul(&pw[k]));
        }
        pw
    }

    /// Smooth objective minimised by the descent.
    fn value(&self, b: &DenseMatrix) -> f64 {
        let (m, b) = (self.target.as_col_major(), b.as_col_major());
        match self.metric {
            RootMetric::Frobenius => 0.5 * m.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>(),
            RootMetric::KullbackLeibler => m
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let y = y.max(KL_FLOOR);
                    let kl = if x > 0.0 { x * (x / y).ln() } else { 0.0 };
                    kl - x + y
                })
                .sum(),
        }
    }

    fn residual(&self, b: &DenseMatrix) -> f64 {
        match self.metric {
            RootMetric::Frobenius => self.target.sub(b).frobenius_norm(),
            RootMetric::KullbackLeibler => self
                .target
                .as_col_major()
                .iter()
                .zip(b.as_col_major())
                .filter(|(x, _)| **x > 0.0)
                .map(|(&x, &y)| x * (x / y.max(KL_FLOOR)).ln())
                .sum::<f64>()
                .max(0.0),
        }
    }

    /// Gradient with respect to `H`: Σ_k (H^k)ᵀ G (H^{p-1-k})ᵀ, with G the
    /// derivative of the objective with respect to `B = H^p`.
    fn gradient(&self, powers: &[DenseMatrix]) -> DenseMatrix {
        let p = self.p as usize;
        let b = &powers[p];
        let n = b.n();
        let g = match self.metric {
            RootMetric::Frobenius => b.sub(self.target),
            RootMetric::KullbackLeibler => DenseMatrix::from_col_major(
                n,
                self.target
                    .as_col_major()
                    .iter()
                    .zip(b.as_col_major())
                    .map(|(&x, &y)| 1.0 - x / y.max(KL_FLOOR))
                    .collect(),
            ),
        };
        let mut grad = DenseMatrix::zeros(n);
        for k in 0..p {
            let term = powers[k].transpose().mul(&g).mul(&powers[p - 1 - k].transpose());
            grad = DenseMatrix::from_col_major(
                n,
                grad.as_col_major().iter().zip(term.as_col_major()).map(|(a, b)| a + b).collect(),
            );
        }
        grad
    }
}

fn axpy(h: &DenseMatrix, alpha: f64, d: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_col_major(
        h.n(),
        h.as_col_major().iter().zip(d.as_col_major()).map(|(x, g)| x - alpha * g).collect(),
    )
}

fn dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_col_major().iter().zip(b.as_col_major()).map(|(x, y)| x * y).sum()
}

#[derive(Clone)]
struct Descent {
    h: DenseMatrix,
    residual: f64,
    iterations: usize,
    history: Vec<f64>,
    stationary: bool,
}

/// Monotone projected gradient descent from a column-stochastic `h`.
fn descend(obj: &Objective, mut h: DenseMatrix, max_iter: usize, tol: f64) -> Descent {
    let p = obj.p as usize;
    let mut powers = obj.powers(&h);
    let mut f = obj.value(&powers[p]);
    let mut residual = obj.residual(&powers[p]);
    let mut history = vec![residual];
    let mut grad = obj.gradient(&powers);
    // First step moves no entry by more than 0.1.
    let gmax = grad.as_col_major().iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let first_step = if gmax > 0.0 { 0.1 / gmax } else { 1.0 };
    let mut step = first_step;
    let mut prev: Option<(DenseMatrix, DenseMatrix)> = None;
    let mut iterations = 0;
    let mut stationary = false;

    while residual > tol && iterations < max_iter {
        iterations += 1;
        if let Some((h_prev, g_prev)) = &prev {
            let s = h.sub(h_prev);
            let y = grad.sub(g_prev);
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = (dot(&s, &s) / sy).clamp(1e-12, 1e12);
            }
        }
        // Backtrack from the BB guess; if that fails, once more from the first step.
        let mut accepted = None;
        for start in [step, first_step] {
            let mut trial_step = start;
            for _ in 0..60 {
                let mut cand = axpy(&h, trial_step, &grad);
                project_columns(&mut cand);
                let cand_powers = obj.powers(&cand);
                let f_cand = obj.value(&cand_powers[p]);
                if f_cand < f {
                    accepted = Some((cand, cand_powers, f_cand, trial_step));
                    break;
                }
                trial_step *= 0.5;
            }
            if accepted.is_some() || start == first_step {
                break;
            }
        }
        let Some((cand, cand_powers, f_cand, trial_step)) = accepted else {
            stationary = true;
            break;
        };
        step = trial_step;
        let g_new = obj.gradient(&cand_powers);
        prev = Some((std::mem::replace(&mut h, cand), std::mem::replace(&mut grad, g_new)));
        powers = cand_powers;
        f = f_cand;
        residual = obj.residual(&powers[p]);
        history.push(residual);
    }
    Descent { h, residual, iterations, history, stationary }
}

/// Matrices up to this size get a Levenberg-Marquardt polish after the
/// first-order probe (the normal equations have `n²` unknowns).
const LM_MAX_N: usize = 12;
const LM_ITER: usize = 80;

/// Damped Gauss-Newton on `H^p - M` (Frobenius metric). In each column the
/// largest entry absorbs the others so column sums stay fixed, and zero
/// entries the gradient pushes outward are frozen. Steps are projected back
/// onto the simplex and only taken when they lower the objective.
fn polish(obj: &Objective, start: Descent, max_iter: usize, tol: f64, constrained: bool) -> Descent {
    let p = obj.p as usize;
    let n = start.h.n();
    let nv = n * n;
    let Descent { mut h, mut residual, mut history, .. } = start;
    let mut powers = obj.powers(&h);
    let mut f = obj.value(&powers[p]);
    let mut mu = 1e-3;
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        iterations += 1;
        // J[(r, c), (a, b)] = Σ_k (H^k)[r, a] (H^{p-1-k})[b, c], column-major indices.
        let mut jac = vec![vec![0.0; nv]; nv];
        for k in 0..p {
            let (left, right) = (&powers[k], &powers[p - 1 - k]);
            for c in 0..n {
                for r in 0..n {
                    let row = &mut jac[c * n + r];
                    for b in 0..n {
                        let rb = right.get(b, c);
                        if rb == 0.0 {
                            continue;
                        }
                        for a in 0..n {
                            row[b * n + a] += left.get(r, a) * rb;
                        }
                    }
                }
            }
        }
        let res: Vec<f64> = powers[p].as_col_major().iter().zip(obj.target.as_col_major()).map(|(x, y)| x - y).collect();
        // Free variable (a, b) moves H[a, b] by +δ and the column pivot by -δ.
        let grad = gradient_from(&jac, &res);
        let mut free = Vec::new();
        let mut pivots = Vec::with_capacity(n);
        for b in 0..n {
            let col = h.column(b);
            let piv = (0..n).max_by(|&x, &y| col[x].total_cmp(&col[y])).unwrap_or(0);
            pivots.push(piv);
            for a in 0..n {
                let g = grad[b * n + a] - grad[b * n + piv];
                if a != piv && !(constrained && col[a] <= 0.0 && g > 0.0) {
                    free.push((a, b));
                }
            }
        }
        if free.is_empty() {
            break;
        }
        let reduced: Vec<Vec<f64>> = jac
            .iter()
            .map(|row| free.iter().map(|&(a, b)| row[b * n + a] - row[b * n + pivots[b]]).collect())
            .collect();
        let nf = free.len();
        let j = DMatrix::from_fn(nv, nf, |r, u| reduced[r][u]);
        let jtj = j.tr_mul(&j);
        let rhs = -j.tr_mul(&DVector::from_column_slice(&res));
        let scale = jtj.diagonal().max().max(1e-300);
        let mut improved = false;
        for _ in 0..30 {
            let a = &jtj + DMatrix::identity(nf, nf) * (mu * scale);
            let Some(delta) = a.lu().solve(&rhs) else {
                mu *= 10.0;
                continue;
            };
            let mut cand = h.clone();
            for (&(a, b), d) in free.iter().zip(delta.iter()) {
                cand.set(a, b, cand.get(a, b) + d);
                cand.set(pivots[b], b, cand.get(pivots[b], b) - d);
            }
            if constrained {
                project_columns(&mut cand);
            }
            let cand_powers = obj.powers(&cand);
            let f_cand = obj.value(&cand_powers[p]);
            if f_cand < f {
                h = cand;
                powers = cand_powers;
                f = f_cand;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
        residual = obj.residual(&powers[p]);
        history.push(residual);
    }
    Descent { h, residual, iterations: start.iterations + iterations, history, stationary: false }
}

/// Polishes `d` on the simplex, and separately solves `H^p = M` without the
/// sign constraint; that exact root is kept if it is (nearly) nonnegative and
/// beats the constrained result after projection.
fn refine(obj: &Objective, d: Descent, max_iter: usize, tol: f64) -> Descent {
    let free_budget = max_iter / 2;
    let loose = polish(obj, Descent { history: Vec::new(), ..d.clone() }, free_budget, tol, false);
    let spent = loose.iterations - d.iterations;
    let mut h = loose.h;
    project_columns(&mut h);
    let r = obj.residual(&obj.powers(&h)[obj.p as usize]);
    let mut d = Descent { iterations: d.iterations + spent, ..d };
    if r < d.residual {
        d.history.push(r);
        d = Descent { h, residual: r, ..d };
    }
    polish(obj, d, max_iter - spent, tol, true)
}

/// `Jᵀ r`.
fn gradient_from(jac: &[Vec<f64>], res: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; jac.first().map_or(0, Vec::len)];
    for (row, &e) in jac.iter().zip(res) {
        for (gu, &j) in g.iter_mut().zip(row) {
            *gu += j * e;
        }
    }
    g
}

fn blend(a: &DenseMatrix, b: &DenseMatrix, w: f64) -> DenseMatrix {
    DenseMatrix::from_col_major(
        a.n(),
        a.as_col_major().iter().zip(b.as_col_major()).map(|(x, y)| (1.0 - w) * x + w * y).collect(),
    )
}

/// Random starts needed because an odd matrix root, or any root with a
/// negative eigenvalue, cannot be reached from starts whose corresponding
/// eigenvalue is positive: the objective is stationary where the
/// eigenvalue crosses zero.
const RANDOM_STARTS: usize = 40;
const PROBE_ITER: usize = 50;
const START_SEED: u64 = 0x5eed_0001;

/// Starting points: near-identity blend, `M` itself, the rank-one limit built
/// from the stationary distribution of `M`, then seeded random matrices.
fn starts(m: &DenseMatrix, p: u32) -> Vec<DenseMatrix> {
    let n = m.n();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..1000 {
        pi = m.mul_vec(&pi);
    }
    let s: f64 = pi.iter().sum();
    let rank_one = DenseMatrix::from_col_major(n, (0..n).flat_map(|_| pi.iter().map(|x| x / s)).collect());
    let mut out = vec![blend(&DenseMatrix::identity(n), m, 1.0 / f64::from(p)), m.clone(), blend(&rank_one, m, 0.5)];
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    for _ in 0..RANDOM_STARTS {
        let mut h = DenseMatrix::zeros(n);
        for j in 0..n {
            let col = h.column_mut(j);
            col.iter_mut().for_each(|x| *x = rng.random::<f64>());
            let s: f64 = col.iter().sum();
            col.iter_mut().for_each(|x| *x /= s);
        }
        out.push(h);
    }
    out
}

/// Approximate stochastic `p`-th root of column-stochastic `m`.
///
/// Every start gets a short first-order probe, polished by damped
/// Gauss-Newton on small Frobenius problems; the best result then continues
/// with the rest of the `max_iter` budget.
pub fn approximate_stochastic_root(m: &DenseMatrix, p: u32, opts: &RootOptions) -> Result<RootResult, MarkovError> {
    if p < 2 {
        return Err(MarkovError::InvalidRootOrder(p));
    }
    if !m.is_column_stochastic(1e-9) {
        return Err(MarkovError::NotStochastic(m.max_col_sum_error()));
    }
    let obj = Objective { target: m, p, metric: opts.metric };
    let mut iterations = 0;
    let mut best: Option<Descent> = None;
    for mut h0 in starts(m, p) {
        project_columns(&mut h0);
        let budget = PROBE_ITER.min(opts.max_iter - iterations);
        if budget == 0 {
            break;
        }
        let mut d = descend(&obj, h0, budget, opts.tol);

        if opts.metric == RootMetric::Frobenius && d.residual > opts.tol && m.n() <= LM_MAX_N {
            let extra = LM_ITER.min(opts.max_iter - iterations - d.iterations);
            d = refine(&obj, d, extra, opts.tol);
        }
        iterations += d.iterations;

        if best.as_ref().is_none_or(|b| d.residual < b.residual) {
            best = Some(d);
        }
        if best.as_ref().is_some_and(|b| b.residual <= opts.tol) {
            break;
        }
    }
    let mut best = best.ok_or(MarkovError::InvalidRootOrder(p))?;
    if best.residual > opts.tol && !best.stationary && iterations < opts.max_iter {
        let more = descend(&obj, best.h.clone(), opts.max_iter - iterations, opts.tol);
        iterations += more.iterations;
        let mut history = best.history;
        history.extend(more.history.into_iter().skip(1));
        best = Descent { history, ..more };
    }
    let converged = best.residual <= opts.tol || best.stationary;
    if !converged {
        log::warn!("stochastic root did not converge in {iterations} iterations (residual {:e})", best.residual);
    }
    Ok(RootResult { h: best.h, residual: best.residual, iterations, converged, history: best.history, experimental: true })
}
