//! Per-step column-stochastic operators and their cumulative products.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::CellId;
use crate::ingest::{ComponentSpec, FlowSlice};
use crate::matrix::{CscMatrix, DenseMatrix};

/// Column-sum drift above which an elapsed column is renormalized.
pub const ELAPSED_DRIFT_TOL: f64 = 1e-10;
/// Elapsed products switch to dense storage above this fill fraction.
pub const DENSE_FILL_FRACTION: f64 = 0.25;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("cell `{0}` is not part of the component")]
    UnknownCell(CellId),
    #[error("cell `{cell}` has no outflow at step {t}")]
    ZeroOutflow { cell: CellId, t: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operators are not consecutive: step {prev} followed by {next}")]
    NonConsecutive { prev: usize, next: usize },
    #[error("matrix is not column-stochastic (max column-sum error {0:e})")]
    NotStochastic(f64),
    #[error("root order must be at least 2, got {0}")]
    InvalidRootOrder(u32),
    #[error("cost arrays do not align with the operator sparsity")]
    MisalignedCosts,
}

/// Handling of origins with no recorded outflow in a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Full self-loop with zero distance.
    #[default]
    SelfLoop,
    /// Uniform over the component; off-diagonal costs left missing.
    Uniform,
    Fail,
}

/// Which per-edge cost the path recursions accumulate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Trip distance, km.
    #[default]
    Distance,
    /// Trip duration, minutes.
    Duration,
}

/// One-step transition operator `M^t` over a component, with per-edge costs
/// aligned to its sparsity pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOperator {
    t: usize,
    m: CscMatrix,
    dist: Vec<Option<f64>>,
    dur: Vec<Option<f64>>,
}

impl StepOperator {
    pub fn new(t: usize, m: CscMatrix, dist: Vec<Option<f64>>, dur: Vec<Option<f64>>) -> Result<Self, MarkovError> {
        if dist.len() != m.nnz() || dur.len() != m.nnz() {
            return Err(MarkovError::MisalignedCosts);
        }
        Ok(StepOperator { t, m, dist, dur })
    }

    pub fn identity(t: usize, n: usize) -> Self {
        StepOperator { t, m: CscMatrix::identity(n), dist: vec![Some(0.0); n], dur: vec![Some(0.0); n] }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.m.n()
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.m
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }

    pub fn costs(&self, measure: Measure) -> &[Option<f64>] {
        match measure {
            Measure::Distance => &self.dist,
            Measure::Duration => &self.dur,
        }
    }

    pub fn cost(&self, measure: Measure, i: usize, j: usize) -> Option<f64> {
        self.m.position(i, j).and_then(|p| self.costs(measure)[p])
    }

    /// Structural entries `(i, j)` whose cost is missing.
    pub fn missing_costs(&self, measure: Measure) -> Vec<(usize, usize)> {
        let costs = self.costs(measure);
        (0..self.n())
            .flat_map(|j| self.m.col_range(j).map(move |p| (p, j)))
            .filter(|&(p, _)| costs[p].is_none())
            .map(|(p, j)| (self.m.row_idx()[p], j))
            .collect()
    }

    pub fn fill_missing_costs(&mut self, measure: Measure, mut value: impl FnMut(usize, usize) -> f64) {
        let n = self.n();
        let rows = self.m.row_idx().to_vec();
        let ranges: Vec<_> = (0..n).map(|j| self.m.col_range(j)).collect();
        let costs = match measure {
            Measure::Distance => &mut self.dist,
            Measure::Duration => &mut self.dur,
        };
        for (j, range) in ranges.into_iter().enumerate() {
            for p in range {
                if costs[p].is_none() {
                    costs[p] = Some(value(rows[p], j));
                }
            }
        }
    }
}

/// Builds `M^t` by column-normalising the slice's counts.
pub fn build_step_operator(
    slice: &FlowSlice,
    component: &ComponentSpec,
    policy: GapPolicy,
) -> Result<StepOperator, MarkovError> {
    let n = component.len();
    let mut cols: Vec<Vec<(usize, f64, Option<f64>, Option<f64>)>> = vec![Vec::new(); n];
    for r in &slice.records {
        let j = component.index_of(&r.origin).ok_or_else(|| MarkovError::UnknownCell(r.origin.clone()))?;
        let i = component.index_of(&r.dest).ok_or_else(|| MarkovError::UnknownCell(r.dest.clone()))?;
        cols[j].push((i, r.count, r.dist.typical(), r.dur.typical()));
    }
    let mut columns = Vec::with_capacity(n);
    let mut dist_cols = Vec::with_capacity(n);
    let mut dur_cols = Vec::with_capacity(n);
    for (j, mut col) in cols.into_iter().enumerate() {
        col.sort_by_key(|e| e.0);
        let total: f64 = col.iter().map(|e| e.1).sum();
        if total > 0.0 {
            columns.push(col.iter().map(|e| (e.0, e.1 / total)).collect::<Vec<_>>());
            dist_cols.push(col.iter().map(|e| e.2).collect::<Vec<_>>());
            dur_cols.push(col.iter().map(|e| e.3).collect::<Vec<_>>());
            continue;
        }
        match policy {
            GapPolicy::SelfLoop => {
                columns.push(vec![(j, 1.0)]);
                dist_cols.push(vec![Some(0.0)]);
                dur_cols.push(vec![Some(0.0)]);
            }
            GapPolicy::Uniform => {
                let w = 1.0 / n as f64;
                columns.push((0..n).map(|i| (i, w)).collect());
                let diag = |i: usize| if i == j { Some(0.0) } else { None };
                dist_cols.push((0..n).map(diag).collect());
                dur_cols.push((0..n).map(diag).collect());
            }
            GapPolicy::Fail => {
                return Err(MarkovError::ZeroOutflow { cell: component.cells[j].clone(), t: slice.t });
            }
        }
    }
    let m = CscMatrix::from_columns(n, columns);
    StepOperator::new(slice.t, m, dist_cols.concat(), dur_cols.concat())
}

/// Step operators for consecutive slices.
pub fn build_step_operators(
    slices: &[FlowSlice],
    component: &ComponentSpec,
    policy: GapPolicy,
) -> Result<Vec<StepOperator>, MarkovError> {
    slices.iter().map(|s| build_step_operator(s, component, policy)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElapsedMatrix {
    Sparse(CscMatrix),
    Dense(DenseMatrix),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElapsedDiagnostics {
    /// Largest column-sum drift observed before renormalisation.
    pub max_drift: f64,
    pub renormalized_columns: usize,
}

/// Cumulative product `A^t = M^t ⋯ M^1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElapsedOperator {
    n: usize,
    /// Steps `[first, last]` folded in so far; `None` for `A^0`.
    t_span: Option<(usize, usize)>,
    matrix: ElapsedMatrix,
    diagnostics: ElapsedDiagnostics,
}

impl ElapsedOperator {
    pub fn identity(n: usize) -> Self {
        ElapsedOperator {
            n,
            t_span: None,
            matrix: ElapsedMatrix::Sparse(CscMatrix::identity(n)),
            diagnostics: ElapsedDiagnostics::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_span(&self) -> Option<(usize, usize)> {
        self.t_span
    }

    pub fn steps(&self) -> usize {
        self.t_span.map_or(0, |(a, b)| b - a + 1)
    }

    pub fn diagnostics(&self) -> ElapsedDiagnostics {
        self.diagnostics
    }

    pub fn matrix(&self) -> &ElapsedMatrix {
        &self.matrix
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.matrix, ElapsedMatrix::Dense(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.matrix {
            ElapsedMatrix::Sparse(m) => m.get(i, j),
            ElapsedMatrix::Dense(m) => m.get(i, j),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match &self.matrix {
            ElapsedMatrix::Sparse(m) => m.to_dense(),
            ElapsedMatrix::Dense(m) => m.clone(),
        }
    }

    pub fn max_col_sum_error(&self) -> f64 {
        match &self.matrix {
            ElapsedMatrix::Sparse(m) => m.max_col_sum_error(),
            ElapsedMatrix::Dense(m) => m.max_col_sum_error(),
        }
    }

    /// Left-multiplies by the next step operator: `A ← M A`.
    pub fn apply(&mut self, op: &StepOperator) -> Result<(), MarkovError> {
        if op.n() != self.n {
            return Err(MarkovError::DimensionMismatch { expected: self.n, got: op.n() });
        }
        if let Some((_, last)) = self.t_span {
            if op.t() != last + 1 {
                return Err(MarkovError::NonConsecutive { prev: last, next: op.t() });
            }
        }
        let n = self.n;
        let m = op.matrix();
        // Each output column c = Σ_r a_rc · M[:, r], accumulated in ascending r
        // so sparse and dense storage give bit-identical results.
        let column = |entries: &mut dyn Iterator<Item = (usize, f64)>| -> (Vec<f64>, Vec<usize>, f64) {
            let mut acc = vec![0.0; n];
            let mut touched = vec![false; n];
            for (r, a) in entries {
                if a == 0.0 {
                    continue;
                }
                for (i, v) in m.column(r) {
                    acc[i] += v * a;
                    touched[i] = true;
                }
            }
            let sum: f64 = acc.iter().sum();
            let rows = (0..n).filter(|&i| touched[i]).collect();
            (acc, rows, sum)
        };
        let compute = |c: usize| -> (Vec<f64>, Vec<usize>, f64) {
            match &self.matrix {
                ElapsedMatrix::Sparse(a) => column(&mut a.column(c)),
                ElapsedMatrix::Dense(a) => column(&mut a.column(c).iter().copied().enumerate()),
            }
        };
        let cols: Vec<(Vec<f64>, Vec<usize>, f64)> = if n >= 64 {
            (0..n).into_par_iter().map(compute).collect()
        } else {
            (0..n).map(compute).collect()
        };

        let mut diag = self.diagnostics;
        let mut finished = Vec::with_capacity(n);
        for (mut acc, rows, sum) in cols {
            let drift = (sum - 1.0).abs();
            diag.max_drift = diag.max_drift.max(drift);
            if drift > ELAPSED_DRIFT_TOL {
                diag.renormalized_columns += 1;
                for &i in &rows {
                    acc[i] /= sum;
                }
            }
            finished.push((acc, rows));
        }

        let nnz: usize = finished.iter().map(|c| c.1.len()).sum();
        let go_dense = self.is_dense() || nnz as f64 > DENSE_FILL_FRACTION * (n * n) as f64;
        self.matrix = if go_dense {
            let data = finished.into_iter().flat_map(|c| c.0).collect();
            ElapsedMatrix::Dense(DenseMatrix::from_col_major(n, data))
        } else {
            let columns = finished
                .into_iter()
                .map(|(acc, rows)| rows.into_iter().map(|i| (i, acc[i])).collect())
                .collect();
            ElapsedMatrix::Sparse(CscMatrix::from_columns(n, columns))
        };
        self.diagnostics = diag;
        self.t_span = Some(match self.t_span {
            None => (op.t(), op.t()),
            Some((first, _)) => (first, op.t()),
        });
        Ok(())
    }
}

/// Folds consecutive step operators into `A^t`; an empty list gives the identity.
pub fn elapse(n: usize, ops: &[StepOperator]) -> Result<ElapsedOperator, MarkovError> {
    let mut a = ElapsedOperator::identity(n);
    for op in ops {
        a.apply(op)?;
    }
    Ok(a)
}
