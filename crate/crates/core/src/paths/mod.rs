//! First-passage propagation over a sequence of step operators.
//!
//! For an ordered pair (origin `j`, destination `i`) the engine follows the
//! probability mass of paths that leave `j` and have not yet touched `i` or
//! `j` again. At each step the live vector is pushed through `M^t`; whatever
//! lands on `i` is the first-passage probability `π^t`, whatever lands back on
//! `j` is discarded as a return, and the rest stays live. Alongside the mass
//! the engine carries the probability-weighted mean accumulated cost of the
//! paths reaching every node, so the cost of first-passage paths `x^t` falls
//! out at `i`.
//!
//! With `i == j` only `j` is absorbing and the recursion yields
//! return-to-origin statistics.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::baseline::BaselineError;
use crate::geo::CellId;
use crate::ingest::FlowSlice;
use crate::markov::{Measure, StepOperator};

mod decompose;
mod rto;
mod sweep;

pub use decompose::{decompose_paths, paths_document, write_paths_json, DecomposeOptions, PathDecomposition, PathRecord};
pub use rto::{city_rto, rto, CityRto, RtoVariant};
pub use sweep::{evaluate_window, time_sweep, write_sweep_csv, SweepRow, SweepSpec};

#[derive(Debug, Error)]
pub enum PathError {
    #[error("cell index {0} is outside the component")]
    CellOutOfRange(usize),
    #[error("invalid window [{t1}, {t2}] for {available} available steps")]
    InvalidWindow { t1: usize, t2: usize, available: usize },
    #[error("missing cost for edge {col} -> {row} at step {t}")]
    MissingCost { t: usize, row: usize, col: usize },
    #[error("operators disagree on component size")]
    DimensionMismatch,
    #[error("zero total weight for city average")]
    ZeroWeight,
    #[error("no origin has a defined value")]
    NoDefinedOrigins,
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Full probability and mean-cost vectors after one step (before masking).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageStep {
    pub p: Vec<f64>,
    /// `None` where `p` is zero.
    pub y: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageTrace {
    pub origin: usize,
    pub dest: usize,
    pub measure: Measure,
    /// Per-step vectors; empty unless requested.
    pub steps: Vec<PassageStep>,
    /// `π^t` at index `t - 1`.
    pub pi: Vec<f64>,
    /// `x^t` at index `t - 1`; `None` where `π^t = 0`.
    pub x: Vec<Option<f64>>,
    /// Mass absorbed by returning to the origin (zero when `dest == origin`).
    pub returned: Vec<f64>,
    /// Mass still live after each step.
    pub live: Vec<f64>,
}

impl PassageTrace {
    pub fn t_max(&self) -> usize {
        self.pi.len()
    }
}

fn check_ops(ops: &[StepOperator], cells: &[usize]) -> Result<usize, PathError> {
    let n = ops.first().map_or(0, StepOperator::n);
    if ops.iter().any(|o| o.n() != n) {
        return Err(PathError::DimensionMismatch);
    }
    if let Some(&c) = cells.iter().find(|&&c| c >= n && !ops.is_empty()) {
        return Err(PathError::CellOutOfRange(c));
    }
    Ok(n)
}

fn run(
    ops: &[StepOperator],
    origin: usize,
    dest: usize,
    t_max: usize,
    measure: Measure,
    record: bool,
) -> Result<PassageTrace, PathError> {
    if t_max > ops.len() {
        return Err(PathError::InvalidWindow { t1: 1, t2: t_max, available: ops.len() });
    }
    let n = check_ops(ops, &[origin, dest])?;
    let mut trace = PassageTrace {
        origin,
        dest,
        measure,
        steps: Vec::new(),
        pi: Vec::with_capacity(t_max),
        x: Vec::with_capacity(t_max),
        returned: Vec::with_capacity(t_max),
        live: Vec::with_capacity(t_max),
    };
    if t_max == 0 {
        return Ok(trace);
    }

    // Masked live state: probability and mean cost, nonzero only on `frontier`.
    let mut live_p = vec![0.0; n];
    let mut live_y = vec![0.0; n];
    live_p[origin] = 1.0;
    let mut frontier = vec![origin];

    let mut p = vec![0.0; n];
    let mut w = vec![0.0; n];
    // Contribution count and the single contribution, kept so that a node
    // reached along one edge carries that edge's cost exactly.
    let mut hits = vec![0u32; n];
    let mut single = vec![0.0; n];

    for (step, op) in ops.iter().take(t_max).enumerate() {
        p.iter_mut().for_each(|v| *v = 0.0);
        w.iter_mut().for_each(|v| *v = 0.0);
        hits.iter_mut().for_each(|v| *v = 0);
        let m = op.matrix();
        let costs = op.costs(measure);
        for &r in &frontier {
            let (pr, yr) = (live_p[r], live_y[r]);
            for pos in m.col_range(r) {
                let mk = m.values()[pos];
                if mk == 0.0 {
                    continue;
                }
                let k = m.row_idx()[pos];
                let c = costs[pos].ok_or(PathError::MissingCost { t: op.t(), row: k, col: r })?;
                let mass = mk * pr;
                p[k] += mass;
                w[k] += (c + yr) * mass;
                hits[k] += 1;
                single[k] = c + yr;
            }
        }
        let mean = |k: usize| -> Option<f64> {
            (p[k] > 0.0).then(|| if hits[k] == 1 { single[k] } else { w[k] / p[k] })
        };

        trace.pi.push(p[dest]);
        trace.x.push(mean(dest));
        trace.returned.push(if dest != origin { p[origin] } else { 0.0 });
        if record {
            trace.steps.push(PassageStep { p: p.clone(), y: (0..n).map(mean).collect() });
        }

        for &r in &frontier {
            live_p[r] = 0.0;
            live_y[r] = 0.0;
        }
        frontier.clear();
        let mut live = 0.0;
        for k in 0..n {
            if p[k] > 0.0 && k != origin && k != dest {
                live_p[k] = p[k];
                live_y[k] = mean(k).expect("positive mass has a mean");
                live += p[k];
                frontier.push(k);
            }
        }
        trace.live.push(live);
        if frontier.is_empty() {
            // Nothing left to propagate: remaining steps absorb nothing.
            for _ in step + 1..t_max {
                trace.pi.push(0.0);
                trace.x.push(None);
                trace.returned.push(0.0);
                trace.live.push(0.0);
                if record {
                    trace.steps.push(PassageStep { p: vec![0.0; n], y: vec![None; n] });
                }
            }
            break;
        }
    }
    Ok(trace)
}

/// First-passage recursion with the full per-step vectors recorded.
pub fn propagate(
    ops: &[StepOperator],
    origin: usize,
    dest: usize,
    t_max: usize,
    measure: Measure,
) -> Result<PassageTrace, PathError> {
    run(ops, origin, dest, t_max, measure, true)
}

/// First-passage recursion keeping only the absorbed series.
pub fn first_passage(
    ops: &[StepOperator],
    origin: usize,
    dest: usize,
    t_max: usize,
    measure: Measure,
) -> Result<PassageTrace, PathError> {
    run(ops, origin, dest, t_max, measure, false)
}

/// Windowed first-passage summary for one OD pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowedOD {
    pub origin: usize,
    pub dest: usize,
    pub t1: usize,
    pub t2: usize,
    /// Probability-weighted mean cost; `None` when `p_hit == 0`.
    pub x_bar: Option<f64>,
    /// Total path-hit probability `Σ π^t` over the window.
    pub p_hit: f64,
    pub d_eff: Option<f64>,
    pub gup: bool,
}

/// `x̄ = Σ x^t π^t / Σ π^t` and `P = Σ π^t` over `t1..=t2` (1-based steps).
pub fn windowed_distance(trace: &PassageTrace, t1: usize, t2: usize) -> Result<WindowedOD, PathError> {
    if t1 < 1 || t1 > t2 || t2 > trace.t_max() {
        return Err(PathError::InvalidWindow { t1, t2, available: trace.t_max() });
    }
    let mut p_hit = 0.0;
    let mut weighted = 0.0;
    let mut contributing = Vec::new();
    for t in t1..=t2 {
        let pi = trace.pi[t - 1];
        if pi > 0.0 {
            let x = trace.x[t - 1].expect("positive π has a cost");
            p_hit += pi;
            weighted += x * pi;
            contributing.push(x);
        }
    }
    let x_bar = match contributing.as_slice() {
        [] => None,
        [only] => Some(*only),
        _ => Some(weighted / p_hit),
    };
    Ok(WindowedOD { origin: trace.origin, dest: trace.dest, t1, t2, x_bar, p_hit, d_eff: None, gup: false })
}

/// Set of `(origin, dest)` pairs with a direct record in any slice.
pub fn direct_pairs(slices: &[FlowSlice]) -> BTreeSet<(CellId, CellId)> {
    slices
        .iter()
        .flat_map(|s| &s.records)
        .map(|r| (r.origin.clone(), r.dest.clone()))
        .collect()
}

/// `true` for pairs never connected by a single-step record.
pub fn detect_gups(slices: &[FlowSlice], pairs: &[(CellId, CellId)]) -> Vec<bool> {
    let direct = direct_pairs(slices);
    pairs.iter().map(|p| !direct.contains(p)).collect()
}

/// All ordered off-diagonal `(origin, dest)` index pairs of a component that
/// are globally unconnected, in `(origin, dest)` order.
pub fn gup_candidates(slices: &[FlowSlice], cells: &[CellId]) -> Vec<(usize, usize)> {
    let direct = direct_pairs(slices);
    let mut out = Vec::new();
    for (j, o) in cells.iter().enumerate() {
        for (i, d) in cells.iter().enumerate() {
            if i != j && !direct.contains(&(o.clone(), d.clone())) {
                out.push((j, i));
            }
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `origin,dest,t1,t2,x_bar_km,P,d_eff,gup`.
pub fn write_windowed_csv<W: Write>(rows: &[WindowedOD], cells: &[CellId], w: W) -> Result<(), PathError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["origin", "dest", "t1", "t2", "x_bar_km", "P", "d_eff", "gup"])?;
    for r in rows {
        out.write_record([
            cells[r.origin].to_string(),
            cells[r.dest].to_string(),
            r.t1.to_string(),
            r.t2.to_string(),
            opt(r.x_bar),
            r.p_hit.to_string(),
            opt(r.d_eff),
            r.gup.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
