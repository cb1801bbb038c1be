//! Batch evaluation of OD pairs over a window, and per-day sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{first_passage, windowed_distance, PathError, WindowedOD};
use crate::baseline::BaselineModel;
use crate::geo::CellId;
use crate::markov::{Measure, StepOperator};
use crate::stats::percentile_linear;

/// Windowed first-passage summaries for `pairs` (`(origin, dest)` indices),
/// in input order. `ops` starts at the window's first step.
pub fn evaluate_window(
    ops: &[StepOperator],
    pairs: &[(usize, usize)],
    gups: &[bool],
    cells: &[CellId],
    model: Option<&BaselineModel>,
    measure: Measure,
) -> Result<Vec<WindowedOD>, PathError> {
    let t2 = ops.len();
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(j, i))| {
            let trace = first_passage(ops, j, i, t2, measure)?;
            let mut w = windowed_distance(&trace, 1, t2)?;
            w.gup = gups.get(k).copied().unwrap_or(false);
            if let (Some(model), Some(x)) = (model, w.x_bar) {
                w.d_eff = Some(model.effective_distance(&cells[j], &cells[i], x)?);
            }
            Ok(w)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub steps_per_day: usize,
    /// First step of the window within each day.
    pub window_start: usize,
    pub window_len: usize,
    /// Percentile of effective distance kept per day.
    pub q: f64,
    pub p_cut: f64,
    pub measure: Measure,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { steps_per_day: 48, window_start: 0, window_len: 48, q: 99.0, p_cut: 1e-6, measure: Measure::Distance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub day: usize,
    pub origin: CellId,
    pub dest: CellId,
    pub d_eff: f64,
    pub p_hit: f64,
}

/// For each day: evaluate `pairs` over the day's window, drop pairs with
/// `P < p_cut`, and keep those at or above the `q`-th percentile of
/// effective distance. Rows are grouped by day, largest `d_eff` first.
pub fn time_sweep(
    ops: &[StepOperator],
    days: &[usize],
    spec: &SweepSpec,
    pairs: &[(usize, usize)],
    cells: &[CellId],
    model: &BaselineModel,
) -> Result<Vec<SweepRow>, PathError> {
    let t0 = ops.first().map_or(0, StepOperator::t);
    let mut rows = Vec::new();
    for &day in days {
        let start = day * spec.steps_per_day + spec.window_start;
        let end = start + spec.window_len;
        if start < t0 || end - t0 > ops.len() || spec.window_len == 0 {
            return Err(PathError::InvalidWindow { t1: start, t2: end, available: ops.len() });
        }
        let window = &ops[start - t0..end - t0];
        let evaluated = evaluate_window(window, pairs, &[], cells, Some(model), spec.measure)?;
        let mut kept: Vec<(usize, f64, f64)> = evaluated
            .iter()
            .enumerate()
            .filter(|(_, w)| w.p_hit >= spec.p_cut)
            .filter_map(|(k, w)| w.d_eff.map(|d| (k, d, w.p_hit)))
            .collect();
        let mut values: Vec<f64> = kept.iter().map(|e| e.1).collect();
        values.sort_by(f64::total_cmp);
        let Some(threshold) = percentile_linear(&values, spec.q) else {
            continue;
        };
        kept.retain(|e| e.1 >= threshold);
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        rows.extend(kept.into_iter().map(|(k, d_eff, p_hit)| {
            let (j, i) = pairs[k];
            SweepRow { day, origin: cells[j].clone(), dest: cells[i].clone(), d_eff, p_hit }
        }));
    }
    Ok(rows)
}

/// `day,origin,dest,d_eff,P`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), PathError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["day", "origin", "dest", "d_eff", "P"])?;
    for r in rows {
        out.write_record([r.day.to_string(), r.origin.to_string(), r.dest.to_string(), r.d_eff.to_string(), r.p_hit.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
