//! Ranking of individual admissible paths behind a first-passage series.

use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;

use super::{check_ops, PathError};
use crate::geo::CellId;
use crate::markov::{Measure, StepOperator};

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    /// Exhaustive search is used while the number of partial paths is at most this.
    pub exhaustive_limit: f64,
    pub beam_width: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { exhaustive_limit: 1e6, beam_width: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    /// Node sequence from origin to destination, both included.
    pub nodes: Vec<usize>,
    pub arrival_step: usize,
    pub prob: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDecomposition {
    pub origin: usize,
    pub dest: usize,
    pub t_max: usize,
    pub paths: Vec<PathRecord>,
    /// `true` when every admissible path was enumerated.
    pub exhaustive: bool,
    pub beam_width: Option<usize>,
}

fn rank(a: &PathRecord, b: &PathRecord) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then(a.arrival_step.cmp(&b.arrival_step))
        .then_with(|| a.nodes.cmp(&b.nodes))
}

/// Upper bound on live partial paths over all steps, by counting supports.
fn partial_path_count(ops: &[StepOperator], origin: usize, dest: usize, t_max: usize) -> f64 {
    let n = ops[0].n();
    let mut count = vec![0.0f64; n];
    count[origin] = 1.0;
    let mut total = 0.0;
    for op in ops.iter().take(t_max) {
        let m = op.matrix();
        let mut next = vec![0.0f64; n];
        for (r, &c) in count.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (k, v) in m.column(r) {
                if v > 0.0 {
                    next[k] += c;
                }
            }
        }
        total += next.iter().sum::<f64>();
        next[origin] = 0.0;
        next[dest] = 0.0;
        count = next;
    }
    total
}

struct Partial {
    nodes: Vec<usize>,
    prob: f64,
    cost: f64,
}

/// Expands `path` by one step, pushing arrivals to `done` and live extensions to `next`.
fn expand(
    op: &StepOperator,
    step: usize,
    path: &Partial,
    origin: usize,
    dest: usize,
    measure: Measure,
    done: &mut Vec<PathRecord>,
    mut next: impl FnMut(Partial),
) -> Result<(), PathError> {
    let r = *path.nodes.last().expect("paths are non-empty");
    let m = op.matrix();
    let costs = op.costs(measure);
    for pos in m.col_range(r) {
        let v = m.values()[pos];
        if v == 0.0 {
            continue;
        }
        let k = m.row_idx()[pos];
        let c = costs[pos].ok_or(PathError::MissingCost { t: op.t(), row: k, col: r })?;
        let mut nodes = path.nodes.clone();
        nodes.push(k);
        let ext = Partial { nodes, prob: path.prob * v, cost: path.cost + c };
        if k == dest {
            done.push(PathRecord { nodes: ext.nodes, arrival_step: step, prob: ext.prob, cost: ext.cost });
        } else if k != origin {
            next(ext);
        }
    }
    Ok(())
}

fn dfs(
    ops: &[StepOperator],
    step: usize,
    path: Partial,
    origin: usize,
    dest: usize,
    measure: Measure,
    done: &mut Vec<PathRecord>,
) -> Result<(), PathError> {
    let mut live = Vec::new();
    expand(&ops[step - 1], step, &path, origin, dest, measure, done, |p| live.push(p))?;
    if step < ops.len() {
        for p in live {
            dfs(ops, step + 1, p, origin, dest, measure, done)?;
        }
    }
    Ok(())
}

/// Top `top_k` admissible paths from `origin` to `dest` within `t_max` steps,
/// ranked by probability (then arrival step, then node sequence).
pub fn decompose_paths(
    ops: &[StepOperator],
    origin: usize,
    dest: usize,
    t_max: usize,
    top_k: usize,
    measure: Measure,
    opts: DecomposeOptions,
) -> Result<PathDecomposition, PathError> {
    if t_max > ops.len() {
        return Err(PathError::InvalidWindow { t1: 1, t2: t_max, available: ops.len() });
    }
    check_ops(ops, &[origin, dest])?;
    let mut out = PathDecomposition { origin, dest, t_max, paths: Vec::new(), exhaustive: true, beam_width: None };
    if top_k == 0 || t_max == 0 {
        return Ok(out);
    }
    let ops = &ops[..t_max];
    let start = Partial { nodes: vec![origin], prob: 1.0, cost: 0.0 };
    let mut done = Vec::new();
    if partial_path_count(ops, origin, dest, t_max) <= opts.exhaustive_limit {
        dfs(ops, 1, start, origin, dest, measure, &mut done)?;
    } else {
        out.exhaustive = false;
        out.beam_width = Some(opts.beam_width);
        let mut beam = vec![start];
        for (s, op) in ops.iter().enumerate() {
            let mut next = Vec::new();
            for p in &beam {
                expand(op, s + 1, p, origin, dest, measure, &mut done, |e| next.push(e))?;
            }
            next.sort_by(|a, b| b.prob.total_cmp(&a.prob).then_with(|| a.nodes.cmp(&b.nodes)));
            next.truncate(opts.beam_width);
            beam = next;
            if beam.is_empty() {
                break;
            }
        }
    }
    done.sort_by(rank);
    done.truncate(top_k);
    out.paths = done;
    Ok(out)
}

#[derive(Serialize)]
struct JsonPath<'a> {
    nodes: Vec<&'a str>,
    arrival_step: usize,
    prob: f64,
    dist_km: f64,
}

#[derive(Serialize)]
struct JsonDecomposition<'a> {
    origin: &'a str,
    dest: &'a str,
    window: [usize; 2],
    exhaustive: bool,
    beam_width: Option<usize>,
    paths: Vec<JsonPath<'a>>,
}

/// `{origin, dest, window, exhaustive, beam_width, paths: [{nodes, arrival_step, prob, dist_km}]}`.
pub fn paths_document(d: &PathDecomposition, cells: &[CellId]) -> serde_json::Value {
    let doc = JsonDecomposition {
        origin: cells[d.origin].as_str(),
        dest: cells[d.dest].as_str(),
        window: [1, d.t_max],
        exhaustive: d.exhaustive,
        beam_width: d.beam_width,
        paths: d
            .paths
            .iter()
            .map(|p| JsonPath {
                nodes: p.nodes.iter().map(|&k| cells[k].as_str()).collect(),
                arrival_step: p.arrival_step,
                prob: p.prob,
                dist_km: p.cost,
            })
            .collect(),
    };
    serde_json::to_value(doc).expect("plain data serializes")
}

pub fn write_paths_json<W: Write>(d: &PathDecomposition, cells: &[CellId], w: W) -> Result<(), PathError> {
    serde_json::to_writer_pretty(w, &paths_document(d, cells))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::op;
    use super::*;

    fn parallel() -> Vec<StepOperator> {
        // 0 → {1, 2, 3}; 1 → 3 and 2 → 3 at step 2.
        vec![
            op(0, 4, &[(1, 0, 0.1, 1.0), (2, 0, 0.05, 2.0), (0, 0, 0.85, 0.0)]),
            op(1, 4, &[(3, 1, 0.3, 1.0), (1, 1, 0.7, 0.0), (3, 2, 0.2, 4.0), (2, 2, 0.8, 0.0)]),
        ]
    }

    #[test]
    fn parallel_routes_ranked() {
        let d = decompose_paths(&parallel(), 0, 3, 2, 10, Measure::Distance, DecomposeOptions::default()).unwrap();
        assert!(d.exhaustive);
        assert_eq!(d.paths.len(), 2);
        assert_eq!(d.paths[0].nodes, vec![0, 1, 3]);
        assert_eq!(d.paths[0].prob, 0.1 * 0.3);
        assert_eq!(d.paths[1].nodes, vec![0, 2, 3]);
        assert_eq!(d.paths[1].prob, 0.05 * 0.2);
        assert_eq!(d.paths[1].cost, 6.0);
    }

    #[test]
    fn top_k_zero_is_empty() {
        let d = decompose_paths(&parallel(), 0, 3, 2, 0, Measure::Distance, DecomposeOptions::default()).unwrap();
        assert!(d.paths.is_empty());
    }

    #[test]
    fn beam_fallback_flags_incomplete() {
        let opts = DecomposeOptions { exhaustive_limit: 0.0, beam_width: 1 };
        let d = decompose_paths(&parallel(), 0, 3, 2, 10, Measure::Distance, opts).unwrap();
        assert!(!d.exhaustive);
        assert_eq!(d.beam_width, Some(1));
        assert_eq!(d.paths.len(), 1);
        assert_eq!(d.paths[0].nodes, vec![0, 1, 3]);
    }

    #[test]
    fn json_export() {
        let cells: Vec<CellId> = ["a", "b", "c", "d"].iter().map(|s| CellId::new(*s).unwrap()).collect();
        let d = decompose_paths(&parallel(), 0, 3, 2, 1, Measure::Distance, DecomposeOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_paths_json(&d, &cells, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["paths"][0]["nodes"], serde_json::json!(["a", "b", "d"]));
        assert_eq!(v["window"], serde_json::json!([1, 2]));
    }
}
