//! Time-elapsed net trip counts between ordered cell pairs.
//!
//! For a window whose elapsed operator is `A` and whose first slice gives
//! origin populations `n_j`, the expected net count is
//! `s(i, j) = a_ij · n_j − a_ji · n_i`; positive means net flow from `j` to `i`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::geo::{CellId, CellTable};
use crate::ingest::{ComponentSpec, FlowSlice};
use crate::markov::ElapsedOperator;
use crate::stats::percentile_linear;

#[derive(Debug, Error)]
pub enum NetFlowError {
    #[error("first slice has no flow inside the component")]
    EmptySlice,
    #[error("cell `{0}` is not part of the component")]
    UnknownCell(CellId),
    #[error("percentile {0} outside [0, 100]")]
    PercentileOutOfRange(f64),
    #[error("net-flow result is empty")]
    EmptyResult,
    #[error("operator size {got} does not match distribution size {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cell `{0}` has no centroid")]
    MissingCentroid(CellId),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Origin populations at the start of a window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialDistribution {
    pub n_total: f64,
    pub n_by_origin: Vec<f64>,
    pub p: Vec<f64>,
}

/// `n_j = Σ_i f_ij` over the first slice, `p_j = n_j / Σ n`.
pub fn initial_distribution(first: &FlowSlice, component: &ComponentSpec) -> Result<InitialDistribution, NetFlowError> {
    let mut n_by_origin = vec![0.0; component.len()];
    for r in &first.records {
        let j = component.index_of(&r.origin).ok_or_else(|| NetFlowError::UnknownCell(r.origin.clone()))?;
        if component.index_of(&r.dest).is_none() {
            return Err(NetFlowError::UnknownCell(r.dest.clone()));
        }
        n_by_origin[j] += r.count;
    }
    let n_total: f64 = n_by_origin.iter().sum();
    if n_total <= 0.0 {
        return Err(NetFlowError::EmptySlice);
    }
    let p = n_by_origin.iter().map(|n| n / n_total).collect();
    Ok(InitialDistribution { n_total, n_by_origin, p })
}

/// Net count for the ordered pair `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetFlow {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

impl NetFlow {
    /// `(from, to, magnitude)` in the direction of positive flow.
    pub fn oriented(&self) -> (usize, usize, f64) {
        if self.value >= 0.0 {
            (self.j, self.i, self.value)
        } else {
            (self.i, self.j, -self.value)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetFlowResult {
    pub cells: Vec<CellId>,
    /// Steps covered by the elapsed operator; `None` for an empty window.
    pub window: Option<(usize, usize)>,
    /// Nonzero entries, ordered by `(i, j)`.
    pub entries: Vec<NetFlow>,
}

impl NetFlowResult {
    /// Antisymmetric lookup `s(i, j) = −s(j, i)`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        self.entries
            .binary_search_by(|e| (e.i, e.j).cmp(&(a, b)))
            .map_or(0.0, |k| sign * self.entries[k].value)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn net_flows(
    a: &ElapsedOperator,
    init: &InitialDistribution,
    component: &ComponentSpec,
) -> Result<NetFlowResult, NetFlowError> {
    let n = init.n_by_origin.len();
    if a.n() != n || component.len() != n {
        return Err(NetFlowError::DimensionMismatch { expected: n, got: a.n() });
    }
    let nj = &init.n_by_origin;
    let entries = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..n).filter_map(move |j| {
                let value = a.get(i, j) * nj[j] - a.get(j, i) * nj[i];
                (value != 0.0).then_some(NetFlow { i, j, value })
            })
        })
        .collect();
    Ok(NetFlowResult { cells: component.cells.clone(), window: a.t_span(), entries })
}

/// Keeps entries with `|s|` at or above the `q`-th percentile of `|s|`.
/// Returns the filtered result and the threshold used.
pub fn top_percentile(result: &NetFlowResult, q: f64) -> Result<(NetFlowResult, f64), NetFlowError> {
    if !(0.0..=100.0).contains(&q) {
        return Err(NetFlowError::PercentileOutOfRange(q));
    }
    if result.entries.is_empty() {
        return Err(NetFlowError::EmptyResult);
    }
    let mut mags: Vec<f64> = result.entries.iter().map(|e| e.value.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let threshold = percentile_linear(&mags, q).expect("non-empty, q in range");
    let entries = result.entries.iter().copied().filter(|e| e.value.abs() >= threshold).collect();
    Ok((NetFlowResult { cells: result.cells.clone(), window: result.window, entries }, threshold))
}

fn window_fields(result: &NetFlowResult) -> (String, String) {
    result
        .window
        .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()))
}

/// `origin,dest,netflow,window_start,window_end`, oriented along positive flow.
pub fn write_csv<W: Write>(result: &NetFlowResult, w: W) -> Result<(), NetFlowError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["origin", "dest", "netflow", "window_start", "window_end"])?;
    let (ws, we) = window_fields(result);
    for e in &result.entries {
        let (from, to, mag) = e.oriented();
        out.write_record([
            result.cells[from].as_str(),
            result.cells[to].as_str(),
            &mag.to_string(),
            &ws,
            &we,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// GeoJSON FeatureCollection of origin→dest LineStrings with a `netflow` property.
pub fn write_geojson<W: Write>(result: &NetFlowResult, cells: &CellTable, w: W) -> Result<(), NetFlowError> {
    let centroid = |k: usize| {
        cells
            .get(&result.cells[k])
            .ok_or_else(|| NetFlowError::MissingCentroid(result.cells[k].clone()))
    };
    let mut features = Vec::with_capacity(result.entries.len());
    for e in &result.entries {
        let (from, to, mag) = e.oriented();
        let (a, b) = (centroid(from)?, centroid(to)?);
        features.push(json!({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[a.lon, a.lat], [b.lon, b.lat]],
            },
            "properties": {
                "origin": result.cells[from].as_str(),
                "dest": result.cells[to].as_str(),
                "netflow": mag,
            },
        }));
    }
    let (ws, we) = result.window.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    let doc = json!({
        "type": "FeatureCollection",
        "properties": { "window_start": ws, "window_end": we },
        "features": features,
    });
    serde_json::to_writer_pretty(w, &doc)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_flows, IngestOptions};
    use crate::markov::{build_step_operators, elapse, GapPolicy};

    fn setup(csv_rows: &str) -> (Vec<FlowSlice>, ComponentSpec) {
        let csv = format!("time,origin,dest,count\n{csv_rows}");
        let slices = parse_flows(csv.as_bytes(), &IngestOptions::default()).unwrap().slices;
        let mut cells: Vec<CellId> = slices
            .iter()
            .flat_map(|s| s.records.iter().flat_map(|r| [r.origin.clone(), r.dest.clone()]))
            .collect();
        cells.sort();
        cells.dedup();
        (slices, ComponentSpec { cells, t_range: (0, 0) })
    }

    #[test]
    fn initial_distribution_examples() {
        let (s, c) = setup("0,a,a,2\n0,a,b,3\n0,b,a,10\n");
        let init = initial_distribution(&s[0], &c).unwrap();
        assert_eq!(init.n_total, 15.0);
        assert_eq!(init.p, vec![1.0 / 3.0, 2.0 / 3.0]);

        let (s, c) = setup("0,a,a,7\n");
        let init = initial_distribution(&s[0], &c).unwrap();
        assert_eq!((init.n_total, init.p.clone()), (7.0, vec![1.0]));

        assert!(matches!(initial_distribution(&FlowSlice::empty(0), &c), Err(NetFlowError::EmptySlice)));
    }

    #[test]
    fn two_cell_swap_net_flow() {
        // Cells 1 = a, 2 = b; f_12 = 10 (b→a), f_21 = 5 (a→b).
        let (s, c) = setup("0,b,a,10\n0,a,b,5\n");
        let ops = build_step_operators(&s, &c, GapPolicy::SelfLoop).unwrap();
        let a = elapse(2, &ops).unwrap();
        let init = initial_distribution(&s[0], &c).unwrap();
        assert_eq!(init.n_by_origin, vec![5.0, 10.0]);
        let r = net_flows(&a, &init, &c).unwrap();
        assert_eq!(r.value(0, 1), 5.0);
        assert_eq!(r.value(1, 0), -5.0);
        assert_eq!(r.entries[0].oriented(), (1, 0, 5.0));
        assert_eq!(r.window, Some((0, 0)));
    }

    #[test]
    fn identity_window_is_zero() {
        let (s, c) = setup("0,b,a,10\n0,a,b,5\n0,a,c,1\n0,c,a,1\n");
        let init = initial_distribution(&s[0], &c).unwrap();
        let r = net_flows(&ElapsedOperator::identity(3), &init, &c).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.window, None);
    }

    #[test]
    fn symmetric_flows_vanish() {
        let (s, c) = setup("0,a,b,4\n0,b,a,4\n0,a,a,6\n0,b,b,6\n");
        let ops = build_step_operators(&s, &c, GapPolicy::SelfLoop).unwrap();
        let init = initial_distribution(&s[0], &c).unwrap();
        let r = net_flows(&elapse(2, &ops).unwrap(), &init, &c).unwrap();
        assert!(r.is_empty());
    }

    fn result_with(values: &[f64]) -> NetFlowResult {
        let entries = values.iter().enumerate().map(|(k, &v)| NetFlow { i: 0, j: k + 1, value: v }).collect();
        let cells = (0..=values.len()).map(|k| CellId::new(format!("c{k}")).unwrap()).collect();
        NetFlowResult { cells, window: Some((0, 1)), entries }
    }

    #[test]
    fn percentile_selection() {
        let r = result_with(&[1.0, -2.0, 3.0, -4.0]);
        let (top, thr) = top_percentile(&r, 75.0).unwrap();
        assert_eq!(thr, 3.25);
        assert_eq!(top.entries.len(), 1);
        assert_eq!(top.entries[0].value, -4.0);
        assert_eq!(top_percentile(&r, 0.0).unwrap().0.entries.len(), 4);
        assert_eq!(top_percentile(&result_with(&[2.0, -2.0, 2.0]), 90.0).unwrap().0.entries.len(), 3);
        assert!(top_percentile(&r, 120.0).is_err());
        assert!(top_percentile(&result_with(&[]), 50.0).is_err());
    }

    #[test]
    fn exports() {
        let r = result_with(&[1.5, -2.0]);
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "origin,dest,netflow,window_start,window_end\nc1,c0,1.5,0,1\nc0,c2,2,0,1\n"
        );
        let mut cells = CellTable::new();
        for (k, c) in r.cells.iter().enumerate() {
            cells.insert(c.clone(), crate::geo::LatLon::new(k as f64, -(k as f64))).unwrap();
        }
        let mut buf = Vec::new();
        write_geojson(&r, &cells, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let f = &v["features"][0];
        assert_eq!(f["geometry"]["coordinates"], json!([[-1.0, 1.0], [0.0, 0.0]]));
        assert_eq!(f["properties"]["netflow"], json!(1.5));
    }
}
