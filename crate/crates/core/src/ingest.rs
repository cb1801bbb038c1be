//! Origin-destination flow ingestion: CSV parsing, duplicate merging, union
//! graphs and strongly connected components.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::ops::RangeInclusive;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CellId, CellTable, GeoError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row error budget exceeded: {count} bad rows (budget {budget}); first: {first}")]
    ErrorBudgetExceeded { count: usize, budget: usize, first: RowError },
    #[error("time column holds timestamps but no interval length was declared")]
    MissingInterval,
    #[error("empty time range {start}..={end}")]
    EmptyRange { start: usize, end: usize },
    #[error("cell `{0}` is not in the cells manifest")]
    UnknownCell(CellId),
    #[error("flow csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A rejected input row, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Mean / median / standard deviation summary of a per-trip quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
}

impl Summary {
    pub fn exact(value: f64) -> Self {
        Summary { mean: Some(value), median: Some(value), std: Some(0.0) }
    }

    /// Median, falling back to the mean.
    pub fn typical(&self) -> Option<f64> {
        self.median.or(self.mean)
    }

    fn fields(&self) -> [Option<f64>; 3] {
        [self.mean, self.median, self.std]
    }
}

/// One aggregated OD record: `count` trips from `origin` to `dest` during step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub t: usize,
    pub origin: CellId,
    pub dest: CellId,
    pub count: f64,
    /// Trip distance statistics, km.
    pub dist: Summary,
    /// Trip duration statistics, minutes.
    pub dur: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallTime {
    pub start: NaiveDateTime,
    pub interval_minutes: u32,
}

/// All records of one time step; at most one record per ordered pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowSlice {
    pub t: usize,
    pub records: Vec<FlowRecord>,
    pub wall_time: Option<WallTime>,
}

impl FlowSlice {
    pub fn empty(t: usize) -> Self {
        FlowSlice { t, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_count(&self) -> f64 {
        self.records.iter().map(|r| r.count).sum()
    }
}

/// Logical field → CSV column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub time: String,
    pub origin: String,
    pub dest: String,
    pub count: String,
    pub dist_mean: String,
    pub dist_median: String,
    pub dist_std: String,
    pub dur_mean: String,
    pub dur_median: String,
    pub dur_std: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            time: "time".into(),
            origin: "origin".into(),
            dest: "dest".into(),
            count: "count".into(),
            dist_mean: "dist_mean".into(),
            dist_median: "dist_median".into(),
            dist_std: "dist_std".into(),
            dur_mean: "dur_mean".into(),
            dur_median: "dur_median".into(),
            dur_std: "dur_std".into(),
        }
    }
}

/// How textual time values map to 0-based step indices.
///
/// Integer values are taken as step indices directly. Timestamps need
/// `interval_minutes`; `start` defaults to the earliest timestamp in the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeAxis {
    pub interval_minutes: Option<u32>,
    pub start: Option<NaiveDateTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub columns: ColumnMapping,
    pub time: TimeAxis,
    /// Rows with `count < min_count` are skipped (and tallied).
    pub min_count: f64,
    /// Maximum number of bad rows tolerated before the ingest fails.
    pub error_budget: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            columns: ColumnMapping::default(),
            time: TimeAxis::default(),
            min_count: 0.0,
            error_budget: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_skipped_min_count: usize,
    pub duplicates_merged: usize,
    pub row_errors: Vec<RowError>,
}

#[derive(Debug, Clone)]
pub struct ParsedFlows {
    /// One slice per step `0..=t_max`; steps without rows are empty slices.
    pub slices: Vec<FlowSlice>,
    pub report: IngestReport,
}

enum TimeValue {
    Step(usize),
    Stamp(NaiveDateTime),
}

fn parse_time(raw: &str) -> Option<TimeValue> {
    if let Ok(step) = raw.parse::<usize>() {
        return Some(TimeValue::Step(step));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(TimeValue::Stamp(dt.naive_utc()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(TimeValue::Stamp(dt));
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(TimeValue::Stamp)
}

struct RawRow {
    line: u64,
    time: TimeValue,
    origin: CellId,
    dest: CellId,
    count: f64,
    dist: Summary,
    dur: Summary,
}

struct Columns {
    time: usize,
    origin: usize,
    dest: usize,
    count: usize,
    dist: [Option<usize>; 3],
    dur: [Option<usize>; 3],
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, map: &ColumnMapping) -> Result<Self, IngestError> {
        let find = |name: &str| headers.iter().position(|h| h == name);
        let need = |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_string()));
        Ok(Columns {
            time: need(&map.time)?,
            origin: need(&map.origin)?,
            dest: need(&map.dest)?,
            count: need(&map.count)?,
            dist: [find(&map.dist_mean), find(&map.dist_median), find(&map.dist_std)],
            dur: [find(&map.dur_mean), find(&map.dur_median), find(&map.dur_std)],
        })
    }
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns) -> Result<RawRow, String> {
    let field = |i: usize| rec.get(i).unwrap_or("");
    let time_raw = field(cols.time);
    let time = parse_time(time_raw).ok_or_else(|| format!("unparsable time `{time_raw}`"))?;
    let origin = CellId::new(field(cols.origin)).map_err(|_| "empty origin".to_string())?;
    let dest = CellId::new(field(cols.dest)).map_err(|_| "empty dest".to_string())?;
    let count_raw = field(cols.count);
    let count: f64 = count_raw
        .parse()
        .map_err(|_| format!("unparsable count `{count_raw}`"))?;
    if !(count.is_finite() && count > 0.0) {
        return Err(format!("count must be positive, got `{count_raw}`"));
    }
    let stat = |idx: Option<usize>| -> Result<Option<f64>, String> {
        let Some(i) = idx else { return Ok(None) };
        let raw = field(i);
        if raw.is_empty() {
            return Ok(None);
        }
        let v: f64 = raw.parse().map_err(|_| format!("unparsable statistic `{raw}`"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("statistic must be non-negative, got `{raw}`"));
        }
        Ok(Some(v))
    };
    let summary = |idx: [Option<usize>; 3]| -> Result<Summary, String> {
        Ok(Summary { mean: stat(idx[0])?, median: stat(idx[1])?, std: stat(idx[2])? })
    };
    Ok(RawRow {
        line: rec.position().map_or(0, |p| p.line()),
        time,
        origin,
        dest,
        count,
        dist: summary(cols.dist)?,
        dur: summary(cols.dur)?,
    })
}

/// Count-weighted merge of duplicate rows, independent of input order.
fn merge_duplicates(mut rows: Vec<(f64, Summary, Summary)>) -> (f64, Summary, Summary) {
    let key = |r: &(f64, Summary, Summary)| {
        let mut k = vec![r.0.to_bits()];
        k.extend(r.1.fields().iter().chain(r.2.fields().iter()).map(|v| v.map_or(u64::MAX, f64::to_bits)));
        k
    };
    rows.sort_by_key(key);
    let count: f64 = rows.iter().map(|r| r.0).sum();
    let weighted = |pick: &dyn Fn(&(f64, Summary, Summary)) -> Option<f64>| {
        let (mut num, mut den) = (0.0, 0.0);
        for r in &rows {
            if let Some(v) = pick(r) {
                num += r.0 * v;
                den += r.0;
            }
        }
        (den > 0.0).then(|| num / den)
    };
    let dist = Summary {
        mean: weighted(&|r| r.1.mean),
        median: weighted(&|r| r.1.median),
        std: weighted(&|r| r.1.std),
    };
    let dur = Summary {
        mean: weighted(&|r| r.2.mean),
        median: weighted(&|r| r.2.median),
        std: weighted(&|r| r.2.std),
    };
    (count, dist, dur)
}

/// Parses a flow table into per-step slices.
pub fn parse_flows<R: Read>(reader: R, opts: &IngestOptions) -> Result<ParsedFlows, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, &opts.columns)?;

    let mut report = IngestReport::default();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        match parse_row(&rec, &cols) {
            Ok(row) if row.count < opts.min_count => report.rows_skipped_min_count += 1,
            Ok(row) => rows.push(row),
            Err(message) => report.row_errors.push(RowError {
                line: rec.position().map_or(0, |p| p.line()),
                message,
            }),
        }
    }

    let stamps = rows.iter().filter_map(|r| match r.time {
        TimeValue::Stamp(s) => Some(s),
        TimeValue::Step(_) => None,
    });
    let wall = match stamps.clone().min() {
        None => None,
        Some(first) => {
            let interval = opts.time.interval_minutes.ok_or(IngestError::MissingInterval)?;
            Some(WallTime { start: opts.time.start.unwrap_or(first), interval_minutes: interval })
        }
    };

    let mut groups: BTreeMap<(usize, CellId, CellId), Vec<(f64, Summary, Summary)>> = BTreeMap::new();
    for row in rows {
        let t = match (row.time, wall) {
            (TimeValue::Step(s), None) => s,
            (TimeValue::Step(_), Some(_)) => {
                report.row_errors.push(RowError {
                    line: row.line,
                    message: "integer step mixed with timestamps".into(),
                });
                continue;
            }
            (TimeValue::Stamp(s), Some(w)) => {
                let minutes = (s - w.start).num_minutes();
                let step_len = i64::from(w.interval_minutes.max(1));
                if minutes < 0 || minutes % step_len != 0 || (s - w.start).num_seconds() % 60 != 0 {
                    report.row_errors.push(RowError {
                        line: row.line,
                        message: format!("timestamp {s} is not aligned to the {step_len}-minute grid"),
                    });
                    continue;
                }
                (minutes / step_len) as usize
            }
            (TimeValue::Stamp(_), None) => unreachable!("wall time exists whenever a stamp does"),
        };
        groups
            .entry((t, row.origin, row.dest))
            .or_default()
            .push((row.count, row.dist, row.dur));
    }

    if report.row_errors.len() > opts.error_budget {
        return Err(IngestError::ErrorBudgetExceeded {
            count: report.row_errors.len(),
            budget: opts.error_budget,
            first: report.row_errors[0].clone(),
        });
    }

    let t_max = groups.keys().map(|k| k.0).max();
    let mut slices: Vec<FlowSlice> = match t_max {
        Some(m) => (0..=m).map(FlowSlice::empty).collect(),
        None => Vec::new(),
    };
    for ((t, origin, dest), dups) in groups {
        report.duplicates_merged += dups.len() - 1;
        let (count, dist, dur) = if dups.len() == 1 { dups[0] } else { merge_duplicates(dups) };
        slices[t].records.push(FlowRecord { t, origin, dest, count, dist, dur });
    }
    for s in &mut slices {
        s.wall_time = wall.map(|w| WallTime {
            start: w.start + chrono::Duration::minutes(i64::from(w.interval_minutes) * s.t as i64),
            interval_minutes: w.interval_minutes,
        });
    }
    Ok(ParsedFlows { slices, report })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes slices in the canonical CSV layout (default column names, integer steps).
pub fn write_flows<W: Write>(slices: &[FlowSlice], writer: W) -> Result<(), IngestError> {
    let map = ColumnMapping::default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        &map.time, &map.origin, &map.dest, &map.count, &map.dist_mean, &map.dist_median,
        &map.dist_std, &map.dur_mean, &map.dur_median, &map.dur_std,
    ])?;
    for r in slices.iter().flat_map(|s| &s.records) {
        w.write_record([
            r.t.to_string(),
            r.origin.to_string(),
            r.dest.to_string(),
            r.count.to_string(),
            fmt_opt(r.dist.mean),
            fmt_opt(r.dist.median),
            fmt_opt(r.dist.std),
            fmt_opt(r.dur.mean),
            fmt_opt(r.dur.median),
            fmt_opt(r.dur.std),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Checks that every referenced cell exists in the manifest.
pub fn validate_cells(slices: &[FlowSlice], cells: &CellTable) -> Result<(), IngestError> {
    for r in slices.iter().flat_map(|s| &s.records) {
        for id in [&r.origin, &r.dest] {
            if !cells.contains(id) {
                return Err(IngestError::UnknownCell(id.clone()));
            }
        }
    }
    Ok(())
}

/// Directed union of the per-step edge sets over a time range.
#[derive(Debug, Clone)]
pub struct UnionGraph {
    nodes: Vec<CellId>,
    index: BTreeMap<CellId, usize>,
    /// `(origin, dest)` node indices.
    edges: BTreeSet<(usize, usize)>,
    t_range: (usize, usize),
}

impl UnionGraph {
    pub fn nodes(&self) -> &[CellId] {
        &self.nodes
    }

    pub fn node_index(&self, id: &CellId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, origin: &CellId, dest: &CellId) -> bool {
        match (self.node_index(origin), self.node_index(dest)) {
            (Some(o), Some(d)) => self.edges.contains(&(o, d)),
            _ => false,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn t_range(&self) -> (usize, usize) {
        self.t_range
    }
}

/// Builds `E_T`, the union of directed edges of all slices whose step lies in `t_range`.
pub fn union_graph(slices: &[FlowSlice], t_range: RangeInclusive<usize>) -> Result<UnionGraph, IngestError> {
    let (start, end) = (*t_range.start(), *t_range.end());
    let in_range: Vec<&FlowSlice> = slices.iter().filter(|s| t_range.contains(&s.t)).collect();
    if start > end || in_range.is_empty() {
        return Err(IngestError::EmptyRange { start, end });
    }
    let mut ids = BTreeSet::new();
    for r in in_range.iter().flat_map(|s| &s.records) {
        ids.insert(r.origin.clone());
        ids.insert(r.dest.clone());
    }
    let nodes: Vec<CellId> = ids.into_iter().collect();
    let index: BTreeMap<CellId, usize> = nodes.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
    let edges = in_range
        .iter()
        .flat_map(|s| &s.records)
        .map(|r| (index[&r.origin], index[&r.dest]))
        .collect();
    Ok(UnionGraph { nodes, index, edges, t_range: (start, end) })
}

/// Cells of one strongly connected component, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub cells: Vec<CellId>,
    pub t_range: (usize, usize),
}

impl ComponentSpec {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index_of(&self, id: &CellId) -> Option<usize> {
        self.cells.binary_search(id).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Component {
    pub spec: ComponentSpec,
    /// False for singletons without a self-loop.
    pub analyzable: bool,
}

/// SCC partition of the union graph, largest component first.
pub fn strongly_connected_components(graph: &UnionGraph) -> Vec<Component> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(graph.nodes.len(), graph.edges.len());
    let handles: Vec<_> = (0..graph.nodes.len()).map(|_| g.add_node(())).collect();
    for &(o, d) in &graph.edges {
        g.add_edge(handles[o], handles[d], ());
    }
    let mut comps: Vec<Component> = petgraph::algo::tarjan_scc(&g)
        .into_iter()
        .map(|members| {
            let mut cells: Vec<CellId> = members.iter().map(|n| graph.nodes[n.index()].clone()).collect();
            cells.sort();
            let analyzable = cells.len() > 1 || {
                let k = members[0].index();
                graph.edges.contains(&(k, k))
            };
            Component { spec: ComponentSpec { cells, t_range: graph.t_range }, analyzable }
        })
        .collect();
    comps.sort_by(|a, b| b.spec.len().cmp(&a.spec.len()).then_with(|| a.spec.cells.cmp(&b.spec.cells)));
    comps
}

/// Drops every record with an endpoint outside the component; step indexing is kept.
pub fn restrict(slices: &[FlowSlice], component: &ComponentSpec) -> Vec<FlowSlice> {
    slices
        .iter()
        .map(|s| FlowSlice {
            t: s.t,
            wall_time: s.wall_time,
            records: s
                .records
                .iter()
                .filter(|r| component.index_of(&r.origin).is_some() && component.index_of(&r.dest).is_some())
                .cloned()
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> CellId {
        CellId::new(s).unwrap()
    }

    fn slices_from(edges: &[(usize, &str, &str)]) -> Vec<FlowSlice> {
        let mut csv = String::from("time,origin,dest,count\n");
        for (t, o, d) in edges {
            csv.push_str(&format!("{t},{o},{d},10\n"));
        }
        parse_flows(csv.as_bytes(), &IngestOptions::default()).unwrap().slices
    }

    #[test]
    fn groups_rows_by_step() {
        let csv = "time,origin,dest,count\n0,a,b,10\n0,b,a,11\n0,a,a,12\n1,a,b,3\n1,b,b,4\n";
        let p = parse_flows(csv.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(p.slices.len(), 2);
        assert_eq!(p.slices[0].records.len(), 3);
        assert_eq!(p.slices[1].records.len(), 2);
    }

    #[test]
    fn merges_duplicates_count_weighted() {
        let csv = "time,origin,dest,count,dist_median\n0,a,b,10,1.0\n0,a,b,20,4.0\n";
        let p = parse_flows(csv.as_bytes(), &IngestOptions::default()).unwrap();
        let r = &p.slices[0].records;
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].count, 30.0);
        assert_eq!(r[0].dist.median, Some(3.0));
        assert_eq!(p.report.duplicates_merged, 1);
    }

    #[test]
    fn negative_count_is_a_row_error() {
        let csv = "time,origin,dest,count\n0,a,b,-5\n0,a,c,5\n";
        let p = parse_flows(csv.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(p.report.row_errors.len(), 1);
        assert_eq!(p.report.row_errors[0].line, 2);
        let strict = IngestOptions { error_budget: 0, ..Default::default() };
        assert!(matches!(
            parse_flows(csv.as_bytes(), &strict),
            Err(IngestError::ErrorBudgetExceeded { .. })
        ));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let csv = "time,origin,destination,count\n0,a,b,1\n";
        match parse_flows(csv.as_bytes(), &IngestOptions::default()) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "dest"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn min_count_skips_and_tallies() {
        let csv = "time,origin,dest,count\n0,a,b,5\n0,a,c,15\n";
        let opts = IngestOptions { min_count: 10.0, ..Default::default() };
        let p = parse_flows(csv.as_bytes(), &opts).unwrap();
        assert_eq!(p.report.rows_skipped_min_count, 1);
        assert_eq!(p.slices[0].records.len(), 1);
    }

    #[test]
    fn timestamps_become_steps() {
        let csv = "time,origin,dest,count\n2019-06-05T06:00:00,a,b,10\n2019-06-05T12:00:00,b,a,10\n";
        assert!(matches!(
            parse_flows(csv.as_bytes(), &IngestOptions::default()),
            Err(IngestError::MissingInterval)
        ));
        let opts = IngestOptions {
            time: TimeAxis { interval_minutes: Some(180), start: None },
            ..Default::default()
        };
        let p = parse_flows(csv.as_bytes(), &opts).unwrap();
        assert_eq!(p.slices.len(), 3);
        assert!(p.slices[1].is_empty());
        assert_eq!(p.slices[2].records[0].t, 2);
        let w = p.slices[2].wall_time.unwrap();
        assert_eq!(w.start.to_string(), "2019-06-05 12:00:00");

        let misaligned = "time,origin,dest,count\n2019-06-05T06:00:00,a,b,10\n2019-06-05T07:00:00,b,a,10\n";
        let p = parse_flows(misaligned.as_bytes(), &opts).unwrap();
        assert_eq!(p.report.row_errors.len(), 1);
    }

    #[test]
    fn custom_column_mapping() {
        let csv = "ts,from,to,n\n0,a,b,1\n";
        let columns = ColumnMapping {
            time: "ts".into(),
            origin: "from".into(),
            dest: "to".into(),
            count: "n".into(),
            ..Default::default()
        };
        let opts = IngestOptions { columns, ..Default::default() };
        let p = parse_flows(csv.as_bytes(), &opts).unwrap();
        assert_eq!(p.slices[0].records[0].dest, id("b"));
    }

    #[test]
    fn union_graph_cases() {
        let s = slices_from(&[(0, "a", "b")]);
        let g = union_graph(&s, 0..=0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(&id("a"), &id("b")));

        let s = slices_from(&[(0, "a", "b"), (1, "b", "a")]);
        let g = union_graph(&s, 0..=1).unwrap();
        assert!(g.has_edge(&id("a"), &id("b")) && g.has_edge(&id("b"), &id("a")));
        let g0 = union_graph(&s, 0..=0).unwrap();
        let g1 = union_graph(&s, 1..=1).unwrap();
        assert!(!g0.has_edge(&id("b"), &id("a")));
        assert!(!g1.has_edge(&id("a"), &id("b")));

        assert!(union_graph(&s, 5..=7).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 1..=0;
        assert!(union_graph(&s, empty).is_err());
    }

    #[test]
    fn scc_cases() {
        let s = slices_from(&[(0, "a", "b"), (0, "b", "c"), (0, "c", "a")]);
        let c = strongly_connected_components(&union_graph(&s, 0..=0).unwrap());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].spec.cells, vec![id("a"), id("b"), id("c")]);

        let s = slices_from(&[(0, "a", "b"), (0, "b", "c")]);
        let c = strongly_connected_components(&union_graph(&s, 0..=0).unwrap());
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|c| c.spec.len() == 1 && !c.analyzable));

        let s = slices_from(&[(0, "a", "b"), (0, "b", "a"), (0, "c", "d"), (0, "d", "c"), (0, "b", "c"), (0, "c", "c")]);
        let c = strongly_connected_components(&union_graph(&s, 0..=0).unwrap());
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].spec.cells, vec![id("a"), id("b")]);
        assert_eq!(c[1].spec.cells, vec![id("c"), id("d")]);

        let s = slices_from(&[(0, "a", "a")]);
        let c = strongly_connected_components(&union_graph(&s, 0..=0).unwrap());
        assert!(c[0].analyzable);
    }

    #[test]
    fn restrict_cases() {
        let s = slices_from(&[(0, "a", "b"), (0, "b", "a"), (0, "c", "a"), (1, "a", "a")]);
        let all = ComponentSpec { cells: vec![id("a"), id("b"), id("c")], t_range: (0, 1) };
        assert_eq!(restrict(&s, &all), s);
        let ab = ComponentSpec { cells: vec![id("a"), id("b")], t_range: (0, 1) };
        let r = restrict(&s, &ab);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].records.len(), 2);
        assert!(r[0].records.iter().all(|x| x.origin != id("c")));
        assert_eq!(r[1].records[0].count, 10.0);
    }

    #[test]
    fn unknown_cells_are_reported() {
        let s = slices_from(&[(0, "a", "b")]);
        let mut cells = CellTable::new();
        cells.insert(id("a"), crate::geo::LatLon::new(0.0, 0.0)).unwrap();
        assert!(matches!(validate_cells(&s, &cells), Err(IngestError::UnknownCell(c)) if c == id("b")));
    }
}
