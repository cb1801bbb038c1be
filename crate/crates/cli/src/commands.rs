//! Subcommand bodies.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use odflow::baseline::{fit_baseline, scatter_points, write_scatter, BaselineError, BaselineModel};
use odflow::cache::OperatorCache;
use odflow::geo::{decode_geohash, CellId, CellTable};
use odflow::ingest::{
    parse_flows, restrict, strongly_connected_components, union_graph, validate_cells, write_flows, Component,
    IngestError,
};
use odflow::markov::{build_step_operators, elapse, MarkovError, StepOperator};
use odflow::matrix::DenseMatrix;
use odflow::netflow::{self, initial_distribution, net_flows, top_percentile, NetFlowError};
use odflow::paths::{
    city_rto, decompose_paths, detect_gups, evaluate_window, gup_candidates, paths_document, time_sweep,
    write_sweep_csv, write_windowed_csv, DecomposeOptions, PathError, RtoVariant, SweepSpec, WindowedOD,
};
use odflow::root::{approximate_stochastic_root, RootOptions};
use odflow::stats::percentile_linear;
use odflow::synth::{generate, potential_drop, write_fixed_point, SynthConfig, SynthError};
use serde_json::json;

use crate::config::{ComponentSelect, GupScope, RunConfig, StepRange};
use crate::store::{self, Loaded};
use crate::{code, fail, ExitContext, Failure};

const ROW_ERRORS_LISTED: usize = 10;

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    store::write_text(dir, store::CONFIG_ECHO, &cfg.relative_to(dir)?.to_toml())
}

fn ingest_code(e: &IngestError) -> u8 {
    match e {
        IngestError::EmptyRange { .. } => code::EMPTY,
        _ => code::SCHEMA,
    }
}

fn markov_code(e: &MarkovError) -> u8 {
    match e {
        MarkovError::NotStochastic(_) | MarkovError::UnknownCell(_) | MarkovError::DimensionMismatch { .. } => code::SCHEMA,
        MarkovError::InvalidRootOrder(_) => code::USAGE,
        _ => code::OTHER,
    }
}

fn path_code(e: &PathError) -> u8 {
    match e {
        PathError::InvalidWindow { .. } => code::USAGE,
        PathError::Baseline(BaselineError::MissingCentroid(_)) => code::SCHEMA,
        _ => code::OTHER,
    }
}

fn pick_component<'a>(comps: &'a [Component], select: &ComponentSelect) -> Result<&'a Component, Failure> {
    let none = |why: String| fail(code::EMPTY_COMPONENT, why);
    match select {
        ComponentSelect::Named(_) => comps
            .iter()
            .find(|c| c.analyzable && c.spec.len() > 1)
            .ok_or_else(|| none("no strongly connected component with more than one cell".into())),
        ComponentSelect::ByCell { cell } => {
            let c = comps
                .iter()
                .find(|c| c.spec.index_of(cell).is_some())
                .ok_or_else(|| none(format!("cell `{cell}` has no flows in the selected steps")))?;
            if !c.analyzable {
                return Err(none(format!("cell `{cell}` forms a singleton without a self-loop")));
            }
            Ok(c)
        }
        ComponentSelect::Explicit { cells } => {
            let mut want = cells.clone();
            want.sort();
            want.dedup();
            comps
                .iter()
                .find(|c| c.analyzable && c.spec.cells == want)
                .ok_or_else(|| none("the listed cells are not exactly one strongly connected component".into()))
        }
    }
}

/// Centroids for the component: manifest rows, else geohash decoding of the ids.
fn component_cells(ids: &[CellId], manifest: Option<&CellTable>) -> Option<CellTable> {
    let mut table = CellTable::new();
    for id in ids {
        let at = match manifest {
            Some(m) => m.get(id),
            None => decode_geohash(id.as_str()).ok(),
        };
        let Some(at) = at else {
            warn!("cell `{id}` has no centroid; distance-based commands will need --cells");
            return None;
        };
        table.insert(id.clone(), at).ok()?;
    }
    Some(table)
}

pub fn ingest(cfg: &RunConfig) -> Result<(), Failure> {
    let flows = cfg
        .flows
        .as_ref()
        .ok_or_else(|| fail(code::USAGE, "no flow table given (positional FLOWS or `flows` in the config)"))?;
    let parsed = parse_flows(store::open(flows)?, &cfg.ingest).map_err(|e| {
        let c = ingest_code(&e);
        Failure { code: c, error: anyhow::Error::new(e).context(format!("{}", flows.display())) }
    })?;
    for e in parsed.report.row_errors.iter().take(ROW_ERRORS_LISTED) {
        warn!("skipped {e}");
    }
    let manifest = match &cfg.cells {
        Some(p) => {
            let table = CellTable::read_csv(store::open(p)?)
                .with_context(|| format!("{}", p.display()))
                .exit(code::SCHEMA)?;
            validate_cells(&parsed.slices, &table).exit(code::SCHEMA)?;
            Some(table)
        }
        None => None,
    };
    let slices = parsed.slices;
    if slices.is_empty() {
        return Err(fail(code::EMPTY_COMPONENT, "the flow table has no records"));
    }
    let last = slices.len() - 1;
    let (a, b) = cfg.t_range.map_or((0, last), |r| (r.start(), r.end()));
    if b > last {
        return Err(fail(code::EMPTY, format!("t_range {a}..{b} extends past the last step {last}")));
    }
    let graph = union_graph(&slices, a..=b).map_err(|e| {
        let c = ingest_code(&e);
        Failure { code: c, error: e.into() }
    })?;
    let comps = strongly_connected_components(&graph);
    let chosen = pick_component(&comps, &cfg.component)?;
    let spec = chosen.spec.clone();
    let restricted = restrict(&slices[a..=b], &spec);
    let ops = build_step_operators(&restricted, &spec, cfg.gap_policy).map_err(|e| Failure {
        code: markov_code(&e),
        error: e.into(),
    })?;
    let cells = component_cells(&spec.cells, manifest.as_ref());

    let dir = &cfg.cache;
    OperatorCache { cells: spec.cells.clone(), ops: ops.clone() }
        .write(store::create(dir, store::OPERATORS)?)
        .context("writing the operator cache")?;
    store::write_json(dir, store::COMPONENT, &spec)?;
    {
        let mut w = store::create(dir, store::FLOWS)?;
        write_flows(&restricted, &mut w)?;
        w.flush()?;
    }
    if let Some(table) = &cells {
        table.write_csv(store::create(dir, store::CELLS)?)?;
    } else if dir.join(store::CELLS).exists() {
        std::fs::remove_file(dir.join(store::CELLS))?;
    }
    if dir.join(store::BASELINE_FIT).exists() {
        std::fs::remove_file(dir.join(store::BASELINE_FIT))?;
    }

    let records = |s: &[odflow::ingest::FlowSlice]| s.iter().map(|x| x.records.len()).sum::<usize>();
    let missing = |m| ops.iter().map(|o: &StepOperator| o.missing_costs(m).len()).sum::<usize>();
    let mut multi: Vec<usize> = comps.iter().map(|c| c.spec.len()).filter(|&n| n > 1).collect();
    multi.sort_unstable_by(|x, y| y.cmp(x));
    let summary = json!({
        "cells": spec.len(),
        "cell_ids": spec.cells,
        "t_range": [a, b],
        "steps": b - a + 1,
        "rows_read": parsed.report.rows_read,
        "rows_skipped_min_count": parsed.report.rows_skipped_min_count,
        "duplicates_merged": parsed.report.duplicates_merged,
        "rows_dropped": parsed.report.row_errors.len(),
        "row_errors": parsed.report.row_errors.iter().take(ROW_ERRORS_LISTED).collect::<Vec<_>>(),
        "records_total": records(&slices),
        "records_in_range": records(&slices[a..=b]),
        "records_in_component": records(&restricted),
        "graph_cells": graph.nodes().len(),
        "graph_edges": graph.edge_count(),
        "scc_count": comps.len(),
        "scc_sizes": multi,
        "scc_singletons": comps.iter().filter(|c| c.spec.len() == 1).count(),
        "gap_policy": cfg.gap_policy,
        "missing_costs": {
            "distance": missing(odflow::markov::Measure::Distance),
            "duration": missing(odflow::markov::Measure::Duration),
        },
        "centroids": cells.is_some(),
        "wall_start": restricted.first().and_then(|s| s.wall_time.as_ref()),
    });
    store::write_json(dir, store::SUMMARY, &summary)?;
    echo_config(dir, cfg)?;
    println!(
        "component of {} cells over steps {a}..{b}; {} of {} records kept; cache written to {}",
        spec.len(),
        records(&restricted),
        records(&slices),
        dir.display()
    );
    Ok(())
}

pub fn netflow(cfg: &RunConfig) -> Result<(), Failure> {
    let data = Loaded::load(cfg)?;
    let (s, e) = data.window(cfg.window)?;
    let q = cfg.percentile.unwrap_or(75.0);
    let a = elapse(data.component.len(), &data.ops[s..=e])?;
    let init = initial_distribution(&data.slices[s], &data.component).map_err(|err| match err {
        NetFlowError::EmptySlice => fail(code::EMPTY, "the first step of the window has no flow"),
        other => other.into(),
    })?;
    let result = net_flows(&a, &init, &data.component)?;
    let (top, threshold) = top_percentile(&result, q).map_err(|err| match err {
        NetFlowError::PercentileOutOfRange(_) => Failure { code: code::USAGE, error: err.into() },
        NetFlowError::EmptyResult => fail(code::EMPTY, "no nonzero net flow in the window"),
        other => other.into(),
    })?;
    let out = &cfg.out;
    netflow::write_csv(&top, store::create(out, "netflow.csv")?)?;
    match &data.cells {
        Some(cells) => netflow::write_geojson(&top, cells, store::create(out, "netflow.geojson")?).exit(code::SCHEMA)?,
        None => warn!("no centroids available; netflow.geojson not written"),
    }
    echo_config(out, cfg)?;
    println!(
        "percentile {q} threshold {threshold}; {} of {} pairs kept",
        top.entries.len(),
        result.entries.len()
    );
    Ok(())
}

/// Baseline model for the cache plus step operators with missing costs imputed.
fn model_and_ops(data: &Loaded, cfg: &RunConfig) -> Result<(BaselineModel, Vec<StepOperator>), Failure> {
    let cells = data.cells()?;
    let fit = match data.fit {
        Some(f) => f,
        None => fit_baseline(&data.slices, cells, cfg.measure).exit(code::SCHEMA)?,
    };
    let model = BaselineModel::with_fit(fit, &data.slices, cells, cfg.measure);
    let mut ops = data.ops.clone();
    let filled = model.impute_costs(&mut ops, &data.component, cfg.measure).exit(code::SCHEMA)?;
    if filled > 0 {
        info!("imputed {filled} missing edge costs from the baseline fit");
    }
    Ok((model, ops))
}

fn candidate_pairs(slices: &[odflow::ingest::FlowSlice], cells: &[CellId], cfg: &RunConfig) -> Vec<(usize, usize)> {
    let mut pairs = if cfg.gup_only {
        gup_candidates(slices, cells)
    } else {
        let n = cells.len();
        (0..n).flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i))).collect()
    };
    if pairs.len() > cfg.max_pairs {
        warn!("{} candidate pairs; evaluating the first {} (max_pairs)", pairs.len(), cfg.max_pairs);
        pairs.truncate(cfg.max_pairs);
    }
    pairs
}

fn check_percentile(q: f64) -> Result<f64, Failure> {
    if (0.0..=100.0).contains(&q) {
        Ok(q)
    } else {
        Err(fail(code::USAGE, format!("percentile {q} outside [0, 100]")))
    }
}

pub fn effdist(cfg: &RunConfig) -> Result<(), Failure> {
    let data = Loaded::load(cfg)?;
    let (s, e) = data.window(cfg.window)?;
    let q = check_percentile(cfg.percentile.unwrap_or(99.0))?;
    let (model, ops) = model_and_ops(&data, cfg)?;
    let ids = &data.component.cells;
    let scope = match cfg.gup_scope {
        GupScope::Full => &data.slices[..],
        GupScope::Window => &data.slices[s..=e],
    };
    let pairs = candidate_pairs(scope, ids, cfg);
    let named: Vec<(CellId, CellId)> = pairs.iter().map(|&(j, i)| (ids[j].clone(), ids[i].clone())).collect();
    let gups = detect_gups(scope, &named);
    let window = &ops[s..=e];
    let evaluated = evaluate_window(window, &pairs, &gups, ids, Some(&model), cfg.measure).map_err(|err| Failure {
        code: path_code(&err),
        error: err.into(),
    })?;
    let mut kept: Vec<WindowedOD> = evaluated.into_iter().filter(|w| w.p_hit >= cfg.p_cut && w.d_eff.is_some()).collect();
    let mut values: Vec<f64> = kept.iter().filter_map(|w| w.d_eff).collect();
    values.sort_by(f64::total_cmp);
    let threshold = percentile_linear(&values, q)
        .ok_or_else(|| fail(code::EMPTY, format!("no candidate pair has P >= {}", cfg.p_cut)))?;
    let candidates = pairs.len();
    kept.retain(|w| w.d_eff.is_some_and(|d| d >= threshold));
    kept.sort_by(|x, y| {
        let (dx, dy) = (x.d_eff.unwrap_or(0.0), y.d_eff.unwrap_or(0.0));
        dy.total_cmp(&dx).then((x.origin, x.dest).cmp(&(y.origin, y.dest)))
    });
    // Report the window in absolute steps.
    let t0 = data.t0();
    for w in &mut kept {
        w.t1 = t0 + s;
        w.t2 = t0 + e;
    }

    let out = &cfg.out;
    write_windowed_csv(&kept, ids, store::create(out, "effdist.csv")?)?;
    store::write_json(out, "baseline_fit.json", &model_fit(&data, cfg)?)?;
    let points = scatter_points(&data.slices, data.cells()?, cfg.measure).exit(code::SCHEMA)?;
    write_scatter(&points, store::create(out, "baseline_scatter.csv")?)?;
    if cfg.top_k > 0 {
        let docs = kept
            .iter()
            .take(cfg.path_pairs)
            .map(|w| {
                decompose_paths(window, w.origin, w.dest, window.len(), cfg.top_k, cfg.measure, DecomposeOptions::default())
                    .map(|d| paths_document(&d, ids))
            })
            .collect::<Result<Vec<_>, _>>()?;
        store::write_json(out, "paths.json", &docs)?;
    }
    echo_config(out, cfg)?;
    println!(
        "percentile {q} threshold {threshold}; {} of {candidates} candidate pairs kept",
        kept.len()
    );
    Ok(())
}

fn model_fit(data: &Loaded, cfg: &RunConfig) -> Result<odflow::baseline::BaselineFit, Failure> {
    match data.fit {
        Some(f) => Ok(f),
        None => fit_baseline(&data.slices, data.cells()?, cfg.measure).exit(code::SCHEMA),
    }
}

/// Within-day window and the days whose window lies inside the cache.
fn daily_plan(data: &Loaded, cfg: &RunConfig) -> Result<(StepRange, Vec<usize>), Failure> {
    let spd = cfg.steps_per_day;
    if spd == 0 {
        return Err(fail(code::USAGE, "steps_per_day must be positive"));
    }
    let w = cfg.window.unwrap_or(StepRange([0, spd - 1]));
    if w.end() >= spd {
        return Err(fail(code::USAGE, format!("daily window {}..{} exceeds {spd} steps per day", w.start(), w.end())));
    }
    let (a, b) = data.component.t_range;
    let fits = |d: usize| d * spd + w.start() >= a && d * spd + w.end() <= b;
    let requested: Vec<usize> = match cfg.days {
        Some(r) => (r.start()..=r.end()).collect(),
        None => (0..=b / spd).collect(),
    };
    let days: Vec<usize> = requested
        .into_iter()
        .filter(|&d| {
            let ok = fits(d);
            if !ok && cfg.days.is_some() {
                warn!("day {d} is not fully covered by the cache; skipped");
            }
            ok
        })
        .collect();
    if days.is_empty() {
        return Err(fail(code::EMPTY, format!("no day has steps {}..{} inside the cache ({a}..{b})", w.start(), w.end())));
    }
    Ok((w, days))
}

pub fn rto(cfg: &RunConfig) -> Result<(), Failure> {
    let data = Loaded::load(cfg)?;
    let (w, days) = daily_plan(&data, cfg)?;
    let needs_costs = data.ops.iter().any(|o| !o.missing_costs(cfg.measure).is_empty());
    let ops = if needs_costs { model_and_ops(&data, cfg)?.1 } else { data.ops.clone() };
    let variant = match cfg.variant {
        RtoVariant::Home => "home",
        RtoVariant::Roaming => "roaming",
    };
    let mut csv_out = store::create(&cfg.out, "rto.csv")?;
    writeln!(csv_out, "day,variant,city_value_km,excluded_mass")?;
    for &day in &days {
        let first = day * cfg.steps_per_day + w.start() - data.t0();
        let window = &ops[first..first + w.len()];
        match city_rto(window, &data.slices[first], &data.component, w.len(), cfg.variant, cfg.measure) {
            Ok(c) => writeln!(csv_out, "{day},{variant},{},{}", c.value, c.excluded_mass)?,
            Err(PathError::ZeroWeight) => writeln!(csv_out, "{day},{variant},,")?,
            Err(PathError::NoDefinedOrigins) => writeln!(csv_out, "{day},{variant},,1")?,
            Err(err) => return Err(Failure { code: path_code(&err), error: err.into() }),
        }
    }
    csv_out.flush()?;
    echo_config(&cfg.out, cfg)?;
    println!("{} days written to {}", days.len(), cfg.out.join("rto.csv").display());
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let data = Loaded::load(cfg)?;
    let (w, days) = daily_plan(&data, cfg)?;
    let q = check_percentile(cfg.percentile.unwrap_or(99.0))?;
    let (model, ops) = model_and_ops(&data, cfg)?;
    let ids = &data.component.cells;
    let pairs = candidate_pairs(&data.slices, ids, cfg);
    let spec = SweepSpec {
        steps_per_day: cfg.steps_per_day,
        window_start: w.start(),
        window_len: w.len(),
        q,
        p_cut: cfg.p_cut,
        measure: cfg.measure,
    };
    let rows = time_sweep(&ops, &days, &spec, &pairs, ids, &model).map_err(|err| Failure {
        code: path_code(&err),
        error: err.into(),
    })?;
    write_sweep_csv(&rows, store::create(&cfg.out, "sweep.csv")?)?;
    echo_config(&cfg.out, cfg)?;
    println!("{} rows over {} days", rows.len(), days.len());
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DenseMatrix, Failure> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(store::open(path)?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.with_context(|| format!("{}", path.display())).exit(code::SCHEMA)?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().with_context(|| format!("{}: bad entry `{v}`", path.display())))
            .collect::<Result<Vec<f64>, _>>()
            .exit(code::SCHEMA)?;
        rows.push(row);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        return Err(fail(code::SCHEMA, format!("{}: matrix is not square", path.display())));
    }
    Ok(DenseMatrix::from_rows(&rows))
}

pub fn root(cfg: &RunConfig) -> Result<(), Failure> {
    let (m, cells) = match &cfg.root.matrix {
        Some(p) => (read_matrix(p)?, None),
        None => {
            let data = Loaded::load(cfg)?;
            let (s, e) = data.window(cfg.window)?;
            let a = elapse(data.component.len(), &data.ops[s..=e])?;
            (a.to_dense(), Some(data.component.cells.clone()))
        }
    };
    let opts = RootOptions { max_iter: cfg.root.max_iter, tol: cfg.root.tol, metric: cfg.root.metric };
    let r = approximate_stochastic_root(&m, cfg.root.order, &opts).map_err(|e| Failure {
        code: markov_code(&e),
        error: e.into(),
    })?;
    let out = &cfg.out;
    let mut w = store::create(out, "root.csv")?;
    let n = r.h.n();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| r.h.get(i, j).to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    store::write_json(
        out,
        "root.json",
        &json!({
            "experimental": r.experimental,
            "n": n,
            "order": cfg.root.order,
            "metric": cfg.root.metric,
            "residual": r.residual,
            "iterations": r.iterations,
            "converged": r.converged,
            "history": r.history,
            "cells": cells,
        }),
    )?;
    echo_config(out, cfg)?;
    println!("EXPERIMENTAL stochastic root: residual {} after {} iterations", r.residual, r.iterations);
    Ok(())
}

fn synth_code(e: &SynthError) -> u8 {
    match e {
        SynthError::NotPrimitive(_) => code::NOT_PRIMITIVE,
        SynthError::NonNormalizable { .. } => code::OTHER,
        _ => code::SCHEMA,
    }
}

pub fn synth(config: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            SynthConfig::from_toml(&text)
                .with_context(|| format!("{}", p.display()))
                .exit(code::SCHEMA)?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.map_or_else(|| PathBuf::from("synth"), Path::to_path_buf);
    let data = generate(&cfg).map_err(|e| Failure { code: synth_code(&e), error: e.into() })?;

    {
        let mut w = store::create(&dir, "flows.csv")?;
        write_flows(&data.output.slices, &mut w)?;
        w.flush()?;
    }
    data.network.cells.write_csv(store::create(&dir, "cells.csv")?)?;
    write_fixed_point(&data.network, &data.fixed_point, store::create(&dir, "fixed_point.csv")?)?;
    store::write_text(&dir, "synth_config.toml", &cfg.to_toml())?;
    let run = RunConfig {
        flows: Some("flows.csv".into()),
        cells: Some("cells.csv".into()),
        seed: Some(cfg.seed),
        steps_per_day: cfg.steps_per_day,
        ..RunConfig::default()
    };
    store::write_text(&dir, "ingest.toml", &run.to_toml())?;

    let k = &cfg.kernel;
    let am = potential_drop(&data.network, &data.daily, &data.fixed_point.v, k.morning[0]..k.morning[1]);
    let pm = potential_drop(&data.network, &data.daily, &data.fixed_point.v, k.evening[0]..k.evening[1]);
    let fp = &data.fixed_point;
    let records: usize = data.output.slices.iter().map(|s| s.records.len()).sum();
    store::write_json(
        &dir,
        "synth_summary.json",
        &json!({
            "seed": cfg.seed,
            "cells": data.network.len(),
            "edges": data.network.edges.iter().map(Vec::len).sum::<usize>(),
            "hubs": data.network.hubs.iter().filter(|&&h| h).count(),
            "steps": data.output.slices.len(),
            "records": records,
            "agents": cfg.simulation.n_agents,
            "fixed_point": {
                "residual_l1": fp.residual,
                "iterations": fp.iterations,
                "converged": fp.converged,
            },
            "potential_drop": { "morning": am, "evening": pm },
        }),
    )?;
    println!(
        "{} cells, {} steps, {records} OD records; fixed-point residual {:e}; written to {}",
        data.network.len(),
        data.output.slices.len(),
        fp.residual,
        dir.display()
    );
    Ok(())
}
