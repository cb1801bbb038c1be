//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use odflow::baseline::{fit_points, BaselineModel, ScatterPoint};
use odflow::geo::{CellTable, LatLon};
use odflow::ingest::{ComponentSpec, FlowSlice, Summary};
use odflow::markov::{build_step_operator, build_step_operators, elapse, ElapsedOperator, GapPolicy, Measure};
use odflow::netflow::{initial_distribution, net_flows};
use odflow::paths::{evaluate_window, first_passage, propagate, rto, windowed_distance, RtoVariant};
use odflow::root::{approximate_stochastic_root, RootOptions};
use odflow::synth::{
    build_network, compile_kernels, cyclic_product, expected_occupancy, generate, periodic_fixed_point,
    potential_drop, FixedPointOptions, SynthConfig,
};
use odflow::testkit::{
    brute_first_passage, brute_net_flows, cell_ids, normal_equation_fit, random_dense_stochastic, random_operator,
    random_ops, random_slice,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn first_passage_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(2..=6);
        let t = rng.random_range(1..=5);
        let density = rng.random_range(0.2..0.9);
        let ops = random_ops(&mut rng, n, t, density);
        let (j, i) = (rng.random_range(0..n), rng.random_range(0..n));
        for measure in [Measure::Distance, Measure::Duration] {
            let trace = propagate(&ops, j, i, t, measure).map_err(|e| e.to_string())?;
            let (pi, x) = brute_first_passage(&ops, j, i, t, measure);
            for s in 0..t {
                let dp = (trace.pi[s] - pi[s]).abs();
                let dx = match (trace.x[s], x[s]) {
                    (Some(a), Some(b)) => (a - b).abs(),
                    (None, None) => 0.0,
                    other => return Err(format!("case {case} step {}: definedness differs {other:?}", s + 1)),
                };
                worst = worst.max(dp).max(dx);
                check(dp <= 1e-12 && dx <= 1e-12, || format!("case {case} step {}: |Δπ| {dp:e}, |Δx| {dx:e}", s + 1))?;
            }
        }
    }
    Ok(format!("200 instances, max abs error {worst:.1e}"))
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let t = rng.random_range(1..=50);
        let density = rng.random_range(0.02..0.5);
        let ops = random_ops(&mut rng, n, t, density);
        let (j, i) = (rng.random_range(0..n), rng.random_range(0..n));
        let trace = propagate(&ops, j, i, t, Measure::Distance).map_err(|e| e.to_string())?;
        let mut absorbed = 0.0;
        for s in 0..t {
            absorbed += trace.pi[s] + trace.returned[s];
            let err = (trace.live[s] + absorbed - 1.0).abs();
            worst = worst.max(err);
            check(err <= 1e-10, || format!("case {case} step {}: mass error {err:e}", s + 1))?;
        }
    }
    Ok(format!("100 instances, max mass error {worst:.1e}"))
}

fn net_flow_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..=6);
        let t = rng.random_range(1..=4);
        let cells = cell_ids(n);
        let comp = ComponentSpec { cells: cells.clone(), t_range: (0, t - 1) };
        let first = random_slice(&mut rng, 0, &cells, 0.6);
        if first.total_count() == 0.0 {
            continue;
        }
        let mut ops = vec![build_step_operator(&first, &comp, GapPolicy::SelfLoop).map_err(|e| e.to_string())?];
        ops.extend(random_ops(&mut rng, n, t, 0.5).into_iter().skip(1));
        let init = initial_distribution(&first, &comp).map_err(|e| e.to_string())?;
        let a = elapse(n, &ops).map_err(|e| e.to_string())?;
        let res = net_flows(&a, &init, &comp).map_err(|e| e.to_string())?;
        let brute = brute_net_flows(&ops, &init.n_by_origin);
        let reach = odflow::testkit::dense_elapsed(&ops);
        for i in 0..n {
            for j in 0..n {
                let want = brute.get(i, j);
                let got = res.value(i, j);
                // Relative to the larger of the net value and the gross flows it cancels.
                let gross = reach.get(i, j) * init.n_by_origin[j] + reach.get(j, i) * init.n_by_origin[i];
                let scale = want.abs().max(gross);
                let rel = if scale > 0.0 { (got - want).abs() / scale } else { (got - want).abs() };
                worst = worst.max(rel);
                check(rel <= 1e-9, || format!("instance {done} ({i},{j}): {got} vs {want}"))?;
                check(got == -res.value(j, i), || format!("instance {done} ({i},{j}): antisymmetry broken"))?;
            }
        }
        done += 1;
    }
    Ok(format!("100 instances, max relative error {worst:.1e}, antisymmetry exact"))
}

fn stochasticity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_m, mut worst_a): (f64, f64) = (0.0, 0.0);
    for (chain, n) in [100usize, 37, 8].into_iter().enumerate() {
        let mut a = ElapsedOperator::identity(n);
        for t in 0..10_000 {
            let density = if n > 50 { 0.03 } else { 0.2 };
            let op = random_operator(&mut rng, t, n, density);
            let em = op.matrix().max_col_sum_error();
            worst_m = worst_m.max(em);
            check(em <= 1e-12, || format!("chain {chain} step {t}: M column error {em:e}"))?;
            a.apply(&op).map_err(|e| e.to_string())?;
            let ea = a.max_col_sum_error();
            worst_a = worst_a.max(ea);
            check(ea <= 1e-10, || format!("chain {chain} step {t}: A column error {ea:e}"))?;
        }
    }
    Ok(format!("3 chains of 10^4 steps (N = 100, 37, 8); max M error {worst_m:.1e}, max A error {worst_a:.1e}"))
}

fn fixed_point() -> Outcome {
    let cfg = SynthConfig::default();
    let data = generate(&cfg).map_err(|e| e.to_string())?;
    let fp = &data.fixed_point;
    let pv = cyclic_product(&data.daily).mul_vec(&fp.v);
    let l1: f64 = pv.iter().zip(&fp.v).map(|(a, b)| (a - b).abs()).sum();
    check(l1 <= 1e-9, || format!("‖Pv − v‖₁ = {l1:e}"))?;
    let agents = cfg.simulation.n_agents;
    check(agents == 120_000 && cfg.simulation.n_days == 2, || "default config changed".into())?;
    let steps = cfg.steps_per_day * cfg.simulation.n_days;
    let expected = expected_occupancy(&data.daily, &fp.v, steps);
    check(data.output.occupancy.len() == steps + 1, || "occupancy length".into())?;
    let n = agents as f64;
    let mut worst: f64 = 0.0;
    for (t, (occ, p)) in data.output.occupancy.iter().zip(&expected).enumerate() {
        check(occ.iter().sum::<u64>() == agents as u64, || format!("step {t}: agent count changed"))?;
        for (k, (&o, &pk)) in occ.iter().zip(p).enumerate() {
            let sigma = (n * pk * (1.0 - pk)).sqrt();
            let z = (o as f64 - n * pk).abs() / sigma;
            worst = worst.max(z);
            check(z <= 5.0, || format!("step {t} cell {k}: {o} vs {:.1} ({z:.2}σ)", n * pk))?;
        }
    }
    Ok(format!("residual {l1:.1e}; max occupancy deviation {worst:.2}σ over {} steps", steps + 1))
}

fn am_pm_reversal() -> Outcome {
    let cfg = SynthConfig::default();
    let net = build_network(&cfg).map_err(|e| e.to_string())?;
    let ops = compile_kernels(&net, &cfg).map_err(|e| e.to_string())?;
    let fp = periodic_fixed_point(&ops, &FixedPointOptions::default()).map_err(|e| e.to_string())?;
    let k = &cfg.kernel;
    let am = potential_drop(&net, &ops, &fp.v, k.morning[0]..k.morning[1]);
    let pm = potential_drop(&net, &ops, &fp.v, k.evening[0]..k.evening[1]);
    check(am > 0.0 && pm < 0.0, || format!("morning {am}, evening {pm}"))?;
    Ok(format!("morning drop {am:.4}, evening drop {pm:.4}"))
}

fn single_step_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pairs = 0;
    let mut origins = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=8);
        let cells = cell_ids(n);
        let comp = ComponentSpec { cells: cells.clone(), t_range: (0, 3) };
        // Fixtures derived from flow slices as well as raw random operators.
        let ops = if case % 2 == 0 {
            let slices: Vec<FlowSlice> = (0..4).map(|t| random_slice(&mut rng, t, &cells, 0.5)).collect();
            build_step_operators(&slices, &comp, GapPolicy::SelfLoop).map_err(|e| e.to_string())?
        } else {
            random_ops(&mut rng, n, 4, 0.5)
        };
        for j in 0..n {
            for i in 0..n {
                let m = ops[0].prob(i, j);
                let trace = first_passage(&ops, j, i, ops.len(), Measure::Distance).map_err(|e| e.to_string())?;
                let w = windowed_distance(&trace, 1, 1).map_err(|e| e.to_string())?;
                check(w.p_hit == m, || format!("case {case} {j}->{i}: P {} vs {m}", w.p_hit))?;
                let d1 = if m > 0.0 { ops[0].cost(Measure::Distance, i, j) } else { None };
                check(w.x_bar == d1, || format!("case {case} {j}->{i}: x̄ {:?} vs d¹ {d1:?}", w.x_bar))?;
                pairs += 1;
            }
            let home = rto(&ops, j, ops.len(), RtoVariant::Home, Measure::Distance).map_err(|e| e.to_string())?;
            let djj = if ops[0].prob(j, j) > 0.0 { ops[0].cost(Measure::Distance, j, j) } else { None };
            check(home.x_bar == djj, || format!("case {case} origin {j}: home {:?} vs d¹ {djj:?}", home.x_bar))?;
            origins += 1;
        }
    }
    Ok(format!("{pairs} one-step windows and {origins} home RTO values equal d¹ exactly"))
}

fn scaled(slices: &[FlowSlice], c: f64) -> Vec<FlowSlice> {
    let s = |x: &Summary| Summary { mean: x.mean.map(|v| v * c), median: x.median.map(|v| v * c), std: x.std.map(|v| v * c) };
    slices
        .iter()
        .map(|sl| {
            let mut sl = sl.clone();
            for r in &mut sl.records {
                r.dist = s(&r.dist);
            }
            sl
        })
        .collect()
}

fn regression_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst_fit: f64 = 0.0;
    for case in 0..50 {
        let k = rng.random_range(3..=10);
        let pts: Vec<ScatterPoint> = (0..k)
            .map(|_| ScatterPoint {
                geo_km: rng.random_range(0.0..50.0),
                median_km: rng.random_range(0.0..80.0),
                weight: rng.random_range(0.5..100.0),
            })
            .collect();
        let fit = fit_points(&pts).map_err(|e| e.to_string())?;
        let (slope, intercept) = normal_equation_fit(&pts);
        let e = rel(fit.slope, slope).max(rel(fit.intercept, intercept));
        worst_fit = worst_fit.max(e);
        check(e <= 1e-10, || format!("case {case}: fit ({}, {}) vs ({slope}, {intercept})", fit.slope, fit.intercept))?;
    }

    // Rescaling every reported distance by c leaves D_eff unchanged.
    let mut worst_inv: f64 = 0.0;
    let mut compared = 0;
    for case in 0..20 {
        let n = rng.random_range(3..=7);
        let ids = cell_ids(n);
        let mut cells = CellTable::new();
        for id in &ids {
            let at = LatLon::new(19.4 + rng.random_range(-0.1..0.1), -99.1 + rng.random_range(-0.1..0.1));
            cells.insert(id.clone(), at).map_err(|e| e.to_string())?;
        }
        let comp = ComponentSpec { cells: ids.clone(), t_range: (0, 3) };
        let slices: Vec<FlowSlice> = (0..4).map(|t| random_slice(&mut rng, t, &ids, 0.5)).collect();
        let c = rng.random_range(0.1..10.0);
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i))).collect();
        let eval = |slices: &[FlowSlice]| -> Result<Vec<Option<f64>>, String> {
            let model = BaselineModel::new(slices, &cells, Measure::Distance).map_err(|e| e.to_string())?;
            let mut ops = build_step_operators(slices, &comp, GapPolicy::SelfLoop).map_err(|e| e.to_string())?;
            model.impute_costs(&mut ops, &comp, Measure::Distance).map_err(|e| e.to_string())?;
            let w = evaluate_window(&ops, &pairs, &[], &ids, Some(&model), Measure::Distance).map_err(|e| e.to_string())?;
            Ok(w.into_iter().map(|w| w.d_eff).collect())
        };
        let (base, other) = (eval(&slices)?, eval(&scaled(&slices, c))?);
        for (k, (a, b)) in base.iter().zip(&other).enumerate() {
            match (a, b) {
                (Some(a), Some(b)) => {
                    let e = (a - b).abs() / a.abs().max(1.0);
                    worst_inv = worst_inv.max(e);
                    check(e <= 1e-12, || format!("case {case} pair {k}: D_eff {a} vs {b} at c = {c}"))?;
                    compared += 1;
                }
                (None, None) => {}
                _ => return Err(format!("case {case} pair {k}: definedness changed under rescaling")),
            }
        }
    }
    Ok(format!("50 fits, max rel error {worst_fit:.1e}; {compared} D_eff values invariant within {worst_inv:.1e}"))
}

fn root_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(2..=5);
        let p = [2, 3, 4][case % 3];
        let h = random_dense_stochastic(&mut rng, n);
        let m = h.pow(p);
        let r = approximate_stochastic_root(&m, p, &RootOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(r.residual);
        check(r.iterations <= 10_000, || format!("case {case}: {} iterations", r.iterations))?;
        check(r.residual <= 1e-5, || format!("case {case}: n={n} p={p} residual {:e}", r.residual))?;
        check(r.h.is_column_stochastic(1e-12), || format!("case {case}: root not stochastic"))?;
    }
    Ok(format!("20 roots, max Frobenius residual {worst:.1e}"))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_odflow"))
        .args(args)
        .current_dir(dir)
        .env("ODFLOW_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("`odflow {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn pipeline(threads: Option<&str>) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let with_threads = |args: &[&'static str]| -> Vec<&str> {
        let mut v: Vec<&str> = threads.map(|t| vec!["--threads", t]).unwrap_or_default();
        v.extend_from_slice(args);
        v
    };
    run_cli(dir, &with_threads(&["synth", "--seed", "7", "--out", "synth"]))?;
    run_cli(dir, &with_threads(&["ingest", "--config", "synth/ingest.toml", "--out", "cache"]))?;
    run_cli(
        dir,
        &with_threads(&["effdist", "--cache", "cache", "--out", "eff", "--window", "12..23", "--top-k", "2", "--path-pairs", "3"]),
    )?;
    snapshot(dir)
}

fn end_to_end_determinism() -> Outcome {
    let first = pipeline(None)?;
    let second = pipeline(None)?;
    let one = pipeline(Some("1"))?;
    let eight = pipeline(Some("8"))?;
    for name in ["synth/flows.csv", "cache/operators.odf", "eff/effdist.csv", "eff/paths.json"] {
        check(first.contains_key(name), || format!("{name} was not written"))?;
    }
    for (label, other) in [("rerun", &second), ("--threads 1", &one), ("--threads 8", &eight)] {
        check(other.keys().eq(first.keys()), || format!("{label}: different file set"))?;
        for (name, bytes) in &first {
            check(&other[name] == bytes, || format!("{label}: {name} differs"))?;
        }
    }
    let bytes: usize = first.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) identical across reruns and thread counts", first.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("1 first-passage oracle", Duration::from_secs(10), first_passage_oracle),
        ("2 conservation", Duration::from_secs(30), conservation),
        ("3 net-flow oracle", Duration::from_secs(10), net_flow_oracle),
        ("4 stochasticity", Duration::from_secs(60), stochasticity),
        ("5 fixed point and occupancy", Duration::from_secs(300), fixed_point),
        ("6 AM/PM reversal", Duration::from_secs(60), am_pm_reversal),
        ("7 single-step reductions", Duration::MAX, single_step_reductions),
        ("8 regression oracle", Duration::MAX, regression_oracle),
        ("9 stochastic-root recovery", Duration::from_secs(120), root_recovery),
        ("10 end-to-end determinism", Duration::MAX, end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > limit => Err(format!("{msg}; took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{took:.2?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{took:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
