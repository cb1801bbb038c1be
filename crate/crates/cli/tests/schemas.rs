//! Every JSON and CSV output checked against the schemas in docs/schemas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn run(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_odflow")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "odflow {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn check_json(file: &Path, schema: &str) {
    let schema = load(&schema_dir().join(schema));
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let doc = load(file);
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{}: {errors:#?}", file.display());
}

fn check_csv(file: &Path, layouts: &Value) {
    let name = file.file_name().unwrap().to_str().unwrap();
    let cols = layouts["files"][name].as_array().unwrap_or_else(|| panic!("no layout for {name}"));
    let mut reader = csv::Reader::from_path(file).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_owned).collect();
    let want: Vec<&str> = cols.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(header, want, "{name} header");
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        for (v, c) in rec.iter().zip(cols) {
            if v.is_empty() {
                assert_eq!(c["optional"], true, "{name}: empty {}", c["name"]);
                continue;
            }
            let ok = match c["type"].as_str().unwrap() {
                "integer" => v.parse::<u64>().is_ok(),
                "number" => v.parse::<f64>().is_ok_and(f64::is_finite),
                "boolean" => v == "true" || v == "false",
                _ => true,
            };
            assert!(ok, "{name}: `{v}` is not a valid {}", c["name"]);
        }
        rows += 1;
    }
    assert!(rows > 0, "{name} is empty");
}

#[test]
fn outputs_match_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth_toy.toml");
    run(dir, &["synth", "--config", toy.to_str().unwrap(), "--out", "s"]);
    run(dir, &["ingest", "--config", "s/ingest.toml", "--out", "cache"]);
    run(dir, &["netflow", "--cache", "cache", "--out", "nf", "--window", "12..23"]);
    run(dir, &["effdist", "--cache", "cache", "--out", "eff", "--window", "12..23", "--percentile", "50", "--top-k", "3"]);
    run(dir, &["rto", "--cache", "cache", "--out", "rto", "--variant", "roaming"]);
    run(dir, &["sweep", "--cache", "cache", "--out", "sweep", "--window", "12..23"]);
    run(dir, &["root", "--cache", "cache", "--out", "root", "--window", "12..13", "--max-iter", "50"]);

    for (file, schema) in [
        ("s/synth_summary.json", "synth_summary.schema.json"),
        ("cache/summary.json", "summary.schema.json"),
        ("cache/component.json", "component.schema.json"),
        ("nf/netflow.geojson", "netflow.geojson.schema.json"),
        ("eff/baseline_fit.json", "baseline_fit.schema.json"),
        ("eff/paths.json", "paths.schema.json"),
        ("root/root.json", "root.schema.json"),
    ] {
        check_json(&dir.join(file), schema);
    }
    let mut tampered = load(&dir.join("cache/summary.json"));
    tampered["extra"] = Value::from(1);
    let strict = jsonschema::validator_for(&load(&schema_dir().join("summary.schema.json"))).unwrap();
    assert!(!strict.is_valid(&tampered));

    let layouts = load(&schema_dir().join("csv.schema.json"));
    for file in [
        "s/flows.csv",
        "s/cells.csv",
        "s/fixed_point.csv",
        "cache/flows.csv",
        "cache/cells.csv",
        "nf/netflow.csv",
        "eff/effdist.csv",
        "eff/baseline_scatter.csv",
        "rto/rto.csv",
        "sweep/sweep.csv",
    ] {
        check_csv(&dir.join(file), &layouts);
    }
}
