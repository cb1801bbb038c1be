//! Cache directory layout and output helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use odflow::baseline::BaselineFit;
use odflow::cache::OperatorCache;
use odflow::geo::CellTable;
use odflow::ingest::{parse_flows, ComponentSpec, FlowSlice, IngestOptions};
use odflow::markov::StepOperator;
use serde::Serialize;

use crate::config::{RunConfig, StepRange};
use crate::{code, fail, ExitContext, Failure};

pub const OPERATORS: &str = "operators.odf";
pub const COMPONENT: &str = "component.json";
pub const FLOWS: &str = "flows.csv";
pub const CELLS: &str = "cells.csv";
pub const SUMMARY: &str = "summary.json";
pub const BASELINE_FIT: &str = "baseline_fit.json";
pub const CONFIG_ECHO: &str = "config.toml";

pub fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Contents of an ingest cache, with slices aligned to the operators.
pub struct Loaded {
    pub component: ComponentSpec,
    pub ops: Vec<StepOperator>,
    pub slices: Vec<FlowSlice>,
    pub cells: Option<CellTable>,
    pub fit: Option<BaselineFit>,
}

impl Loaded {
    pub fn load(cfg: &RunConfig) -> Result<Self, Failure> {
        let dir = &cfg.cache;
        let cache = OperatorCache::read(open(&dir.join(OPERATORS))?)
            .with_context(|| format!("reading {}", dir.join(OPERATORS).display()))?;
        let component: ComponentSpec = serde_json::from_reader(open(&dir.join(COMPONENT))?)
            .with_context(|| format!("reading {}", dir.join(COMPONENT).display()))?;
        let parsed = parse_flows(open(&dir.join(FLOWS))?, &IngestOptions::default()).exit(code::SCHEMA)?;
        let (a, b) = component.t_range;
        let slices: Vec<FlowSlice> =
            (a..=b).map(|t| parsed.slices.get(t).cloned().unwrap_or_else(|| FlowSlice::empty(t))).collect();
        if cache.cells != component.cells || cache.ops.len() != slices.len() || cache.ops.first().map(StepOperator::t) != Some(a) {
            return Err(fail(code::OTHER, format!("cache in {} is inconsistent", dir.display())));
        }
        let cells_path = cfg.cells.clone().unwrap_or_else(|| dir.join(CELLS));
        let cells = if cells_path.exists() {
            Some(CellTable::read_csv(open(&cells_path)?).exit(code::SCHEMA)?)
        } else {
            None
        };
        let fit_path = dir.join(BASELINE_FIT);
        let fit = if fit_path.exists() {
            Some(serde_json::from_reader(open(&fit_path)?).exit(code::SCHEMA)?)
        } else {
            None
        };
        Ok(Loaded { component, ops: cache.ops, slices, cells, fit })
    }

    pub fn t0(&self) -> usize {
        self.component.t_range.0
    }

    /// Operator indices `(first, last)` of an absolute inclusive window.
    pub fn window(&self, w: Option<StepRange>) -> Result<(usize, usize), Failure> {
        let (a, b) = self.component.t_range;
        let w = w.unwrap_or(StepRange([a, b]));
        if w.start() < a || w.end() > b {
            return Err(fail(
                code::EMPTY,
                format!("window {}..{} lies outside the cached steps {a}..{b}", w.start(), w.end()),
            ));
        }
        Ok((w.start() - a, w.end() - a))
    }

    pub fn cells(&self) -> Result<&CellTable, Failure> {
        self.cells
            .as_ref()
            .ok_or_else(|| fail(code::SCHEMA, "no cell centroids: pass --cells or ingest with a manifest"))
    }
}
