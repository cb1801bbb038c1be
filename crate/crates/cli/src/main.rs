//! `odflow`: ingest OD flow tables, compute time-elapsed measures, generate synthetic data.

mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ComponentSelect, GupScope, RunConfig, StepRange};
use odflow::markov::{GapPolicy, Measure};
use odflow::paths::RtoVariant;
use odflow::root::RootMetric;

/// Exit codes.
pub mod code {
    pub const OTHER: u8 = 1;
    pub const SCHEMA: u8 = 2;
    pub const EMPTY_COMPONENT: u8 = 3;
    pub const EMPTY: u8 = 4;
    pub const NOT_PRIMITIVE: u8 = 5;
    pub const USAGE: u8 = 64;
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: code::OTHER, error: e.into() }
    }
}

pub fn fail(code: u8, msg: impl std::fmt::Display) -> Failure {
    Failure { code, error: anyhow::anyhow!("{msg}") }
}

pub trait ExitContext<T> {
    fn exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "odflow", version, about = "Time-elapsed mobility measures from aggregated OD flows")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Never affects results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a flow table, pick a component, cache its step operators.
    Ingest(IngestArgs),
    /// Net trip counts over a window, top percentile as CSV and GeoJSON.
    Netflow(AnalysisArgs),
    /// Windowed first-passage distances and effective distances.
    Effdist(EffdistArgs),
    /// Daily city-average return-to-origin distance.
    Rto(DailyArgs),
    /// Per-day top-percentile effective distances.
    Sweep(DailyArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Approximate stochastic p-th root (experimental).
    Root(RootArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (TOML). For `synth`, the generator configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct IngestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Flow table CSV.
    flows: Option<PathBuf>,
    /// Cells manifest `cell_id,lat,lon`.
    #[arg(long)]
    cells: Option<PathBuf>,
    /// `largest`, `cell:ID` or `cells:A,B,...`.
    #[arg(long)]
    component: Option<ComponentSelect>,
    /// Keep only steps START..END (inclusive).
    #[arg(long)]
    t_range: Option<StepRange>,
    #[arg(long, value_enum)]
    gap_policy: Option<GapArg>,
}

#[derive(Args, Clone)]
struct AnalysisArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cache directory written by `ingest`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Override the cached cells manifest.
    #[arg(long)]
    cells: Option<PathBuf>,
    /// Analysis window START..END, inclusive absolute steps.
    #[arg(long)]
    window: Option<StepRange>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long, value_enum)]
    measure: Option<MeasureArg>,
}

#[derive(Args, Clone)]
struct EffdistArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long)]
    p_cut: Option<f64>,
    /// Restrict candidates to pairs without a direct transition (default).
    #[arg(long, conflicts_with = "all_pairs")]
    gup_only: bool,
    /// Evaluate every ordered pair instead of GUPs only.
    #[arg(long)]
    all_pairs: bool,
    #[arg(long, value_enum)]
    gup_scope: Option<GupScope>,
    #[arg(long)]
    max_pairs: Option<usize>,
    /// Paths per decomposed pair (0 = no decomposition).
    #[arg(long)]
    top_k: Option<usize>,
    /// How many of the top pairs to decompose.
    #[arg(long)]
    path_pairs: Option<usize>,
}

#[derive(Args, Clone)]
struct DailyArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Day indices START..END, inclusive.
    #[arg(long)]
    days: Option<StepRange>,
    #[arg(long)]
    steps_per_day: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    p_cut: Option<f64>,
    #[arg(long, conflicts_with = "all_pairs")]
    gup_only: bool,
    #[arg(long)]
    all_pairs: bool,
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct RootArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Dense matrix CSV (headerless, row = destination) instead of the cache.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Root order p.
    #[arg(long)]
    order: Option<u32>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GapArg {
    SelfLoop,
    Uniform,
    Fail,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Distance,
    Duration,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Home,
    Roaming,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Frobenius,
    Kl,
}

fn base_config(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).exit(code::SCHEMA)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn analysis_config(a: &AnalysisArgs) -> Result<RunConfig, Failure> {
    let mut cfg = base_config(&a.common)?;
    if let Some(c) = &a.cache {
        cfg.cache = c.clone();
    }
    if let Some(c) = &a.cells {
        cfg.cells = Some(c.clone());
    }
    if a.window.is_some() {
        cfg.window = a.window;
    }
    if a.percentile.is_some() {
        cfg.percentile = a.percentile;
    }
    if let Some(m) = a.measure {
        cfg.measure = match m {
            MeasureArg::Distance => Measure::Distance,
            MeasureArg::Duration => Measure::Duration,
        };
    }
    Ok(cfg)
}

fn pair_overrides(cfg: &mut RunConfig, p_cut: Option<f64>, gup_only: bool, all_pairs: bool, max_pairs: Option<usize>) {
    if let Some(p) = p_cut {
        cfg.p_cut = p;
    }
    if gup_only {
        cfg.gup_only = true;
    }
    if all_pairs {
        cfg.gup_only = false;
    }
    if let Some(m) = max_pairs {
        cfg.max_pairs = m;
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest(a) => {
            let mut cfg = base_config(&a.common)?;
            if a.flows.is_some() {
                cfg.flows = a.flows;
            }
            if a.cells.is_some() {
                cfg.cells = a.cells;
            }
            if let Some(c) = a.component {
                cfg.component = c;
            }
            if a.t_range.is_some() {
                cfg.t_range = a.t_range;
            }
            if let Some(g) = a.gap_policy {
                cfg.gap_policy = match g {
                    GapArg::SelfLoop => GapPolicy::SelfLoop,
                    GapArg::Uniform => GapPolicy::Uniform,
                    GapArg::Fail => GapPolicy::Fail,
                };
            }
            // The ingest output is the cache the analysis commands read.
            if let Some(o) = &a.common.out {
                cfg.cache = o.clone();
            }
            commands::ingest(&cfg)
        }
        Command::Netflow(a) => commands::netflow(&analysis_config(&a)?),
        Command::Effdist(a) => {
            let mut cfg = analysis_config(&a.analysis)?;
            pair_overrides(&mut cfg, a.p_cut, a.gup_only, a.all_pairs, a.max_pairs);
            if let Some(s) = a.gup_scope {
                cfg.gup_scope = s;
            }
            if let Some(k) = a.top_k {
                cfg.top_k = k;
            }
            if let Some(k) = a.path_pairs {
                cfg.path_pairs = k;
            }
            commands::effdist(&cfg)
        }
        Command::Rto(a) => commands::rto(&daily_config(&a)?),
        Command::Sweep(a) => commands::sweep(&daily_config(&a)?),
        Command::Synth(a) => commands::synth(a.common.config.as_deref(), a.common.out.as_deref(), a.seed),
        Command::Root(a) => {
            let mut cfg = analysis_config(&a.analysis)?;
            if a.matrix.is_some() {
                cfg.root.matrix = a.matrix;
            }
            if let Some(p) = a.order {
                cfg.root.order = p;
            }
            if let Some(m) = a.metric {
                cfg.root.metric = match m {
                    MetricArg::Frobenius => RootMetric::Frobenius,
                    MetricArg::Kl => RootMetric::KullbackLeibler,
                };
            }
            if let Some(m) = a.max_iter {
                cfg.root.max_iter = m;
            }
            commands::root(&cfg)
        }
    }
}

fn daily_config(a: &DailyArgs) -> Result<RunConfig, Failure> {
    let mut cfg = analysis_config(&a.analysis)?;
    pair_overrides(&mut cfg, a.p_cut, a.gup_only, a.all_pairs, a.max_pairs);
    if a.days.is_some() {
        cfg.days = a.days;
    }
    if let Some(s) = a.steps_per_day {
        cfg.steps_per_day = s;
    }
    if let Some(v) = a.variant {
        cfg.variant = match v {
            VariantArg::Home => RtoVariant::Home,
            VariantArg::Roaming => RtoVariant::Roaming,
        };
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ODFLOW_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(code::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(code::OTHER);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
