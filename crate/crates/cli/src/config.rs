//! Run configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use odflow::geo::CellId;
use odflow::ingest::IngestOptions;
use odflow::markov::{GapPolicy, Measure};
use odflow::paths::RtoVariant;
use odflow::root::RootMetric;
use serde::{Deserialize, Serialize};

/// Which strongly connected component an ingest keeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentSelect {
    Named(NamedComponent),
    /// The component containing this cell.
    ByCell { cell: CellId },
    /// Exactly these cells; they must form one component.
    Explicit { cells: Vec<CellId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedComponent {
    Largest,
}

impl Default for ComponentSelect {
    fn default() -> Self {
        ComponentSelect::Named(NamedComponent::Largest)
    }
}

impl FromStr for ComponentSelect {
    type Err = String;

    /// `largest`, `cell:ID` or `cells:A,B,C`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "largest" {
            return Ok(ComponentSelect::default());
        }
        let ids = |list: &str| -> Result<Vec<CellId>, String> {
            list.split(',').map(|c| CellId::new(c.trim()).map_err(|e| e.to_string())).collect()
        };
        if let Some(id) = s.strip_prefix("cell:") {
            return Ok(ComponentSelect::ByCell { cell: CellId::new(id).map_err(|e| e.to_string())? });
        }
        if let Some(list) = s.strip_prefix("cells:") {
            return Ok(ComponentSelect::Explicit { cells: ids(list)? });
        }
        Err(format!("expected `largest`, `cell:ID` or `cells:A,B,...`, got `{s}`"))
    }
}

/// Range of slices against which GUP status is decided.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GupScope {
    /// Every loaded step.
    #[default]
    Full,
    /// Only the analysis window.
    Window,
}

/// Inclusive step range written `START..END`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange(pub [usize; 2]);

impl StepRange {
    pub fn start(&self) -> usize {
        self.0[0]
    }

    pub fn end(&self) -> usize {
        self.0[1]
    }

    pub fn len(&self) -> usize {
        self.end() + 1 - self.start()
    }
}

impl FromStr for StepRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got `{s}`"))?;
        let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(format!("empty range {a}..{b}"));
        }
        Ok(StepRange([a, b]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootSection {
    /// Dense `M` as headerless CSV, one row per destination. Without it the
    /// elapsed operator of the analysis window is used.
    pub matrix: Option<PathBuf>,
    pub order: u32,
    pub metric: RootMetric,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RootSection {
    fn default() -> Self {
        RootSection { matrix: None, order: 2, metric: RootMetric::Frobenius, max_iter: 10_000, tol: 1e-10 }
    }
}

/// Everything a run depends on apart from the thread count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub flows: Option<PathBuf>,
    pub cells: Option<PathBuf>,
    /// Cache directory read by the analysis commands.
    pub cache: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub component: ComponentSelect,
    /// Steps kept at ingest (inclusive); all when absent.
    pub t_range: Option<StepRange>,
    pub gap_policy: GapPolicy,
    pub measure: Measure,
    /// Analysis window (inclusive absolute steps); the whole cache when absent.
    /// `rto` and `sweep` read it as steps within each day.
    pub window: Option<StepRange>,
    /// Percentile; 75 for `netflow`, 99 for `effdist` and `sweep` when absent.
    pub percentile: Option<f64>,
    pub p_cut: f64,
    pub gup_only: bool,
    pub gup_scope: GupScope,
    /// Cap on evaluated OD pairs.
    pub max_pairs: usize,
    /// Paths listed per decomposed pair; 0 disables decomposition.
    pub top_k: usize,
    /// Number of top pairs decomposed into paths.
    pub path_pairs: usize,
    pub variant: RtoVariant,
    pub steps_per_day: usize,
    /// Inclusive day indices; every complete day when absent.
    pub days: Option<StepRange>,
    pub root: RootSection,
    pub ingest: IngestOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            flows: None,
            cells: None,
            cache: PathBuf::from("cache"),
            out: PathBuf::from("out"),
            seed: None,
            component: ComponentSelect::default(),
            t_range: None,
            gap_policy: GapPolicy::default(),
            measure: Measure::default(),
            window: None,
            percentile: None,
            p_cut: 1e-6,
            gup_only: true,
            gup_scope: GupScope::default(),
            max_pairs: 200_000,
            top_k: 0,
            path_pairs: 10,
            variant: RtoVariant::Home,
            steps_per_day: 48,
            days: None,
            root: RootSection::default(),
            ingest: IngestOptions::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.flows.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.cells.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.root.matrix.as_mut() {
            rebase(p);
        }
        if text_has_key(&text, "cache") {
            rebase(&mut cfg.cache);
        }
        if text_has_key(&text, "out") {
            rebase(&mut cfg.out);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Copy whose paths are relative to `dir`, so that `load` of a file
    /// written there resolves them to the same locations.
    pub fn relative_to(&self, dir: &Path) -> std::io::Result<Self> {
        let base = normalize(&std::path::absolute(dir)?);
        let shift = |p: &mut PathBuf| -> std::io::Result<()> {
            let abs = normalize(&std::path::absolute(&*p)?);
            if let Some(rel) = pathdiff::diff_paths(&abs, &base) {
                *p = if rel.as_os_str().is_empty() { PathBuf::from(".") } else { rel };
            }
            Ok(())
        };
        let mut cfg = self.clone();
        for p in [cfg.flows.as_mut(), cfg.cells.as_mut(), cfg.root.matrix.as_mut()].into_iter().flatten() {
            shift(p)?;
        }
        shift(&mut cfg.cache)?;
        shift(&mut cfg.out)?;
        Ok(cfg)
    }
}

/// Lexically folds `.` and `..` in an absolute path.
fn normalize(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Whether `key` is set at the top level of a TOML document.
fn text_has_key(text: &str, key: &str) -> bool {
    text.parse::<toml::Table>().is_ok_and(|t| t.contains_key(key))
}
