//! Network-driven synthetic OD generator.
//!
//! A hex lattice with hub cells, hub-to-hub metro edges and a center set
//! carries a daily-periodic gravity-like kernel. The midnight distribution is
//! the fixed point of the daily product; agents drawn from it are stepped
//! through the kernels and their moves aggregated into flow slices.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use chrono::{NaiveDate, NaiveTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CellId, CellTable, GeoError, LatLon, EARTH_RADIUS_KM};
use crate::markov::StepOperator;

mod fixed_point;
mod kernel;
mod simulate;

pub use fixed_point::{cyclic_product, periodic_fixed_point, FixedPoint, FixedPointOptions};
pub use kernel::{compile_kernels, potential_drop, step_phase, Phase};
pub use simulate::{expected_occupancy, simulate_and_aggregate, SimulationOutput};

/// Axial hex coordinate `[q, r]`.
pub type Axial = [i32; 2];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("network is disconnected; unreachable cells: {}", .0.join(" "))]
    Disconnected(Vec<String>),
    #[error("{role} cell {q},{r} is not on the lattice")]
    MissingCell { role: &'static str, q: i32, r: i32 },
    #[error("metro edge {0:?} -> {1:?} does not join two hubs")]
    MetroNotHub(Axial, Axial),
    #[error("lattice is empty")]
    Empty,
    #[error("column {cell} at step {t} has no admissible out-edge")]
    NonNormalizable { cell: String, t: usize },
    #[error("daily product is not primitive within {0} powers; lower stay probabilities or add edges so every cell can reach every other")]
    NotPrimitive(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    /// Cells with hex distance at most `radius` from the origin.
    pub radius: u32,
    /// Centroid spacing between neighbouring cells, km.
    pub spacing_km: f64,
    /// Centroid of cell `[0, 0]`.
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Lattice cells left out of the network.
    pub excluded: Vec<Axial>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { radius: 5, spacing_km: 6.4, origin_lat: 33.75, origin_lon: -84.39, excluded: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Gravity exponent on potential differences.
    pub beta: f64,
    /// Stay probability outside the morning-to-evening span.
    pub stay_night: f64,
    /// Stay probability between the start of the morning and the end of the evening window.
    pub stay_day: f64,
    pub activity_base: f64,
    /// Activity multiplier on hub cells.
    pub activity_hub: f64,
    /// Activity multiplier on center cells.
    pub activity_center: f64,
    /// Half-open step windows within the day.
    pub morning: [usize; 2],
    pub evening: [usize; 2],
    /// Bias sign and strength; positive pulls toward the center.
    pub morning_bias: f64,
    pub evening_bias: f64,
    pub metro_boost_peak: f64,
    pub metro_boost_offpeak: f64,
    /// Self-loop trip length; defaults to a third of the cell spacing.
    pub intra_cell_km: Option<f64>,
    pub street_speed_kmh: f64,
    pub metro_speed_kmh: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            beta: 1.0,
            stay_night: 0.95,
            stay_day: 0.75,
            activity_base: 1.0,
            activity_hub: 2.5,
            activity_center: 2.0,
            morning: [12, 24],
            evening: [34, 46],
            morning_bias: 1.0,
            evening_bias: -0.6,
            metro_boost_peak: 4.0,
            metro_boost_offpeak: 1.5,
            intra_cell_km: None,
            street_speed_kmh: 25.0,
            metro_speed_kmh: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_agents: usize,
    pub n_days: usize,
    /// Agents per random substream.
    pub chunk_size: usize,
    /// Uniform ±20% jitter on reported trip lengths.
    pub jitter: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { n_agents: 120_000, n_days: 2, chunk_size: 2048, jitter: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub steps_per_day: usize,
    pub interval_minutes: u32,
    /// Cosmetic calendar label for the first step.
    pub start_date: String,
    pub lattice: LatticeConfig,
    pub hubs: Vec<Axial>,
    /// Hub-to-hub pairs; each adds edges in both directions.
    pub metro: Vec<[Axial; 2]>,
    pub center: Vec<Axial>,
    pub kernel: KernelConfig,
    pub simulation: SimulationConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let ring: Vec<Axial> = vec![[3, 0], [0, 3], [-3, 3], [-3, 0], [0, -3], [3, -3]];
        let mut hubs = vec![[0, 0]];
        hubs.extend(&ring);
        let mut metro: Vec<[Axial; 2]> = ring.iter().map(|&h| [[0, 0], h]).collect();
        metro.push([[3, 0], [0, 3]]);
        metro.push([[-3, 0], [0, -3]]);
        SynthConfig {
            seed: 20190101,
            steps_per_day: 48,
            interval_minutes: 30,
            start_date: "2019-01-01".into(),
            lattice: LatticeConfig::default(),
            hubs,
            metro,
            center: vec![[0, 0], [1, 0], [0, 1], [-1, 1], [-1, 0], [0, -1], [1, -1]],
            kernel: KernelConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let k = &self.kernel;
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.steps_per_day == 0 {
            return bad("steps_per_day must be positive");
        }
        if !(0.0..=1.0).contains(&k.stay_night) || !(0.0..=1.0).contains(&k.stay_day) {
            return bad("stay probabilities must lie in [0, 1]");
        }
        if k.morning[0] > k.morning[1] || k.evening[0] > k.evening[1] || k.evening[1] > self.steps_per_day {
            return bad("morning/evening windows must be ordered and inside the day");
        }
        if self.lattice.spacing_km <= 0.0 || k.street_speed_kmh <= 0.0 || k.metro_speed_kmh <= 0.0 {
            return bad("spacing and speeds must be positive");
        }
        if self.simulation.n_agents == 0 || self.simulation.chunk_size == 0 {
            return bad("n_agents and chunk_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Street,
    Metro,
}

#[derive(Debug, Clone)]
pub struct SynthNetwork {
    /// Sorted cell ids; indices below refer to this order.
    pub ids: Vec<CellId>,
    pub axial: Vec<Axial>,
    pub cells: CellTable,
    /// Out-neighbours per cell in ascending index order, without self-loops.
    pub edges: Vec<Vec<(usize, EdgeKind)>>,
    pub hubs: Vec<bool>,
    pub center: Vec<bool>,
    /// Lattice hop distance to the nearest center cell.
    pub potential: Vec<u32>,
    pub spacing_km: f64,
}

impl SynthNetwork {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, a: Axial) -> Option<usize> {
        self.axial.iter().position(|&x| x == a)
    }

    pub fn distance_km(&self, a: usize, b: usize) -> f64 {
        self.cells.distance_km(&self.ids[a], &self.ids[b]).expect("network cells are registered")
    }

    pub fn is_metro(&self, from: usize, to: usize) -> bool {
        self.edges[from].iter().any(|&(k, kind)| k == to && kind == EdgeKind::Metro)
    }
}

pub fn cell_label(a: Axial) -> String {
    format!("h{:+}{:+}", a[0], a[1])
}

const NEIGHBOURS: [Axial; 6] = [[1, 0], [1, -1], [0, -1], [-1, 0], [-1, 1], [0, 1]];

fn hex_len(a: Axial) -> i32 {
    a[0].abs().max(a[1].abs()).max((a[0] + a[1]).abs())
}

/// Pointy-top axial coordinate to lat/lon around the configured origin.
fn axial_to_latlon(a: Axial, l: &LatticeConfig) -> LatLon {
    let (q, r) = (f64::from(a[0]), f64::from(a[1]));
    let x = l.spacing_km * (q + r / 2.0);
    let y = l.spacing_km * (3f64.sqrt() / 2.0) * r;
    let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let lat = l.origin_lat + y / km_per_deg;
    let lon = l.origin_lon + x / (km_per_deg * l.origin_lat.to_radians().cos());
    LatLon::new(lat, lon)
}

pub fn build_network(cfg: &SynthConfig) -> Result<SynthNetwork, SynthError> {
    cfg.validate()?;
    let l = &cfg.lattice;
    let excluded: BTreeSet<Axial> = l.excluded.iter().copied().collect();
    let rad = l.radius as i32;
    let mut by_label: BTreeMap<String, Axial> = BTreeMap::new();
    for q in -rad..=rad {
        for r in -rad..=rad {
            let a = [q, r];
            if hex_len(a) <= rad && !excluded.contains(&a) {
                by_label.insert(cell_label(a), a);
            }
        }
    }
    if by_label.is_empty() {
        return Err(SynthError::Empty);
    }
    let mut cells = CellTable::new();
    let mut ids = Vec::with_capacity(by_label.len());
    let mut axial = Vec::with_capacity(by_label.len());
    for (label, a) in &by_label {
        let id = CellId::new(label.as_str())?;
        cells.insert(id.clone(), axial_to_latlon(*a, l))?;
        ids.push(id);
        axial.push(*a);
    }
    let index: BTreeMap<Axial, usize> = axial.iter().enumerate().map(|(k, &a)| (a, k)).collect();
    let lookup = |role: &'static str, a: Axial| index.get(&a).copied().ok_or(SynthError::MissingCell { role, q: a[0], r: a[1] });

    let n = ids.len();
    let mut hubs = vec![false; n];
    for &h in &cfg.hubs {
        hubs[lookup("hub", h)?] = true;
    }
    let mut center = vec![false; n];
    for &c in &cfg.center {
        center[lookup("center", c)?] = true;
    }

    let mut adj: Vec<BTreeMap<usize, EdgeKind>> = vec![BTreeMap::new(); n];
    for (k, a) in axial.iter().enumerate() {
        for d in NEIGHBOURS {
            if let Some(&nb) = index.get(&[a[0] + d[0], a[1] + d[1]]) {
                adj[k].insert(nb, EdgeKind::Street);
            }
        }
    }
    for &[a, b] in &cfg.metro {
        let (ia, ib) = (lookup("metro", a)?, lookup("metro", b)?);
        if !hubs[ia] || !hubs[ib] || ia == ib {
            return Err(SynthError::MetroNotHub(a, b));
        }
        adj[ia].insert(ib, EdgeKind::Metro);
        adj[ib].insert(ia, EdgeKind::Metro);
    }
    let edges: Vec<Vec<(usize, EdgeKind)>> = adj.into_iter().map(|m| m.into_iter().collect()).collect();

    // Edges are symmetric, so reachability from one cell decides strong connectivity.
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(k) = queue.pop_front() {
        for &(nb, _) in &edges[k] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    let unreachable: Vec<String> = (0..n).filter(|&k| !seen[k]).map(|k| ids[k].to_string()).collect();
    if !unreachable.is_empty() {
        return Err(SynthError::Disconnected(unreachable));
    }

    // Potential: street-only hop distance to the center set.
    let mut potential = vec![u32::MAX; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&k| center[k]).collect();
    for &k in &queue {
        potential[k] = 0;
    }
    if queue.is_empty() {
        potential.iter_mut().for_each(|p| *p = 0);
    }
    while let Some(k) = queue.pop_front() {
        for &(nb, kind) in &edges[k] {
            if kind == EdgeKind::Street && potential[nb] == u32::MAX {
                potential[nb] = potential[k] + 1;
                queue.push_back(nb);
            }
        }
    }
    // Cells cut off from the center on the street grid sit one step beyond the farthest reached.
    let far = potential.iter().filter(|&&p| p != u32::MAX).max().copied().unwrap_or(0);
    potential.iter_mut().filter(|p| **p == u32::MAX).for_each(|p| *p = far + 1);

    Ok(SynthNetwork { ids, axial, cells, edges, hubs, center, potential, spacing_km: l.spacing_km })
}

/// Everything produced by one generator run.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub network: SynthNetwork,
    pub daily: Vec<StepOperator>,
    pub fixed_point: FixedPoint,
    pub output: SimulationOutput,
}

/// Network, kernels, fixed point and simulation for `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    let network = build_network(cfg)?;
    let daily = compile_kernels(&network, cfg)?;
    let fixed_point = periodic_fixed_point(&daily, &FixedPointOptions::default())?;
    let start = NaiveDate::parse_from_str(&cfg.start_date, "%Y-%m-%d")
        .map_err(|e| SynthError::Config(format!("start_date: {e}")))?
        .and_time(NaiveTime::MIN);
    let output = simulate_and_aggregate(
        &network,
        &daily,
        &fixed_point.v,
        &cfg.simulation,
        cfg.seed,
        Some((start, cfg.interval_minutes)),
    );
    Ok(SynthDataset { network, daily, fixed_point, output })
}

/// `cell_id,v` rows of the midnight distribution.
pub fn write_fixed_point<W: Write>(net: &SynthNetwork, fp: &FixedPoint, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cell_id", "v"])?;
    for (id, v) in net.ids.iter().zip(&fp.v) {
        out.write_record([id.as_str(), &v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(radius: u32) -> SynthConfig {
        SynthConfig {
            lattice: LatticeConfig { radius, ..Default::default() },
            hubs: vec![],
            metro: vec![],
            center: vec![[0, 0]],
            ..Default::default()
        }
    }

    #[test]
    fn seven_cell_lattice() {
        let net = build_network(&toy(1)).unwrap();
        assert_eq!(net.len(), 7);
        let c = net.index_of([0, 0]).unwrap();
        assert_eq!(net.edges[c].len(), 6);
        let total: usize = net.edges.iter().map(Vec::len).sum();
        assert_eq!(total, 24);
        assert_eq!(net.potential[c], 0);
        assert!(net.potential.iter().enumerate().all(|(k, &p)| (k == c) == (p == 0)));
        let nb = net.edges[c][0].0;
        assert!((net.distance_km(c, nb) - 6.4).abs() < 0.05);
    }

    #[test]
    fn metro_edge_added() {
        let mut cfg = toy(2);
        cfg.hubs = vec![[2, 0], [-2, 0]];
        cfg.metro = vec![[[2, 0], [-2, 0]]];
        let net = build_network(&cfg).unwrap();
        let (a, b) = (net.index_of([2, 0]).unwrap(), net.index_of([-2, 0]).unwrap());
        assert!(net.is_metro(a, b) && net.is_metro(b, a));
        assert_eq!(net.edges[a].len(), 4);
    }

    #[test]
    fn config_errors() {
        let mut cfg = toy(1);
        cfg.hubs = vec![[5, 5]];
        assert!(matches!(build_network(&cfg), Err(SynthError::MissingCell { role: "hub", .. })));
        let mut cfg = toy(1);
        cfg.hubs = vec![[1, 0]];
        cfg.metro = vec![[[1, 0], [-1, 0]]];
        assert!(matches!(build_network(&cfg), Err(SynthError::MetroNotHub(..))));
        let mut cfg = toy(1);
        cfg.center = vec![];
        cfg.lattice.excluded = vec![[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]];
        match build_network(&cfg) {
            Err(SynthError::Disconnected(cells)) => assert_eq!(cells.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SynthConfig::default();
        assert_eq!(SynthConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(SynthConfig::from_toml("").unwrap(), cfg);
        assert!(SynthConfig::from_toml("bogus = 1").is_err());
    }
}
