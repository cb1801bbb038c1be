//! Baseline trip costs and effective-distance normalisation.
//!
//! Observed median trip distance is regressed on great-circle centroid
//! distance by count-weighted least squares. Self-loops sit at geographic
//! distance zero and, carrying most of the trips, anchor the intercept. The
//! fit imputes baselines for pairs never observed directly.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CellId, CellTable};
use crate::ingest::{ComponentSpec, FlowRecord, FlowSlice};
use crate::markov::{Measure, StepOperator};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("degenerate regression design: need at least two distinct geographic distances with positive weight")]
    Degenerate,
    #[error("cell `{0}` has no centroid")]
    MissingCentroid(CellId),
    #[error("zero normalisation denominator for {origin} -> {dest}")]
    ZeroDenominator { origin: String, dest: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    /// km per km.
    pub slope: f64,
    /// km.
    pub intercept: f64,
    /// Count-weighted root-mean-square residual, km.
    pub rmse: f64,
    pub n_points: usize,
    pub weight_total: f64,
}

impl BaselineFit {
    pub fn predict(&self, geo_km: f64) -> f64 {
        (self.slope * geo_km + self.intercept).max(0.0)
    }
}

/// One OD pair's aggregate over the fitting range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub geo_km: f64,
    pub median_km: f64,
    pub weight: f64,
}

/// Count-weighted per-pair statistics over a range of slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservedStats {
    pub median: f64,
    pub std: Option<f64>,
    pub count: f64,
}

fn typical(r: &FlowRecord, measure: Measure) -> (Option<f64>, Option<f64>) {
    let s = match measure {
        Measure::Distance => r.dist,
        Measure::Duration => r.dur,
    };
    (s.typical(), s.std)
}

/// Per ordered `(origin, dest)` pair: count-weighted median (median, else
/// mean) and standard deviation across all slices.
pub fn observed_stats(slices: &[FlowSlice], measure: Measure) -> BTreeMap<(CellId, CellId), ObservedStats> {
    #[derive(Default)]
    struct Acc {
        med_num: f64,
        med_den: f64,
        std_num: f64,
        std_den: f64,
    }
    let mut acc: BTreeMap<(CellId, CellId), Acc> = BTreeMap::new();
    for r in slices.iter().flat_map(|s| &s.records) {
        let (med, std) = typical(r, measure);
        let Some(med) = med else { continue };
        let a = acc.entry((r.origin.clone(), r.dest.clone())).or_default();
        a.med_num += r.count * med;
        a.med_den += r.count;
        if let Some(sd) = std {
            a.std_num += r.count * sd;
            a.std_den += r.count;
        }
    }
    acc.into_iter()
        .map(|(k, a)| {
            let stats = ObservedStats {
                median: a.med_num / a.med_den,
                std: (a.std_den > 0.0).then(|| a.std_num / a.std_den),
                count: a.med_den,
            };
            (k, stats)
        })
        .collect()
}

/// Scatter of `(geographic distance, observed median, trip count)` per pair,
/// in `(origin, dest)` order.
pub fn scatter_points(slices: &[FlowSlice], cells: &CellTable, measure: Measure) -> Result<Vec<ScatterPoint>, BaselineError> {
    observed_stats(slices, measure)
        .into_iter()
        .map(|((o, d), s)| {
            let geo = geo_distance(cells, &o, &d)?;
            Ok(ScatterPoint { geo_km: geo, median_km: s.median, weight: s.count })
        })
        .collect()
}

fn geo_distance(cells: &CellTable, o: &CellId, d: &CellId) -> Result<f64, BaselineError> {
    if o == d {
        return Ok(0.0);
    }
    let a = cells.get(o).ok_or_else(|| BaselineError::MissingCentroid(o.clone()))?;
    let b = cells.get(d).ok_or_else(|| BaselineError::MissingCentroid(d.clone()))?;
    Ok(crate::geo::haversine_km(a, b))
}

/// Closed-form weighted least squares `y ≈ slope · x + intercept`.
pub fn fit_points(points: &[ScatterPoint]) -> Result<BaselineFit, BaselineError> {
    // Fixed reduction order, so any permutation of the input gives the same bits.
    let mut pts: Vec<&ScatterPoint> = points.iter().filter(|p| p.weight > 0.0).collect();
    pts.sort_by(|a, b| {
        a.geo_km
            .total_cmp(&b.geo_km)
            .then(a.median_km.total_cmp(&b.median_km))
            .then(a.weight.total_cmp(&b.weight))
    });
    let w_total: f64 = pts.iter().map(|p| p.weight).sum();
    if pts.is_empty() || w_total <= 0.0 {
        return Err(BaselineError::Degenerate);
    }
    let x_mean = pts.iter().map(|p| p.weight * p.geo_km).sum::<f64>() / w_total;
    let y_mean = pts.iter().map(|p| p.weight * p.median_km).sum::<f64>() / w_total;
    let sxx: f64 = pts.iter().map(|p| p.weight * (p.geo_km - x_mean).powi(2)).sum();
    let sxy: f64 = pts
        .iter()
        .map(|p| p.weight * (p.geo_km - x_mean) * (p.median_km - y_mean))
        .sum();
    let distinct = pts.iter().any(|p| p.geo_km != pts[0].geo_km);
    if !distinct || sxx <= 0.0 {
        return Err(BaselineError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = pts
        .iter()
        .map(|p| p.weight * (p.median_km - (slope * p.geo_km + intercept)).powi(2))
        .sum();
    Ok(BaselineFit {
        slope,
        intercept,
        rmse: (sse / w_total).sqrt(),
        n_points: pts.len(),
        weight_total: w_total,
    })
}

/// Fits the baseline regression over all records of `slices`.
pub fn fit_baseline(slices: &[FlowSlice], cells: &CellTable, measure: Measure) -> Result<BaselineFit, BaselineError> {
    fit_points(&scatter_points(slices, cells, measure)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baseline {
    pub baseline: f64,
    pub sigma: f64,
    pub imputed: bool,
}

/// Observed median and spread when the pair was seen, regression otherwise.
pub fn baseline_for(observed: Option<&ObservedStats>, geo_km: f64, fit: &BaselineFit) -> Baseline {
    match observed {
        Some(o) => Baseline { baseline: o.median.max(0.0), sigma: o.std.unwrap_or(fit.rmse), imputed: false },
        None => Baseline { baseline: fit.predict(geo_km), sigma: fit.rmse, imputed: true },
    }
}

/// `x̄ / (baseline + σ)`.
pub fn effective_distance(x_bar: f64, baseline: f64, sigma: f64) -> Option<f64> {
    let denom = baseline + sigma;
    (denom > 0.0).then(|| x_bar / denom)
}

/// Fit plus observed per-pair statistics, for lookups over a component.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub fit: BaselineFit,
    observed: BTreeMap<(CellId, CellId), ObservedStats>,
    cells: CellTable,
}

impl BaselineModel {
    pub fn new(slices: &[FlowSlice], cells: &CellTable, measure: Measure) -> Result<Self, BaselineError> {
        Ok(Self::with_fit(fit_baseline(slices, cells, measure)?, slices, cells, measure))
    }

    pub fn with_fit(fit: BaselineFit, slices: &[FlowSlice], cells: &CellTable, measure: Measure) -> Self {
        BaselineModel { fit, observed: observed_stats(slices, measure), cells: cells.clone() }
    }

    pub fn baseline(&self, origin: &CellId, dest: &CellId) -> Result<Baseline, BaselineError> {
        let obs = self.observed.get(&(origin.clone(), dest.clone()));
        let geo = if obs.is_some() { 0.0 } else { geo_distance(&self.cells, origin, dest)? };
        Ok(baseline_for(obs, geo, &self.fit))
    }

    pub fn effective_distance(&self, origin: &CellId, dest: &CellId, x_bar: f64) -> Result<f64, BaselineError> {
        let b = self.baseline(origin, dest)?;
        effective_distance(x_bar, b.baseline, b.sigma).ok_or_else(|| BaselineError::ZeroDenominator {
            origin: origin.to_string(),
            dest: dest.to_string(),
        })
    }

    /// Fills missing operator costs with the regression prediction.
    pub fn impute_costs(&self, ops: &mut [StepOperator], component: &ComponentSpec, measure: Measure) -> Result<usize, BaselineError> {
        let mut filled = 0;
        for op in ops.iter_mut() {
            let missing = op.missing_costs(measure);
            if missing.is_empty() {
                continue;
            }
            let mut values = BTreeMap::new();
            for &(i, j) in &missing {
                let geo = geo_distance(&self.cells, &component.cells[j], &component.cells[i])?;
                values.insert((i, j), self.fit.predict(geo));
            }
            op.fill_missing_costs(measure, |i, j| values[&(i, j)]);
            filled += missing.len();
        }
        Ok(filled)
    }
}

pub fn write_scatter<W: Write>(points: &[ScatterPoint], w: W) -> Result<(), BaselineError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["geo_km", "median_km", "weight"])?;
    for p in points {
        out.write_record([p.geo_km.to_string(), p.median_km.to_string(), p.weight.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
