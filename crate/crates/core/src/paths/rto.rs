//! Return-to-origin distances per origin and as a city average.

use serde::{Deserialize, Serialize};

use super::{check_ops, first_passage, windowed_distance, PathError, WindowedOD};
use crate::ingest::{ComponentSpec, FlowSlice};
use crate::markov::{Measure, StepOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtoVariant {
    /// Stay at the origin over the first step.
    Home,
    /// Leave and return within steps `2..=t2`.
    Roaming,
}

/// Return-to-origin summary for origin `j`.
pub fn rto(ops: &[StepOperator], j: usize, t2: usize, variant: RtoVariant, measure: Measure) -> Result<WindowedOD, PathError> {
    check_ops(ops, &[j])?;
    match variant {
        RtoVariant::Home => {
            let op = ops.first().ok_or(PathError::InvalidWindow { t1: 1, t2: 1, available: 0 })?;
            let p_hit = op.prob(j, j);
            let x_bar = if p_hit > 0.0 {
                Some(op.cost(measure, j, j).ok_or(PathError::MissingCost { t: op.t(), row: j, col: j })?)
            } else {
                None
            };
            Ok(WindowedOD { origin: j, dest: j, t1: 1, t2: 1, x_bar, p_hit, d_eff: None, gup: false })
        }
        RtoVariant::Roaming => {
            if t2 < 2 {
                return Err(PathError::InvalidWindow { t1: 2, t2, available: ops.len() });
            }
            let trace = first_passage(ops, j, j, t2, measure)?;
            windowed_distance(&trace, 2, t2)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityRto {
    pub variant: RtoVariant,
    pub value: f64,
    /// Weight of origins whose value is undefined, removed before renormalizing.
    pub excluded_mass: f64,
    /// `(origin, weight, value)` for every origin with positive weight.
    pub origins: Vec<(usize, f64, Option<f64>)>,
}

/// Origin weights from the first slice: leaving flow for roaming, staying flow for home.
pub fn rto_weights(first: &FlowSlice, component: &ComponentSpec, variant: RtoVariant) -> Vec<f64> {
    let mut f = vec![0.0; component.len()];
    for r in &first.records {
        let (Some(j), Some(i)) = (component.index_of(&r.origin), component.index_of(&r.dest)) else {
            continue;
        };
        let keep = match variant {
            RtoVariant::Home => i == j,
            RtoVariant::Roaming => i != j,
        };
        if keep {
            f[j] += r.count;
        }
    }
    let total: f64 = f.iter().sum();
    if total > 0.0 {
        f.iter_mut().for_each(|v| *v /= total);
    }
    f
}

/// Weighted city average of per-origin return-to-origin distances.
pub fn city_rto(
    ops: &[StepOperator],
    first: &FlowSlice,
    component: &ComponentSpec,
    t2: usize,
    variant: RtoVariant,
    measure: Measure,
) -> Result<CityRto, PathError> {
    let weights = rto_weights(first, component, variant);
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(PathError::ZeroWeight);
    }
    let mut origins = Vec::new();
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            origins.push((j, w, rto(ops, j, t2, variant, measure)?.x_bar));
        }
    }
    let mut value = 0.0;
    let mut excluded_mass = 0.0;
    for &(_, w, x) in &origins {
        match x {
            Some(x) => value += w * x,
            None => excluded_mass += w,
        }
    }
    if origins.iter().all(|o| o.2.is_none()) {
        return Err(PathError::NoDefinedOrigins);
    }
    if excluded_mass > 0.0 {
        value /= 1.0 - excluded_mass;
    }
    Ok(CityRto { variant, value, excluded_mass, origins })
}
