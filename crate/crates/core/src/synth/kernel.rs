//! Daily schedule and per-step gravity kernels.

use std::ops::Range;

use super::{EdgeKind, SynthConfig, SynthError, SynthNetwork};
use crate::markov::StepOperator;
use crate::matrix::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Night,
    Morning,
    Midday,
    Evening,
}

/// Phase of step `t` (taken modulo the period).
pub fn step_phase(cfg: &SynthConfig, t: usize) -> Phase {
    let t = t % cfg.steps_per_day;
    let k = &cfg.kernel;
    if (k.morning[0]..k.morning[1]).contains(&t) {
        Phase::Morning
    } else if (k.evening[0]..k.evening[1]).contains(&t) {
        Phase::Evening
    } else if t < k.morning[0] || t >= k.evening[1] {
        Phase::Night
    } else {
        Phase::Midday
    }
}

struct StepParams {
    stay: f64,
    bias: f64,
    metro_boost: f64,
}

fn params(cfg: &SynthConfig, t: usize) -> StepParams {
    let k = &cfg.kernel;
    match step_phase(cfg, t) {
        Phase::Night => StepParams { stay: k.stay_night, bias: 0.0, metro_boost: k.metro_boost_offpeak },
        Phase::Morning => StepParams { stay: k.stay_day, bias: k.morning_bias, metro_boost: k.metro_boost_peak },
        Phase::Midday => StepParams { stay: k.stay_day, bias: 0.0, metro_boost: k.metro_boost_offpeak },
        Phase::Evening => StepParams { stay: k.stay_day, bias: k.evening_bias, metro_boost: k.metro_boost_peak },
    }
}

fn activity(cfg: &SynthConfig, net: &SynthNetwork, k: usize) -> f64 {
    let c = &cfg.kernel;
    let mut a = c.activity_base;
    if net.hubs[k] {
        a *= c.activity_hub;
    }
    if net.center[k] {
        a *= c.activity_center;
    }
    a
}

/// One operator per step of the day, `t = 0..steps_per_day`.
pub fn compile_kernels(net: &SynthNetwork, cfg: &SynthConfig) -> Result<Vec<StepOperator>, SynthError> {
    let k = &cfg.kernel;
    let intra = k.intra_cell_km.unwrap_or(net.spacing_km / 3.0);
    let n = net.len();
    let mut ops = Vec::with_capacity(cfg.steps_per_day);
    for t in 0..cfg.steps_per_day {
        let sp = params(cfg, t);
        let mut columns = Vec::with_capacity(n);
        let mut dist = Vec::new();
        let mut dur = Vec::new();
        for j in 0..n {
            let mut col: Vec<(usize, f64, f64, f64)> = Vec::new();
            if sp.stay > 0.0 {
                col.push((j, sp.stay, intra, intra / k.street_speed_kmh * 60.0));
            }
            if sp.stay < 1.0 {
                let pj = f64::from(net.potential[j]);
                let weights: Vec<f64> = net.edges[j]
                    .iter()
                    .map(|&(to, kind)| {
                        let dp = f64::from(net.potential[to]) - pj;
                        let boost = if kind == EdgeKind::Metro { sp.metro_boost } else { 1.0 };
                        activity(cfg, net, to) * (-k.beta * dp * sp.bias).exp() * boost
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                if !(total > 0.0 && total.is_finite()) {
                    return Err(SynthError::NonNormalizable { cell: net.ids[j].to_string(), t });
                }
                for (&(to, kind), w) in net.edges[j].iter().zip(&weights) {
                    let d = net.distance_km(j, to);
                    let speed = if kind == EdgeKind::Metro { k.metro_speed_kmh } else { k.street_speed_kmh };
                    col.push((to, (1.0 - sp.stay) * w / total, d, d / speed * 60.0));
                }
            }
            col.retain(|e| e.1 > 0.0);
            col.sort_by_key(|e| e.0);
            dist.extend(col.iter().map(|e| Some(e.2)));
            dur.extend(col.iter().map(|e| Some(e.3)));
            columns.push(col.iter().map(|e| (e.0, e.1)).collect());
        }
        let m = CscMatrix::from_columns(n, columns);
        ops.push(StepOperator::new(t, m, dist, dur).expect("costs align with entries"));
    }
    Ok(ops)
}

/// Expected-flow-weighted mean of `potential(origin) - potential(dest)` over
/// non-self moves during `steps`, with occupancy started from `v0` at step 0
/// and pushed through the daily operators. Positive means net inward.
pub fn potential_drop(net: &SynthNetwork, ops: &[StepOperator], v0: &[f64], steps: Range<usize>) -> f64 {
    let mut occ = v0.to_vec();
    let (mut num, mut den) = (0.0, 0.0);
    for (t, op) in ops.iter().enumerate().take(steps.end) {
        if steps.contains(&t) {
            let m = op.matrix();
            for (j, &o) in occ.iter().enumerate() {
                for (k, v) in m.column(j) {
                    if k != j {
                        let flow = o * v;
                        num += flow * (f64::from(net.potential[j]) - f64::from(net.potential[k]));
                        den += flow;
                    }
                }
            }
        }
        occ = op.matrix().mul_vec(&occ);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::super::build_network;
    use super::super::tests::toy;
    use super::*;

    #[test]
    fn unbiased_uniform_spreads_evenly() {
        let mut cfg = toy(1);
        cfg.kernel.morning_bias = 0.0;
        cfg.kernel.evening_bias = 0.0;
        cfg.kernel.activity_center = 1.0;
        let net = build_network(&cfg).unwrap();
        let ops = compile_kernels(&net, &cfg).unwrap();
        let c = net.index_of([0, 0]).unwrap();
        let stay = cfg.kernel.stay_night;
        for (k, v) in ops[0].matrix().column(c) {
            let want = if k == c { stay } else { (1.0 - stay) / 6.0 };
            assert!((v - want).abs() < 1e-15);
        }
        assert!(ops.iter().all(|o| o.matrix().max_col_sum_error() < 1e-12));
    }

    #[test]
    fn inward_bias_favours_center() {
        // Ring cell [1, 0] has the center and two ring cells as neighbours.
        let mut cfg = toy(1);
        cfg.kernel.activity_center = 1.0;
        cfg.kernel.beta = 1.0;
        cfg.kernel.morning_bias = 2.0;
        let net = build_network(&cfg).unwrap();
        let ops = compile_kernels(&net, &cfg).unwrap();
        let (j, c) = (net.index_of([1, 0]).unwrap(), net.index_of([0, 0]).unwrap());
        let t = cfg.kernel.morning[0];
        let out = 1.0 - ops[t].prob(j, j);
        let share = ops[t].prob(c, j) / out;
        // e^2 / (e^2 + 1 + 1)
        let e2 = 2f64.exp();
        assert!((share - e2 / (e2 + 2.0)).abs() < 1e-12);
        assert!(share > 0.5);
    }

    #[test]
    fn full_stay_is_identity() {
        let mut cfg = toy(1);
        cfg.kernel.stay_night = 1.0;
        cfg.kernel.stay_day = 1.0;
        let net = build_network(&cfg).unwrap();
        for op in compile_kernels(&net, &cfg).unwrap() {
            assert_eq!(op.matrix(), &CscMatrix::identity(7));
        }
    }

    #[test]
    fn isolated_cell_cannot_normalize() {
        let mut cfg = toy(0);
        cfg.kernel.stay_night = 0.5;
        let net = build_network(&cfg).unwrap();
        assert!(matches!(compile_kernels(&net, &cfg), Err(SynthError::NonNormalizable { .. })));
    }

    #[test]
    fn phases() {
        let cfg = SynthConfig::default();
        assert_eq!(step_phase(&cfg, 0), Phase::Night);
        assert_eq!(step_phase(&cfg, 12), Phase::Morning);
        assert_eq!(step_phase(&cfg, 30), Phase::Midday);
        assert_eq!(step_phase(&cfg, 40), Phase::Evening);
        assert_eq!(step_phase(&cfg, 47), Phase::Night);
        assert_eq!(step_phase(&cfg, 48 + 12), Phase::Morning);
    }
}
