//! Agent simulation and aggregation into flow slices.

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{SimulationConfig, SynthNetwork};
use crate::ingest::{FlowRecord, FlowSlice, Summary, WallTime};
use crate::markov::{Measure, StepOperator};

/// Stream id reserved for the trip-length jitter.
const JITTER_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    /// One slice per simulated step, `t = 0..n_days · period`.
    pub slices: Vec<FlowSlice>,
    /// Agents per cell at the start of each step, plus the final state.
    pub occupancy: Vec<Vec<u64>>,
}

/// Inverse-CDF draw from `(index, prob)` pairs.
fn draw(rng: &mut ChaCha8Rng, entries: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in entries {
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

struct Tally {
    moves: Vec<u64>,
    occupancy: Vec<u64>,
}

impl Tally {
    fn add(mut self, other: Tally) -> Tally {
        self.moves.iter_mut().zip(&other.moves).for_each(|(a, b)| *a += b);
        self.occupancy.iter_mut().zip(&other.occupancy).for_each(|(a, b)| *a += b);
        self
    }
}

/// Simulates `cfg.n_agents` agents drawn from `v0` through `n_days` repetitions
/// of the daily operators. Agent chunks use independent substreams of `seed`,
/// so the result does not depend on the number of worker threads.
pub fn simulate_and_aggregate(
    net: &SynthNetwork,
    daily: &[StepOperator],
    v0: &[f64],
    cfg: &SimulationConfig,
    seed: u64,
    start: Option<(NaiveDateTime, u32)>,
) -> SimulationOutput {
    let n = net.len();
    let period = daily.len();
    let total_steps = period * cfg.n_days;
    // Offsets of each daily operator in a flat move-count vector.
    let mut offsets = Vec::with_capacity(period + 1);
    offsets.push(0);
    for op in daily {
        offsets.push(offsets.last().unwrap() + op.matrix().nnz());
    }
    let day_nnz = offsets[period];
    let n_chunks = cfg.n_agents.div_ceil(cfg.chunk_size);

    let empty = || Tally { moves: vec![0; day_nnz * cfg.n_days], occupancy: vec![0; (total_steps + 1) * n] };
    let tally = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let agents = cfg.chunk_size.min(cfg.n_agents - c * cfg.chunk_size);
            let mut t = empty();
            for _ in 0..agents {
                let mut at = draw(&mut rng, v0.iter().copied().enumerate());
                for step in 0..total_steps {
                    t.occupancy[step * n + at] += 1;
                    let d = step % period;
                    let m = daily[d].matrix();
                    let pos = draw(&mut rng, m.col_range(at).map(|p| (p, m.values()[p])));
                    t.moves[(step / period) * day_nnz + offsets[d] + pos] += 1;
                    at = m.row_idx()[pos];
                }
                t.occupancy[total_steps * n + at] += 1;
            }
            t
        })
        .reduce(empty, Tally::add);

    let mut jitter = cfg.jitter.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(JITTER_STREAM);
        rng
    });
    let mut slices = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let d = step % period;
        let op = &daily[d];
        let m = op.matrix();
        let dist = op.costs(Measure::Distance);
        let dur = op.costs(Measure::Duration);
        let mut records = Vec::new();
        for j in 0..n {
            for pos in m.col_range(j) {
                let count = tally.moves[(step / period) * day_nnz + offsets[d] + pos];
                if count == 0 {
                    continue;
                }
                let f = jitter.as_mut().map_or(1.0, |r| 1.0 + 0.2 * (2.0 * r.random::<f64>() - 1.0));
                records.push(FlowRecord {
                    t: step,
                    origin: net.ids[j].clone(),
                    dest: net.ids[m.row_idx()[pos]].clone(),
                    count: count as f64,
                    dist: Summary::exact(dist[pos].expect("kernel costs are complete") * f),
                    dur: Summary::exact(dur[pos].expect("kernel costs are complete") * f),
                });
            }
        }
        let wall_time = start.map(|(s, minutes)| WallTime {
            start: s + Duration::minutes(i64::from(minutes) * step as i64),
            interval_minutes: minutes,
        });
        slices.push(FlowSlice { t: step, records, wall_time });
    }
    let occupancy = tally.occupancy.chunks(n).map(<[u64]>::to_vec).collect();
    SimulationOutput { slices, occupancy }
}

/// Expected occupancy distribution at the start of each of `steps` steps (plus the end state).
pub fn expected_occupancy(daily: &[StepOperator], v0: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut v = v0.to_vec();
    for step in 0..steps {
        let next = daily[step % daily.len()].matrix().mul_vec(&v);
        out.push(std::mem::replace(&mut v, next));
    }
    out.push(v);
    out
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy;
    use super::super::{build_network, compile_kernels};
    use super::*;

    #[test]
    fn single_staying_agent() {
        let mut cfg = toy(1);
        cfg.kernel.stay_night = 1.0;
        cfg.kernel.stay_day = 1.0;
        cfg.simulation.n_agents = 1;
        cfg.simulation.n_days = 1;
        let net = build_network(&cfg).unwrap();
        let ops = compile_kernels(&net, &cfg).unwrap();
        let v = vec![1.0 / 7.0; 7];
        let out = simulate_and_aggregate(&net, &ops, &v, &cfg.simulation, 3, None);
        assert_eq!(out.slices.len(), 48);
        let first = &out.slices[0].records;
        assert_eq!(first.len(), 1);
        for s in &out.slices {
            assert_eq!(s.records.len(), 1);
            assert_eq!(s.records[0].origin, first[0].origin);
            assert_eq!(s.records[0].dest, first[0].origin);
            assert_eq!(s.records[0].count, 1.0);
        }
    }

    #[test]
    fn deterministic_and_chunk_local() {
        let mut cfg = toy(2);
        cfg.simulation.n_agents = 5000;
        cfg.simulation.n_days = 1;
        cfg.simulation.chunk_size = 512;
        cfg.simulation.jitter = true;
        let net = build_network(&cfg).unwrap();
        let ops = compile_kernels(&net, &cfg).unwrap();
        let v = vec![1.0 / net.len() as f64; net.len()];
        let a = simulate_and_aggregate(&net, &ops, &v, &cfg.simulation, 11, None);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_and_aggregate(&net, &ops, &v, &cfg.simulation, 11, None));
        assert_eq!(a.slices, b.slices);
        assert_eq!(a.occupancy, b.occupancy);
        let c = simulate_and_aggregate(&net, &ops, &v, &cfg.simulation, 12, None);
        assert_ne!(a.slices, c.slices);
        for (t, s) in a.slices.iter().enumerate() {
            assert_eq!(s.total_count(), 5000.0);
            assert_eq!(a.occupancy[t].iter().sum::<u64>(), 5000);
        }
    }
}
