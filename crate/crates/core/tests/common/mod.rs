//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::sync::Arc;

use polgen::logsys::Table;
use polgen::metrics::{MetricSet, Sample, Trip};
use polgen::params::SimParams;
use polgen::process::list_chunks;
use polgen::rng::Rng;
use polgen::worldmap::{generate_map, Poi, PoiCounts, PoiKind, WorldMap};

pub fn city() -> Arc<WorldMap> {
    let counts = PoiCounts { home: 80, workplace: 10, restaurant: 12, recreation: 8 };
    Arc::new(generate_map(4000.0, 4000.0, counts, 11, (34.05, -118.25)).unwrap())
}

pub fn params(agents: u32, days: u32, seed: u64) -> SimParams {
    SimParams { num_agents: agents, num_days: days, seed, ..SimParams::default() }
}

/// All chunks of `table` in `dir` joined into the concatenated-file form.
pub fn concat(dir: &Path, table: Table, branch: Option<&str>) -> Vec<u8> {
    let Ok(chunks) = list_chunks(dir, table, branch) else { return Vec::new() };
    let mut out = Vec::new();
    for (i, c) in chunks.iter().enumerate() {
        let bytes = fs::read(c).unwrap();
        let body = if i == 0 { &bytes[..] } else { &bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..] };
        out.extend_from_slice(body);
    }
    out
}

pub fn concat_all(dir: &Path) -> [Vec<u8>; 4] {
    Table::ALL.map(|t| concat(dir, t, None))
}

/// Linear scan: smallest squared distance, then smallest id.
pub fn brute_nearest(pois: &[Poi], kind: PoiKind, x: f64, y: f64) -> u32 {
    pois.iter()
        .filter(|p| p.kind == kind)
        .map(|p| ((p.x - x) * (p.x - x) + (p.y - y) * (p.y - y), p.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .unwrap()
        .1
}

fn within(a: &Sample, b: &Sample, r: f64) -> bool {
    (a.x - b.x).hypot(a.y - b.y) <= r
}

/// Stay points straight from the definition: starting at the earliest sample
/// not yet in a stay, the longest run of consecutive samples all within the
/// radius of the run's first sample is a stay if it has enough samples;
/// otherwise move one sample on.
pub fn brute_trips(trace: &[Sample], radius: f64, min_samples: usize) -> Vec<Trip> {
    let mut stays: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        let len = (1..=trace.len() - i).filter(|&k| trace[i..i + k].iter().all(|s| within(&trace[i], s, radius))).max().unwrap();
        if len >= min_samples {
            stays.push((i, i + len - 1));
            i += len;
        } else {
            i += 1;
        }
    }
    let mut trips = Vec::new();
    for k in 1..stays.len() {
        let (a, b) = (stays[k - 1].1, stays[k].0);
        let mut d = 0.0;
        for j in a..b {
            d += (trace[j + 1].x - trace[j].x).hypot(trace[j + 1].y - trace[j].y);
        }
        trips.push(Trip { agent_id: trace[a].agent_id, start_tick: trace[a].tick, end_tick: trace[b].tick, distance_m: d });
    }
    trips
}

pub fn brute_metrics(trips: &[Trip], agents: u32, days: u32) -> MetricSet {
    let mut d: Vec<f64> = trips.iter().map(|t| t.distance_m).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let total: f64 = d.iter().sum();
    let median = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    MetricSet { adt: total / n as f64, ada: total / (agents as f64 * days as f64), mxd: d[n - 1], mdd: median }
}

/// Alternating dwell and walk phases, sampled every `interval` ticks.
pub fn random_trace(agent_id: u32, interval: u64, rng: &mut Rng) -> Vec<Sample> {
    let mut out = Vec::new();
    let (mut x, mut y) = (rng.range_f64(0.0, 5000.0), rng.range_f64(0.0, 5000.0));
    let mut tick = 0;
    let phases = 2 + rng.below(6);
    for _ in 0..phases {
        let dwell = rng.below(20);
        for _ in 0..dwell {
            out.push(Sample { agent_id, tick, x: x + rng.range_f64(-15.0, 15.0), y: y + rng.range_f64(-15.0, 15.0) });
            tick += interval;
        }
        let walk = rng.below(10);
        let heading = rng.range_f64(0.0, std::f64::consts::TAU);
        for _ in 0..walk {
            let step = rng.range_f64(10.0, 400.0);
            x += step * heading.cos() + rng.range_f64(-20.0, 20.0);
            y += step * heading.sin() + rng.range_f64(-20.0, 20.0);
            out.push(Sample { agent_id, tick, x, y });
            tick += interval;
        }
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Smallest k with P(X <= k) >= q for X ~ Binomial(n, p).
pub fn binomial_quantile(n: u64, p: f64, q: f64) -> u64 {
    let mut cdf = 0.0;
    let mut pmf = (1.0 - p).powi(n as i32);
    for k in 0..=n {
        cdf += pmf;
        if cdf >= q {
            return k;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    n
}
