//! Trips from agent trajectories and the four calibration metrics.
//!
//! A stay point is a maximal run of samples that all lie within
//! `stay_radius_m` of the run's first sample and spans at least
//! `stay_min_samples` samples. Scanning left to right, a stay is taken
//! greedily whenever one starts; otherwise the scan advances one sample.
//! A trip runs from the last sample of one stay to the first sample of the
//! next, and its length is the polyline length over those samples.
//!
//! The similarity of a simulated [`MetricSet`] to a reference is
//! `1 - 1/4 * sum_k |sim_k - ref_k| / ref_k` over ADT, ADA, MXD and MDD.
//! It equals 1 for a perfect match, is not clamped, and is not symmetric.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::exec::Exec;
use crate::logsys::{LogError, LogRecord, LogSink, Payload};

pub const DEFAULT_STAY_RADIUS_M: f64 = 50.0;
pub const DEFAULT_STAY_MIN_SAMPLES: usize = 6;

/// Score given to runs that could not be scored.
pub const FAILED_SCORE: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub agent_id: u32,
    pub tick: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trip {
    pub agent_id: u32,
    pub start_tick: u64,
    pub end_tick: u64,
    pub distance_m: f64,
}

/// Average distance per trip, average distance per agent per day, maximum
/// trip distance and median trip distance, all in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub adt: f64,
    pub ada: f64,
    pub mxd: f64,
    pub mdd: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 4] = ["adt", "ada", "mxd", "mdd"];

    pub fn values(&self) -> [f64; 4] {
        [self.adt, self.ada, self.mxd, self.mdd]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        MetricSet { adt: v[0], ada: v[1], mxd: v[2], mdd: v[3] }
    }

    /// The metrics file format: one `name value` line per metric.
    pub fn to_file_string(&self) -> String {
        Self::NAMES.iter().zip(self.values()).map(|(n, v)| format!("{n} {v:?}\n")).collect()
    }
}

impl fmt::Display for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "adt={:.6} ada={:.6} mxd={:.6} mdd={:.6}", self.adt, self.ada, self.mxd, self.mdd)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("samples are not sorted by (agent_id, tick) at row {0}")]
    Unsorted(usize),
    #[error("mixed sampling intervals: {0} and {1} ticks")]
    MixedInterval(u64, u64),
    #[error("no trips found; the run is degenerate")]
    NoTrips,
    #[error("num_agents and num_days must both be at least 1")]
    BadPopulation,
    #[error("reference metric {0} must be positive, got {1}")]
    NonPositiveReference(&'static str, f64),
    #[error("metrics file: {0}")]
    File(String),
}

fn dist(a: &Sample, b: &Sample) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    (dx * dx + dy * dy).sqrt()
}

/// Checks ordering and a single sampling interval. Returns the agent slices.
fn split_agents(samples: &[Sample]) -> Result<Vec<&[Sample]>, MetricsError> {
    let mut interval: Option<u64> = None;
    let mut slices = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i < samples.len() {
            let (a, b) = (&samples[i - 1], &samples[i]);
            if (b.agent_id, b.tick) <= (a.agent_id, a.tick) {
                return Err(MetricsError::Unsorted(i));
            }
            if a.agent_id == b.agent_id {
                let d = b.tick - a.tick;
                match interval {
                    None => interval = Some(d),
                    Some(iv) if iv != d => return Err(MetricsError::MixedInterval(iv, d)),
                    _ => {}
                }
                continue;
            }
        }
        slices.push(&samples[start..i]);
        start = i;
    }
    Ok(slices)
}

/// Stay points of one agent's trace as inclusive index ranges.
pub fn stay_points(trace: &[Sample], radius_m: f64, min_samples: usize) -> Vec<(usize, usize)> {
    let mut stays = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        let mut j = i + 1;
        while j < trace.len() && dist(&trace[i], &trace[j]) <= radius_m {
            j += 1;
        }
        if j - i >= min_samples.max(1) {
            stays.push((i, j - 1));
            i = j;
        } else {
            i += 1;
        }
    }
    stays
}

fn agent_trips(trace: &[Sample], radius_m: f64, min_samples: usize) -> Vec<Trip> {
    let stays = stay_points(trace, radius_m, min_samples);
    stays
        .windows(2)
        .map(|w| {
            let (from, to) = (w[0].1, w[1].0);
            let distance_m = trace[from..=to].windows(2).map(|p| dist(&p[0], &p[1])).sum();
            Trip { agent_id: trace[from].agent_id, start_tick: trace[from].tick, end_tick: trace[to].tick, distance_m }
        })
        .collect()
}

/// Segments every agent's trace into trips. `samples` must be sorted by
/// `(agent_id, tick)` with one sampling interval throughout.
pub fn extract_trips(samples: &[Sample], radius_m: f64, min_samples: usize) -> Result<Vec<Trip>, MetricsError> {
    extract_trips_with(Exec::Sequential, samples, radius_m, min_samples)
}

/// [`extract_trips`] with agents processed under `exec`.
pub fn extract_trips_with(exec: Exec, samples: &[Sample], radius_m: f64, min_samples: usize) -> Result<Vec<Trip>, MetricsError> {
    let agents = split_agents(samples)?;
    Ok(exec.map(&agents, |_, trace| agent_trips(trace, radius_m, min_samples)).into_iter().flatten().collect())
}

pub fn compute_metrics(trips: &[Trip], num_agents: u32, num_days: u32) -> Result<MetricSet, MetricsError> {
    if num_agents == 0 || num_days == 0 {
        return Err(MetricsError::BadPopulation);
    }
    if trips.is_empty() {
        return Err(MetricsError::NoTrips);
    }
    let mut d: Vec<f64> = trips.iter().map(|t| t.distance_m).collect();
    d.sort_by(f64::total_cmp);
    let total: f64 = d.iter().sum();
    let n = d.len();
    let mdd = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    Ok(MetricSet {
        adt: total / n as f64,
        ada: total / (num_agents as f64 * num_days as f64),
        mxd: d[n - 1],
        mdd,
    })
}

pub fn similarity(reference: &MetricSet, sim: &MetricSet) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    for ((name, r), s) in MetricSet::NAMES.iter().zip(reference.values()).zip(sim.values()) {
        if !(r > 0.0) {
            return Err(MetricsError::NonPositiveReference(name, r));
        }
        sum += (s - r).abs() / r;
    }
    Ok(1.0 - sum / 4.0)
}

pub fn parse_reference(text: &str) -> Result<MetricSet, MetricsError> {
    let mut vals: [Option<f64>; 4] = [None; 4];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: &str| MetricsError::File(format!("line {}: {m}", i + 1));
        let mut parts = line.split_whitespace();
        let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `name value`"));
        };
        let k = MetricSet::NAMES.iter().position(|n| *n == name).ok_or_else(|| err(&format!("unknown metric {name:?}")))?;
        if vals[k].is_some() {
            return Err(err(&format!("duplicate metric {name}")));
        }
        vals[k] = Some(value.parse().map_err(|_| err(&format!("bad number {value:?}")))?);
    }
    let mut out = [0.0; 4];
    for (k, v) in vals.iter().enumerate() {
        out[k] = v.ok_or_else(|| MetricsError::File(format!("missing metric {}", MetricSet::NAMES[k])))?;
        if !(out[k] > 0.0) {
            return Err(MetricsError::NonPositiveReference(MetricSet::NAMES[k], out[k]));
        }
    }
    Ok(MetricSet::from_values(out))
}

pub fn load_reference(path: &Path) -> Result<MetricSet, MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| MetricsError::File(format!("{}: {e}", path.display())))?;
    parse_reference(&text)
}

/// Collects agent positions straight from the engine, skipping log formatting.
#[derive(Debug, Default, Clone)]
pub struct TraceSink {
    samples: Vec<Sample>,
}

impl TraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Samples sorted by `(agent_id, tick)`.
    pub fn into_samples(mut self) -> Vec<Sample> {
        // rows arrive tick-major with ascending ids, so a stable sort by id suffices
        self.samples.sort_by_key(|s| s.agent_id);
        self.samples
    }
}

impl LogSink for TraceSink {
    fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        if let Payload::AgentState { agent_id, x, y, .. } = record.payload {
            self.samples.push(Sample { agent_id, tick: record.tick, x, y });
        }
        Ok(())
    }
}

/// Parses agent-state CSV text (header plus rows, any row order).
pub fn samples_from_csv(text: &str) -> Result<Vec<Sample>, MetricsError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').collect();
    let idx = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| MetricsError::File(format!("agent_state column {name} missing")))
    };
    let (ti, ai, xi, yi) = (idx("tick")?, idx("agent_id")?, idx("x")?, idx("y")?);
    let mut out = Vec::new();
    for (n, l) in lines.enumerate() {
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        let bad = || MetricsError::File(format!("malformed agent_state row {}", n + 2));
        let get = |i: usize| f.get(i).copied().ok_or_else(bad);
        out.push(Sample {
            tick: get(ti)?.parse().map_err(|_| bad())?,
            agent_id: get(ai)?.parse().map_err(|_| bad())?,
            x: get(xi)?.parse().map_err(|_| bad())?,
            y: get(yi)?.parse().map_err(|_| bad())?,
        });
    }
    out.sort_by_key(|s| (s.agent_id, s.tick));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trip(d: f64) -> Trip {
        Trip { agent_id: 0, start_tick: 0, end_tick: 1, distance_m: d }
    }

    fn trace(points: &[(f64, f64)]) -> Vec<Sample> {
        points.iter().enumerate().map(|(i, &(x, y))| Sample { agent_id: 0, tick: i as u64 * 5, x, y }).collect()
    }

    #[test]
    fn stationary_agent_has_no_trips() {
        let t = trace(&[(10.0, 10.0); 288]);
        assert!(extract_trips(&t, 50.0, 6).unwrap().is_empty());
    }

    #[test]
    fn stay_walk_stay_is_one_trip() {
        // 60 min at A, 1000 m east at 360 m per 5-minute sample, 60 min at B
        let mut pts = vec![(0.0, 0.0); 12];
        let mut x = 0.0;
        while x < 1000.0 {
            x = f64::min(x + 360.0, 1000.0);
            pts.push((x, 0.0));
        }
        pts.extend(std::iter::repeat((1000.0, 0.0)).take(12));
        let trips = extract_trips(&trace(&pts), 50.0, 6).unwrap();
        assert_eq!(trips.len(), 1);
        assert_eq!(trips[0].distance_m, 1000.0);
        assert!(trips[0].end_tick > trips[0].start_tick);
    }

    #[test]
    fn input_checks() {
        let mut t = trace(&[(0.0, 0.0); 5]);
        t.swap(1, 2);
        assert_eq!(extract_trips(&t, 50.0, 6), Err(MetricsError::Unsorted(2)));
        let mut t = trace(&[(0.0, 0.0); 5]);
        t[4].tick = 100;
        assert!(matches!(extract_trips(&t, 50.0, 6), Err(MetricsError::MixedInterval(5, _))));
    }

    #[test]
    fn hand_computed_metrics() {
        let m = compute_metrics(&[trip(1.0), trip(2.0), trip(3.0), trip(4.0)], 1, 1).unwrap();
        assert_eq!(m, MetricSet { adt: 2.5, ada: 10.0, mxd: 4.0, mdd: 2.5 });
        let m = compute_metrics(&[trip(7.5)], 1, 1).unwrap();
        assert_eq!(m, MetricSet { adt: 7.5, ada: 7.5, mxd: 7.5, mdd: 7.5 });
        assert_eq!(compute_metrics(&[trip(5.0)], 2, 1).unwrap().ada, 2.5);
        assert_eq!(compute_metrics(&[], 1, 1), Err(MetricsError::NoTrips));
        assert_eq!(compute_metrics(&[trip(1.0)], 0, 1), Err(MetricsError::BadPopulation));
    }

    #[test]
    fn similarity_values() {
        let r = MetricSet { adt: 1200.0, ada: 3400.0, mxd: 9000.0, mdd: 800.0 };
        assert_eq!(similarity(&r, &r).unwrap(), 1.0);
        let one = MetricSet { adt: 2400.0, ..r };
        assert!((similarity(&r, &one).unwrap() - 0.75).abs() < 1e-12);
        let all = MetricSet::from_values(r.values().map(|v| v * 2.0));
        assert!(similarity(&r, &all).unwrap().abs() < 1e-12);
        let zero = MetricSet { mdd: 0.0, ..r };
        assert!(matches!(similarity(&zero, &r), Err(MetricsError::NonPositiveReference("mdd", _))));
        // not symmetric
        assert_ne!(similarity(&r, &one).unwrap(), similarity(&one, &r).unwrap());
    }

    #[test]
    fn reference_file() {
        let m = parse_reference("# ref\nadt 1200\nmxd 9000\nada 3400.5\nmdd 800\n").unwrap();
        assert_eq!(m, MetricSet { adt: 1200.0, ada: 3400.5, mxd: 9000.0, mdd: 800.0 });
        assert_eq!(parse_reference(&m.to_file_string()).unwrap(), m);
        assert!(parse_reference("adt 1\nada 1\nmxd 1\n").is_err());
        assert!(matches!(parse_reference("adt 1\nada 1\nmxd 1\nmdd -2\n"), Err(MetricsError::NonPositiveReference("mdd", _))));
        assert!(parse_reference("adt 1\nadt 2\n").is_err());
    }

    fn positive_set() -> impl Strategy<Value = MetricSet> {
        [1.0f64..1e5, 1.0f64..1e5, 1.0f64..1e5, 1.0f64..1e5].prop_map(MetricSet::from_values)
    }

    proptest! {
        #[test]
        fn uniform_scaling_lowers_score_by_epsilon(r in positive_set(), eps in 0.0f64..2.0) {
            let s = MetricSet::from_values(r.values().map(|v| v * (1.0 + eps)));
            prop_assert!((similarity(&r, &s).unwrap() - (1.0 - eps)).abs() < 1e-9);
        }

        #[test]
        fn score_never_exceeds_one(r in positive_set(), s in positive_set()) {
            prop_assert!(similarity(&r, &s).unwrap() <= 1.0);
        }

        #[test]
        fn longer_trip_raises_max(ds in prop::collection::vec(1.0f64..5000.0, 1..40), extra in 1.0f64..1000.0, agents in 1u32..20) {
            let trips: Vec<Trip> = ds.iter().map(|&d| trip(d)).collect();
            let before = compute_metrics(&trips, agents, 1).unwrap();
            let mut more = trips.clone();
            more.push(trip(before.mxd + extra));
            let after = compute_metrics(&more, agents, 1).unwrap();
            prop_assert!(after.mxd > before.mxd);
            prop_assert!(after.adt >= before.adt);
            prop_assert!(after.ada >= before.ada);
            prop_assert!(after.mxd >= after.adt && after.mxd >= after.mdd);
        }
    }
}
