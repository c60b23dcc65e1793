//! Tidy aggregate tables for the plotting scripts.
//!
//! Inputs are raw or processed CSV logs (columns are located by name, so a
//! leading `run_id` or a column selection is fine) or a GA report. Outputs
//! are small CSV files with a header.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::calibrate::GaReport;
use crate::engine::clock::TICKS_PER_DAY;
use crate::metrics::{extract_trips, samples_from_csv, DEFAULT_STAY_MIN_SAMPLES, DEFAULT_STAY_RADIUS_M};
use crate::worldmap::PoiKind;

pub const TRIP_BIN_M: f64 = 250.0;
pub const NEEDS: [&str; 4] = ["hunger", "energy_deficit", "social", "balance"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VizKind {
    CheckinsPerDayByVenue,
    NeedTraces,
    TripHistogram,
    GaScores,
}

impl VizKind {
    pub const ALL: [VizKind; 4] = [VizKind::CheckinsPerDayByVenue, VizKind::NeedTraces, VizKind::TripHistogram, VizKind::GaScores];

    pub fn name(self) -> &'static str {
        match self {
            VizKind::CheckinsPerDayByVenue => "checkins_per_day_by_venue",
            VizKind::NeedTraces => "need_traces",
            VizKind::TripHistogram => "trip_histogram",
            VizKind::GaScores => "ga_scores",
        }
    }
}

impl FromStr for VizKind {
    type Err = VizError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VizKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| VizError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VizError {
    #[error("unknown export kind {0:?} (expected one of checkins_per_day_by_venue, need_traces, trip_histogram, ga_scores)")]
    UnknownKind(String),
    #[error("input is missing column {0:?}")]
    MissingColumn(String),
    #[error("malformed input row {0}")]
    Malformed(usize),
    #[error("{0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

struct Csv<'a> {
    cols: Vec<&'a str>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Csv<'a> {
    fn parse(text: &'a str) -> Self {
        let mut lines = text.lines();
        let cols = lines.next().unwrap_or("").split(',').collect();
        let rows = lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i + 2, l.split(',').collect()))
            .collect();
        Csv { cols, rows }
    }

    fn col(&self, name: &str) -> Result<usize, VizError> {
        self.cols.iter().position(|c| *c == name).ok_or_else(|| VizError::MissingColumn(name.to_string()))
    }

    fn field<T: FromStr>(row: &(usize, Vec<&str>), i: usize) -> Result<T, VizError> {
        row.1.get(i).and_then(|v| v.parse().ok()).ok_or(VizError::Malformed(row.0))
    }
}

/// Dense `(day, venue_kind, count)` over every day up to the last check-in
/// and every venue kind. Days are zero-based.
pub fn checkins_per_day_by_venue(checkins_csv: &str) -> Result<String, VizError> {
    let csv = Csv::parse(checkins_csv);
    let (ti, ki) = (csv.col("tick")?, csv.col("venue_kind")?);
    let mut counts: BTreeMap<(u64, usize), u64> = BTreeMap::new();
    let mut last_day = None;
    for row in &csv.rows {
        let tick: u64 = Csv::field(row, ti)?;
        let kind: PoiKind = Csv::field(row, ki)?;
        let day = tick / TICKS_PER_DAY;
        *counts.entry((day, kind.index())).or_default() += 1;
        last_day = last_day.max(Some(day));
    }
    let mut out = String::from("day,venue_kind,count\n");
    if let Some(last) = last_day {
        for day in 0..=last {
            for kind in PoiKind::ALL {
                let n = counts.get(&(day, kind.index())).copied().unwrap_or(0);
                writeln!(out, "{day},{kind},{n}").expect("string write");
            }
        }
    }
    Ok(out)
}

/// Population mean of each need per logged tick, long format
/// `(tick, need, mean)`.
pub fn need_traces(agent_state_csv: &str) -> Result<String, VizError> {
    let csv = Csv::parse(agent_state_csv);
    let ti = csv.col("tick")?;
    let idx = NEEDS.iter().map(|n| csv.col(n)).collect::<Result<Vec<_>, _>>()?;
    let mut sums: BTreeMap<u64, ([f64; 4], u64)> = BTreeMap::new();
    for row in &csv.rows {
        let tick: u64 = Csv::field(row, ti)?;
        let e = sums.entry(tick).or_default();
        for (k, &i) in idx.iter().enumerate() {
            e.0[k] += Csv::field::<f64>(row, i)?;
        }
        e.1 += 1;
    }
    let mut out = String::from("tick,need,mean\n");
    for (tick, (s, n)) in sums {
        for (k, name) in NEEDS.iter().enumerate() {
            writeln!(out, "{tick},{name},{:.6}", s[k] / n as f64).expect("string write");
        }
    }
    Ok(out)
}

/// Trip length histogram in [`TRIP_BIN_M`] bins from the first bin to the
/// last non-empty one.
pub fn trip_histogram(agent_state_csv: &str) -> Result<String, VizError> {
    let samples = samples_from_csv(agent_state_csv).map_err(|e| VizError::Input(e.to_string()))?;
    let trips = extract_trips(&samples, DEFAULT_STAY_RADIUS_M, DEFAULT_STAY_MIN_SAMPLES).map_err(|e| VizError::Input(e.to_string()))?;
    let mut bins: Vec<u64> = Vec::new();
    for t in &trips {
        let b = (t.distance_m / TRIP_BIN_M).floor() as usize;
        if bins.len() <= b {
            bins.resize(b + 1, 0);
        }
        bins[b] += 1;
    }
    let mut out = String::from("bin_start_m,bin_end_m,trips\n");
    for (i, n) in bins.iter().enumerate() {
        writeln!(out, "{},{},{n}", i as f64 * TRIP_BIN_M, (i + 1) as f64 * TRIP_BIN_M).expect("string write");
    }
    Ok(out)
}

/// Per-generation scores from a calibration report.
pub fn ga_scores(report_json: &str) -> Result<String, VizError> {
    let report: GaReport = serde_json::from_str(report_json).map_err(|e| VizError::Input(format!("not a GA report: {e}")))?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = String::from("generation,best_score,generation_best,mean_score,evaluated,failed,culled\n");
    for g in &report.history {
        writeln!(
            out,
            "{},{:.6},{},{},{},{},{}",
            g.generation,
            g.best_score,
            opt(g.generation_best),
            opt(g.mean_score),
            g.evaluated,
            g.failed,
            g.culled
        )
        .expect("string write");
    }
    Ok(out)
}

pub fn export(kind: VizKind, input: &Path, out: &Path) -> Result<(), VizError> {
    let text = fs::read_to_string(input).map_err(|source| VizError::Io { path: input.display().to_string(), source })?;
    let table = match kind {
        VizKind::CheckinsPerDayByVenue => checkins_per_day_by_venue(&text)?,
        VizKind::NeedTraces => need_traces(&text)?,
        VizKind::TripHistogram => trip_histogram(&text)?,
        VizKind::GaScores => ga_scores(&text)?,
    };
    fs::write(out, table).map_err(|source| VizError::Io { path: out.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_checkin_on_day_three() {
        let csv = "tick,timestamp,agent_id,venue_id,venue_kind\n4400,2024-01-04T01:20:00,0,7,restaurant\n";
        let out = checkins_per_day_by_venue(csv).unwrap();
        assert!(out.lines().any(|l| l == "3,restaurant,1"));
        assert_eq!(out.lines().count(), 1 + 4 * 4);
        let total: u64 = out.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn missing_column_and_unknown_kind() {
        assert!(matches!(checkins_per_day_by_venue("tick,agent_id\n1,2\n"), Err(VizError::MissingColumn(c)) if c == "venue_kind"));
        assert!(matches!("heatmap".parse::<VizKind>(), Err(VizError::UnknownKind(_))));
        for k in VizKind::ALL {
            assert_eq!(k.name().parse::<VizKind>().unwrap(), k);
        }
    }

    #[test]
    fn need_means() {
        let csv = "tick,agent_id,hunger,energy_deficit,social,balance\n0,0,0.2,0.4,0.5,10\n0,1,0.4,0.0,0.5,20\n5,0,1,1,1,1\n";
        let out = need_traces(csv).unwrap();
        assert!(out.contains("0,hunger,0.300000\n"));
        assert!(out.contains("0,balance,15.000000\n"));
        assert_eq!(out.lines().count(), 1 + 8);
    }
}
