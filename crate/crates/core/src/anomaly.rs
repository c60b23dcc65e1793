//! Behavioural anomalies: specification file, assignment mechanisms,
//! per-decision overrides and ground-truth labels.
//!
//! Anomalies draw from the world random stream, so a seed reproduces both who
//! is flagged and what the flag does.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::engine::clock::TICKS_PER_DAY;
use crate::engine::Agent;
use crate::logsys::{LogRecord, Payload};
use crate::rng::Rng;
use crate::worldmap::WorldMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    Hunger,
    Social,
    Work,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Hunger => "hunger",
            AnomalyKind::Social => "social",
            AnomalyKind::Work => "work",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [AnomalyKind::Hunger, AnomalyKind::Social, AnomalyKind::Work].get(c as usize).copied()
    }
}

impl FromStr for AnomalyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hunger" => Ok(AnomalyKind::Hunger),
            "social" => Ok(AnomalyKind::Social),
            "work" => Ok(AnomalyKind::Work),
            _ => Err(format!("unknown anomaly kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyLevel {
    Red,
    Orange,
    Yellow,
}

impl AnomalyLevel {
    /// Probability that the anomaly overrides a decision.
    pub fn probability(self) -> f64 {
        match self {
            AnomalyLevel::Red => 1.0,
            AnomalyLevel::Orange => 0.5,
            AnomalyLevel::Yellow => 0.2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyLevel::Red => "red",
            AnomalyLevel::Orange => "orange",
            AnomalyLevel::Yellow => "yellow",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [AnomalyLevel::Red, AnomalyLevel::Orange, AnomalyLevel::Yellow].get(c as usize).copied()
    }
}

impl FromStr for AnomalyLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "red" => Ok(AnomalyLevel::Red),
            "orange" => Ok(AnomalyLevel::Orange),
            "yellow" => Ok(AnomalyLevel::Yellow),
            _ => Err(format!("unknown anomaly level {s:?}")),
        }
    }
}

/// Growth multiplier applied to hunger when a hunger anomaly fires.
pub const HUNGER_MULTIPLIER: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    Random { fraction: f64 },
    Infectious { initial_count: u32, transmit_prob: f64 },
    Location { poi: u32 },
    Global { days: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub level: AnomalyLevel,
    pub assignment: Assignment,
    pub start_day: u32,
    pub end_day: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum AnomalyError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("anomaly spec line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid anomaly spec: {0}")]
    Invalid(String),
}

impl AnomalySpec {
    /// `[first tick, end tick)` of the whole spec window.
    pub fn window(&self) -> (u64, u64) {
        (self.start_day as u64 * TICKS_PER_DAY, (self.end_day as u64 + 1) * TICKS_PER_DAY)
    }

    /// Assignment episodes. Global specs yield one per run of consecutive listed days.
    pub fn episodes(&self) -> Vec<(u64, u64)> {
        match &self.assignment {
            Assignment::Global { days } => {
                let mut days = days.clone();
                days.sort_unstable();
                days.dedup();
                let mut out: Vec<(u64, u64)> = Vec::new();
                for d in days {
                    let (s, e) = (d as u64 * TICKS_PER_DAY, (d as u64 + 1) * TICKS_PER_DAY);
                    match out.last_mut() {
                        Some(last) if last.1 == s => last.1 = e,
                        _ => out.push((s, e)),
                    }
                }
                out
            }
            _ => vec![self.window()],
        }
    }

    pub fn validate(&self, map: &WorldMap, num_days: u32) -> Result<(), AnomalyError> {
        if self.start_day > self.end_day {
            return Err(AnomalyError::Invalid(format!("start day {} after end day {}", self.start_day, self.end_day)));
        }
        if self.end_day >= num_days {
            return Err(AnomalyError::Invalid(format!("end day {} beyond the {num_days}-day horizon", self.end_day)));
        }
        match &self.assignment {
            Assignment::Random { fraction } if !(0.0..=1.0).contains(fraction) => {
                Err(AnomalyError::Invalid(format!("fraction {fraction} outside [0, 1]")))
            }
            Assignment::Infectious { transmit_prob, .. } if !(0.0..=1.0).contains(transmit_prob) => {
                Err(AnomalyError::Invalid(format!("transmit probability {transmit_prob} outside [0, 1]")))
            }
            Assignment::Location { poi } if *poi as usize >= map.pois().len() => {
                Err(AnomalyError::Invalid(format!("trigger poi {poi} not in map")))
            }
            Assignment::Global { days } if days.is_empty() => Err(AnomalyError::Invalid("global anomaly lists no days".into())),
            Assignment::Global { days } if days.iter().any(|d| *d < self.start_day || *d > self.end_day) => {
                Err(AnomalyError::Invalid("global anomaly day outside its window".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AnomalySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "anomaly {} {} ", self.kind.as_str(), self.level.as_str())?;
        match &self.assignment {
            Assignment::Random { fraction } => write!(f, "random {fraction}")?,
            Assignment::Infectious { initial_count, transmit_prob } => write!(f, "infectious {initial_count} {transmit_prob}")?,
            Assignment::Location { poi } => write!(f, "location {poi}")?,
            Assignment::Global { days } => {
                let d: Vec<String> = days.iter().map(|d| d.to_string()).collect();
                write!(f, "global {}", d.join(","))?
            }
        }
        write!(f, " {} {}", self.start_day, self.end_day)
    }
}

/// One spec per line: `anomaly <kind> <level> <assignment...> <start_day> <end_day>`.
pub fn parse_anomaly_specs(text: &str) -> Result<Vec<AnomalySpec>, AnomalyError> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| AnomalyError::Parse { line: line_no, msg };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t[0] != "anomaly" || t.len() < 7 {
            return Err(err(format!("expected `anomaly <kind> <level> <assignment...> <start> <end>`, got {line:?}")));
        }
        let kind = t[1].parse::<AnomalyKind>().map_err(err)?;
        let level = t[2].parse::<AnomalyLevel>().map_err(err)?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let int = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad integer {s:?}")));
        let (assignment, rest) = match (t[3], t.len()) {
            ("random", 7) => (Assignment::Random { fraction: num(t[4])? }, &t[5..]),
            ("infectious", 8) => (Assignment::Infectious { initial_count: int(t[4])?, transmit_prob: num(t[5])? }, &t[6..]),
            ("location", 7) => (Assignment::Location { poi: int(t[4])? }, &t[5..]),
            ("global", 7) => {
                let days = t[4].split(',').map(int).collect::<Result<Vec<_>, _>>()?;
                (Assignment::Global { days }, &t[5..])
            }
            (other, _) => return Err(err(format!("bad assignment `{other}` or wrong field count"))),
        };
        specs.push(AnomalySpec { kind, level, assignment, start_day: int(rest[0])?, end_day: int(rest[1])? });
    }
    Ok(specs)
}

pub fn load_anomaly_specs(path: &Path) -> Result<Vec<AnomalySpec>, AnomalyError> {
    let text = fs::read_to_string(path).map_err(|source| AnomalyError::Io { path: path.display().to_string(), source })?;
    parse_anomaly_specs(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveAnomaly {
    /// Index of the spec that flagged the agent.
    pub spec: u32,
    pub kind: AnomalyKind,
    pub level: AnomalyLevel,
    pub onset_tick: u64,
    pub end_tick: u64,
}

impl ActiveAnomaly {
    pub fn covers(&self, tick: u64) -> bool {
        self.onset_tick <= tick && tick < self.end_tick
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthLabel {
    pub agent_id: u32,
    pub kind: AnomalyKind,
    pub level: AnomalyLevel,
    pub start_tick: u64,
    pub end_tick: u64,
}

impl GroundTruthLabel {
    pub fn to_record(self, tick: u64) -> LogRecord {
        LogRecord {
            tick,
            payload: Payload::GroundTruth {
                agent_id: self.agent_id,
                kind: self.kind,
                level: self.level,
                start_tick: self.start_tick,
                end_tick: self.end_tick,
            },
        }
    }
}

/// Where in the engine step an override may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionPoint {
    /// Every tick, while needs accrue.
    NeedAccrual,
    /// When an outing picks its recreation venue.
    RecreationChoice,
    /// Once per day, the first tick the anomaly is active that day.
    DayWorkPlan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Override {
    HungerGrowth(f64),
    RandomRecreation,
    SkipWorkToday,
}

/// Override for this decision point, or `None` when the agent has no active
/// anomaly of the matching kind or the intensity draw does not fire.
pub fn apply_anomaly(anomaly: Option<&ActiveAnomaly>, point: DecisionPoint, tick: u64, rng: &mut Rng) -> Option<Override> {
    let a = anomaly.filter(|a| a.covers(tick))?;
    let matches = matches!(
        (a.kind, point),
        (AnomalyKind::Hunger, DecisionPoint::NeedAccrual)
            | (AnomalyKind::Social, DecisionPoint::RecreationChoice)
            | (AnomalyKind::Work, DecisionPoint::DayWorkPlan)
    );
    if !matches || !rng.chance(a.level.probability()) {
        return None;
    }
    Some(match a.kind {
        AnomalyKind::Hunger => Override::HungerGrowth(HUNGER_MULTIPLIER),
        AnomalyKind::Social => Override::RandomRecreation,
        AnomalyKind::Work => Override::SkipWorkToday,
    })
}

/// Flags `agent` unless it already carries an anomaly. Returns the label record.
pub(crate) fn flag(agent: &mut Agent, spec_index: u32, spec: &AnomalySpec, tick: u64, end_tick: u64) -> Option<LogRecord> {
    if agent.exited() || agent.anomaly.is_some() {
        return None;
    }
    agent.anomaly = Some(ActiveAnomaly { spec: spec_index, kind: spec.kind, level: spec.level, onset_tick: tick, end_tick });
    Some(
        GroundTruthLabel { agent_id: agent.id, kind: spec.kind, level: spec.level, start_tick: tick, end_tick }
            .to_record(tick),
    )
}

/// Runs the assignment mechanism for one episode starting at `tick`.
pub fn assign_anomalies(
    agents: &mut [Agent],
    spec_index: u32,
    spec: &AnomalySpec,
    episode_end: u64,
    tick: u64,
    rng: &mut Rng,
    out: &mut Vec<LogRecord>,
) {
    match &spec.assignment {
        Assignment::Random { fraction } => {
            for a in agents.iter_mut().filter(|a| !a.exited()) {
                if rng.chance(*fraction) {
                    out.extend(flag(a, spec_index, spec, tick, episode_end));
                }
            }
        }
        Assignment::Infectious { initial_count, .. } => {
            let candidates: Vec<usize> =
                (0..agents.len()).filter(|&i| !agents[i].exited() && agents[i].anomaly.is_none()).collect();
            let mut chosen = rng.sample(&candidates, *initial_count as usize);
            chosen.sort_unstable();
            for i in chosen {
                out.extend(flag(&mut agents[i], spec_index, spec, tick, episode_end));
            }
        }
        Assignment::Location { .. } => {}
        Assignment::Global { .. } => {
            for a in agents.iter_mut() {
                out.extend(flag(a, spec_index, spec, tick, episode_end));
            }
        }
    }
}

/// One round of transmission: every unflagged agent sharing a venue with an
/// agent carrying this spec's anomaly catches it with `transmit_prob`, once
/// per infectious neighbour. Agents flagged this round do not transmit until
/// the next tick.
pub fn spread_infection(
    agents: &mut [Agent],
    spec_index: u32,
    transmit_prob: f64,
    spec: &AnomalySpec,
    tick: u64,
    rng: &mut Rng,
    out: &mut Vec<LogRecord>,
) {
    let (_, window_end) = spec.window();
    let mut by_venue: std::collections::BTreeMap<u32, (Vec<usize>, Vec<usize>)> = Default::default();
    for (i, a) in agents.iter().enumerate() {
        if a.exited() {
            continue;
        }
        let Some(loc) = a.location else { continue };
        let entry = by_venue.entry(loc).or_default();
        match &a.anomaly {
            Some(an) if an.spec == spec_index && an.covers(tick) => entry.0.push(i),
            None => entry.1.push(i),
            Some(_) => {}
        }
    }
    for (_, (carriers, susceptible)) in by_venue {
        if carriers.is_empty() {
            continue;
        }
        for s in susceptible {
            for _ in &carriers {
                if rng.chance(transmit_prob) {
                    out.extend(flag(&mut agents[s], spec_index, spec, tick, window_end));
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_probabilities() {
        assert_eq!(AnomalyLevel::Red.probability(), 1.0);
        assert_eq!(AnomalyLevel::Orange.probability(), 0.5);
        assert_eq!(AnomalyLevel::Yellow.probability(), 0.2);
    }

    #[test]
    fn parse_all_assignment_forms() {
        let text = "# scenario\n\
            anomaly work red global 5 5 5\n\
            anomaly hunger orange random 0.25 2 4\n\
            anomaly social yellow infectious 3 0.1 0 9\n\
            anomaly hunger red location 12 1 1\n";
        let specs = parse_anomaly_specs(text).unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].assignment, Assignment::Global { days: vec![5] });
        assert_eq!(specs[1].assignment, Assignment::Random { fraction: 0.25 });
        assert_eq!(specs[2].assignment, Assignment::Infectious { initial_count: 3, transmit_prob: 0.1 });
        assert_eq!(specs[3].assignment, Assignment::Location { poi: 12 });
        for s in &specs {
            assert_eq!(parse_anomaly_specs(&s.to_string()).unwrap()[0], *s);
        }
    }

    #[test]
    fn parse_errors() {
        assert!(parse_anomaly_specs("anomaly work purple global 1 1 1").is_err());
        assert!(parse_anomaly_specs("anomaly work red teleport 1 1 1").is_err());
        assert!(parse_anomaly_specs("anomaly work red random 0.5 1").is_err());
    }

    #[test]
    fn global_episodes_merge_consecutive_days() {
        let s = AnomalySpec {
            kind: AnomalyKind::Work,
            level: AnomalyLevel::Red,
            assignment: Assignment::Global { days: vec![3, 1, 2, 6] },
            start_day: 0,
            end_day: 9,
        };
        assert_eq!(s.episodes(), vec![(1440, 4 * 1440), (6 * 1440, 7 * 1440)]);
    }

    #[test]
    fn overrides_only_inside_window_and_kind() {
        let a = ActiveAnomaly { spec: 0, kind: AnomalyKind::Work, level: AnomalyLevel::Red, onset_tick: 100, end_tick: 200 };
        let mut rng = Rng::seed_from(1);
        assert_eq!(apply_anomaly(Some(&a), DecisionPoint::DayWorkPlan, 150, &mut rng), Some(Override::SkipWorkToday));
        assert_eq!(apply_anomaly(Some(&a), DecisionPoint::DayWorkPlan, 200, &mut rng), None);
        assert_eq!(apply_anomaly(Some(&a), DecisionPoint::DayWorkPlan, 99, &mut rng), None);
        assert_eq!(apply_anomaly(Some(&a), DecisionPoint::NeedAccrual, 150, &mut rng), None);
        assert_eq!(apply_anomaly(None, DecisionPoint::DayWorkPlan, 150, &mut rng), None);
    }

    #[test]
    fn yellow_fires_about_a_fifth_of_the_time() {
        let a = ActiveAnomaly { spec: 0, kind: AnomalyKind::Hunger, level: AnomalyLevel::Yellow, onset_tick: 0, end_tick: u64::MAX };
        let mut rng = Rng::seed_from(2);
        let n = 10_000;
        let hits = (0..n).filter(|&t| apply_anomaly(Some(&a), DecisionPoint::NeedAccrual, t, &mut rng).is_some()).count();
        // binomial(10000, 0.2): sd = 40
        assert!((1840..=2160).contains(&hits), "{hits}");
    }
}
