//! Parameter schema, validation, the `name = value` config format and the
//! canonical form used for hashing.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::digest::digest64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Real,
    Integer,
    Boolean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDef {
    pub name: &'static str,
    pub kind: ParamKind,
    pub min: f64,
    pub max: f64,
    pub default: f64,
    pub unit: &'static str,
}

const fn real(name: &'static str, min: f64, max: f64, default: f64, unit: &'static str) -> ParamDef {
    ParamDef { name, kind: ParamKind::Real, min, max, default, unit }
}

const fn int(name: &'static str, min: f64, max: f64, default: f64, unit: &'static str) -> ParamDef {
    ParamDef { name, kind: ParamKind::Integer, min, max, default, unit }
}

/// Positional order is part of the format: GA mixers and snapshots index by it.
static BUILTIN: [ParamDef; 18] = [
    real("joviality", 0.0, 1.0, 0.5, "fraction"),
    int("num_interests", 1.0, 10.0, 3.0, "count"),
    real("walk_speed_mps", 0.5, 3.0, 1.2, "m/s"),
    real("hunger_growth_per_tick", 1e-4, 1e-2, 0.0025, "1/tick"),
    real("hunger_threshold", 0.3, 0.95, 0.7, "level"),
    int("meal_duration_ticks", 10.0, 120.0, 30.0, "ticks"),
    real("energy_growth_per_tick", 1e-4, 5e-3, 0.001, "1/tick"),
    real("sleep_start_hour", 20.0, 24.0, 22.0, "hour"),
    real("sleep_duration_hours", 5.0, 10.0, 8.0, "hours"),
    real("work_start_hour", 6.0, 11.0, 9.0, "hour"),
    real("work_duration_hours", 4.0, 12.0, 8.0, "hours"),
    real("income_per_work_tick", 0.05, 2.0, 0.25, "currency/tick"),
    real("rent_per_day", 5.0, 200.0, 50.0, "currency/day"),
    real("rent_cost_ratio", 0.1, 0.9, 0.5, "fraction"),
    real("social_growth_per_tick", 1e-4, 1e-2, 0.002, "1/tick"),
    real("social_threshold", 0.3, 0.95, 0.6, "level"),
    real("exit_balance_threshold", -500.0, 0.0, -100.0, "currency"),
    ParamDef { name: "exit_enabled", kind: ParamKind::Boolean, min: 0.0, max: 1.0, default: 0.0, unit: "flag" },
];

/// Typed index into the built-in schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Param {
    Joviality,
    NumInterests,
    WalkSpeedMps,
    HungerGrowthPerTick,
    HungerThreshold,
    MealDurationTicks,
    EnergyGrowthPerTick,
    SleepStartHour,
    SleepDurationHours,
    WorkStartHour,
    WorkDurationHours,
    IncomePerWorkTick,
    RentPerDay,
    RentCostRatio,
    SocialGrowthPerTick,
    SocialThreshold,
    ExitBalanceThreshold,
    ExitEnabled,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSchema {
    entries: &'static [ParamDef],
}

impl ParamSchema {
    pub fn builtin() -> Self {
        ParamSchema { entries: &BUILTIN }
    }

    pub fn entries(&self) -> &'static [ParamDef] {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|d| d.name == name)
    }

    pub fn defaults(&self) -> Vec<f64> {
        self.entries.iter().map(|d| d.default).collect()
    }
}

impl Default for ParamSchema {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Keys accepted in a config file besides the schema entries.
pub const META_KEYS: [&str; 6] = [
    "seed",
    "num_agents",
    "num_days",
    "map_path",
    "schema_version",
    "sample_interval",
];

pub const DEFAULT_NUM_AGENTS: u32 = 100;
pub const DEFAULT_NUM_DAYS: u32 = 10;
pub const DEFAULT_SAMPLE_INTERVAL: u32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub values: Vec<f64>,
    pub seed: u64,
    pub num_agents: u32,
    pub num_days: u32,
    pub map_path: String,
    pub schema_version: u32,
    /// Ticks between agent-state records.
    pub sample_interval: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            values: ParamSchema::builtin().defaults(),
            seed: 0,
            num_agents: DEFAULT_NUM_AGENTS,
            num_days: DEFAULT_NUM_DAYS,
            map_path: String::new(),
            schema_version: SCHEMA_VERSION,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Length { expected: usize, got: usize },
    OutOfRange { name: String, value: f64, min: f64, max: f64 },
    NotIntegral { name: String, value: f64 },
    Meta { name: String, reason: String },
}

impl Violation {
    pub fn name(&self) -> Option<&str> {
        match self {
            Violation::Length { .. } => None,
            Violation::OutOfRange { name, .. }
            | Violation::NotIntegral { name, .. }
            | Violation::Meta { name, .. } => Some(name),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { expected, got } => {
                write!(f, "parameter vector has {got} entries, schema has {expected}")
            }
            Violation::OutOfRange { name, value, min, max } => {
                write!(f, "{name}={value} outside [{min}, {max}]")
            }
            Violation::NotIntegral { name, value } => write!(f, "{name}={value} must be integral"),
            Violation::Meta { name, reason } => write!(f, "{name}: {reason}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown parameter(s): {}", .0.join(", "))]
    Unknown(Vec<String>),
    #[error("invalid parameters: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("parameter {0} cannot be overridden")]
    NotOverridable(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl SimParams {
    pub fn get(&self, p: Param) -> f64 {
        self.values[p as usize]
    }

    pub fn set(&mut self, p: Param, v: f64) {
        self.values[p as usize] = v;
    }

    pub fn get_named(&self, name: &str) -> Option<f64> {
        ParamSchema::builtin().index_of(name).map(|i| self.values[i])
    }

    /// Canonical `name=value` lines, values with 17 significant digits.
    pub fn canonical_form(&self) -> String {
        let schema = ParamSchema::builtin();
        let mut lines: Vec<String> = schema
            .entries()
            .iter()
            .zip(&self.values)
            .map(|(d, v)| format!("{}={:.16e}", d.name, v))
            .collect();
        lines.push(format!("seed={}", self.seed));
        lines.push(format!("num_agents={}", self.num_agents));
        lines.push(format!("num_days={}", self.num_days));
        lines.push(format!("schema_version={}", self.schema_version));
        lines.push(format!("sample_interval={}", self.sample_interval));
        lines.join("\n")
    }

    pub fn hash(&self) -> u64 {
        params_hash(self)
    }

    /// Config-file rendering; `load_params` of the output reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let schema = ParamSchema::builtin();
        let mut out = String::new();
        for (d, v) in schema.entries().iter().zip(&self.values) {
            let rendered = match d.kind {
                ParamKind::Boolean => if *v != 0.0 { "true".to_string() } else { "false".to_string() },
                ParamKind::Integer => format!("{}", *v as i64),
                ParamKind::Real => format!("{v:?}"),
            };
            out.push_str(&format!("{} = {}\n", d.name, rendered));
        }
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("num_agents = {}\n", self.num_agents));
        out.push_str(&format!("num_days = {}\n", self.num_days));
        if !self.map_path.is_empty() {
            out.push_str(&format!("map_path = {}\n", self.map_path));
        }
        out.push_str(&format!("schema_version = {}\n", self.schema_version));
        out.push_str(&format!("sample_interval = {}\n", self.sample_interval));
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        fs::write(path, self.to_config_string()).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Applies `name=value` overrides (schema entries or meta keys), then validates.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<(), ParamsError> {
        let schema = ParamSchema::builtin();
        let mut unknown = Vec::new();
        for (name, value) in overrides {
            match assign(self, &schema, name, value) {
                Ok(true) => {}
                Ok(false) => unknown.push(name.clone()),
                Err(msg) => return Err(ParamsError::Parse { line: 0, msg }),
            }
        }
        if !unknown.is_empty() {
            return Err(ParamsError::Unknown(unknown));
        }
        validate_params(self, &schema).map_err(ParamsError::Invalid)
    }
}

pub fn params_hash(p: &SimParams) -> u64 {
    digest64(p.canonical_form().as_bytes())
}

/// Returns every violated constraint.
pub fn validate_params(p: &SimParams, s: &ParamSchema) -> Result<(), Vec<Violation>> {
    if p.values.len() != s.len() {
        return Err(vec![Violation::Length { expected: s.len(), got: p.values.len() }]);
    }
    let mut errs = Vec::new();
    for (d, &v) in s.entries().iter().zip(&p.values) {
        if !(v >= d.min && v <= d.max) {
            errs.push(Violation::OutOfRange { name: d.name.to_string(), value: v, min: d.min, max: d.max });
        } else if d.kind != ParamKind::Real && v.fract() != 0.0 {
            errs.push(Violation::NotIntegral { name: d.name.to_string(), value: v });
        }
    }
    if p.num_agents < 1 {
        errs.push(Violation::Meta { name: "num_agents".into(), reason: "must be at least 1".into() });
    }
    if p.num_days < 1 {
        errs.push(Violation::Meta { name: "num_days".into(), reason: "must be at least 1".into() });
    }
    if p.sample_interval < 1 {
        errs.push(Violation::Meta { name: "sample_interval".into(), reason: "must be at least 1".into() });
    }
    if p.schema_version != SCHEMA_VERSION {
        errs.push(Violation::Meta {
            name: "schema_version".into(),
            reason: format!("unsupported version {}, expected {}", p.schema_version, SCHEMA_VERSION),
        });
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Ok(false) means the key is unknown.
fn assign(p: &mut SimParams, schema: &ParamSchema, name: &str, raw: &str) -> Result<bool, String> {
    if let Some(i) = schema.index_of(name) {
        p.values[i] = parse_number(raw).ok_or_else(|| format!("{name}: cannot parse value {raw:?}"))?;
        return Ok(true);
    }
    let int = |raw: &str| raw.parse::<u64>().map_err(|_| format!("{name}: expected a non-negative integer, got {raw:?}"));
    let small = |raw: &str| int(raw).and_then(|v| u32::try_from(v).map_err(|_| format!("{name}: {v} too large")));
    match name {
        "seed" => p.seed = int(raw)?,
        "num_agents" => p.num_agents = small(raw)?,
        "num_days" => p.num_days = small(raw)?,
        "schema_version" => p.schema_version = small(raw)?,
        "sample_interval" => p.sample_interval = small(raw)?,
        "map_path" => p.map_path = raw.to_string(),
        _ => return Ok(false),
    }
    Ok(true)
}

fn parse_number(raw: &str) -> Option<f64> {
    match raw {
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

pub fn parse_params(text: &str) -> Result<SimParams, ParamsError> {
    let schema = ParamSchema::builtin();
    let mut p = SimParams::default();
    let mut seen: Vec<String> = Vec::new();
    let mut unknown = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| ParamsError::Parse { line: line_no, msg: format!("expected `name = value`, got {line:?}") })?;
        let (name, value) = (name.trim(), value.trim());
        if name.is_empty() || value.is_empty() {
            return Err(ParamsError::Parse { line: line_no, msg: "empty name or value".into() });
        }
        if seen.iter().any(|s| s == name) {
            return Err(ParamsError::Parse { line: line_no, msg: format!("duplicate key {name}") });
        }
        seen.push(name.to_string());
        match assign(&mut p, &schema, name, value) {
            Ok(true) => {}
            Ok(false) => unknown.push(name.to_string()),
            Err(msg) => return Err(ParamsError::Parse { line: line_no, msg }),
        }
    }
    if !unknown.is_empty() {
        return Err(ParamsError::Unknown(unknown));
    }
    validate_params(&p, &schema).map_err(ParamsError::Invalid)?;
    Ok(p)
}

pub fn load_params(path: &Path) -> Result<SimParams, ParamsError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ParamsError::Io { path: path.display().to_string(), source })?;
    parse_params(&text)
}

/// Parses `name=value` (as given to `--set`).
pub fn parse_assignment(s: &str) -> Result<(String, String), ParamsError> {
    let (n, v) = s
        .split_once('=')
        .ok_or_else(|| ParamsError::Parse { line: 0, msg: format!("expected name=value, got {s:?}") })?;
    Ok((n.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schema_is_well_formed() {
        let s = ParamSchema::builtin();
        assert_eq!(s.len(), 18);
        for (i, d) in s.entries().iter().enumerate() {
            assert!(d.min <= d.default && d.default <= d.max, "{}", d.name);
            assert_eq!(s.index_of(d.name), Some(i), "duplicate {}", d.name);
            match d.kind {
                ParamKind::Boolean => assert!(d.min == 0.0 && d.max == 1.0),
                ParamKind::Integer => {
                    assert_eq!(d.min.fract(), 0.0);
                    assert_eq!(d.max.fract(), 0.0);
                    assert_eq!(d.default.fract(), 0.0);
                }
                ParamKind::Real => {}
            }
        }
        assert_eq!(s.entries()[Param::ExitEnabled as usize].name, "exit_enabled");
        assert_eq!(s.entries()[Param::SocialThreshold as usize].name, "social_threshold");
    }

    #[test]
    fn empty_config_gives_defaults() {
        let p = parse_params("").unwrap();
        assert_eq!(p, SimParams::default());
        assert_eq!(p.seed, 0);
    }

    #[test]
    fn joviality_out_of_range_is_named() {
        let err = parse_params("joviality = 1.5\n").unwrap_err();
        match &err {
            ParamsError::Invalid(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].name(), Some("joviality"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("joviality"));
    }

    #[test]
    fn single_override() {
        let p = parse_params("# comment\nwalk_speed_mps = 1.4   # trailing\n").unwrap();
        let mut expected = SimParams::default();
        expected.set(Param::WalkSpeedMps, 1.4);
        assert_eq!(p, expected);
    }

    #[test]
    fn unknown_keys_listed() {
        match parse_params("walk_speed = 1.4\nfoo = 2\n").unwrap_err() {
            ParamsError::Unknown(names) => assert_eq!(names, vec!["walk_speed", "foo"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_parse_error() {
        assert!(matches!(parse_params("joviality 0.3"), Err(ParamsError::Parse { line: 1, .. })));
        assert!(matches!(parse_params("joviality = abc"), Err(ParamsError::Parse { .. })));
        assert!(matches!(parse_params("a = 1\na = 2"), Err(ParamsError::Parse { line: 2, .. })));
    }

    #[test]
    fn booleans_parse() {
        let p = parse_params("exit_enabled = true").unwrap();
        assert_eq!(p.get(Param::ExitEnabled), 1.0);
    }

    #[test]
    fn validate_defaults_ok() {
        assert!(validate_params(&SimParams::default(), &ParamSchema::builtin()).is_ok());
    }

    #[test]
    fn validate_reports_every_violation() {
        let mut p = SimParams::default();
        p.set(Param::Joviality, -1.0);
        p.set(Param::RentPerDay, 1000.0);
        assert_eq!(validate_params(&p, &ParamSchema::builtin()).unwrap_err().len(), 2);

        let mut q = SimParams::default();
        q.set(Param::NumInterests, 2.5);
        assert!(matches!(
            validate_params(&q, &ParamSchema::builtin()).unwrap_err()[0],
            Violation::NotIntegral { .. }
        ));
    }

    #[test]
    fn validate_length_mismatch() {
        let mut p = SimParams::default();
        p.values.pop();
        let errs = validate_params(&p, &ParamSchema::builtin()).unwrap_err();
        assert_eq!(errs, vec![Violation::Length { expected: 18, got: 17 }]);
    }

    #[test]
    fn hash_behaviour() {
        let a = SimParams::default();
        assert_eq!(params_hash(&a), params_hash(&a.clone()));
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(params_hash(&a), params_hash(&b));
        // map_path is not part of the digest
        let mut c = a.clone();
        c.map_path = "elsewhere.map".into();
        assert_eq!(params_hash(&a), params_hash(&c));
    }

    #[test]
    fn default_hash_is_pinned() {
        assert_eq!(params_hash(&SimParams::default()), DEFAULT_PARAMS_HASH);
    }

    const DEFAULT_PARAMS_HASH: u64 = 0xa411_53bc_d481_a23e;

    #[test]
    fn canonical_form_shape() {
        let c = SimParams::default().canonical_form();
        let first = c.lines().next().unwrap();
        assert_eq!(first, "joviality=5.0000000000000000e-1");
        assert!(!c.ends_with('\n'));
    }

    fn arb_params() -> impl Strategy<Value = SimParams> {
        let schema = ParamSchema::builtin();
        let coords: Vec<BoxedStrategy<f64>> = schema
            .entries()
            .iter()
            .map(|d| match d.kind {
                ParamKind::Real => (d.min..=d.max).boxed(),
                _ => ((d.min as i64)..=(d.max as i64)).prop_map(|v| v as f64).boxed(),
            })
            .collect();
        (coords, any::<u64>(), 1u32..5000, 1u32..400, 1u32..30).prop_map(|(values, seed, a, d, s)| SimParams {
            values,
            seed,
            num_agents: a,
            num_days: d,
            sample_interval: s,
            ..SimParams::default()
        })
    }

    proptest! {
        #[test]
        fn config_round_trip(p in arb_params()) {
            let back = parse_params(&p.to_config_string()).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.canonical_form(), p.canonical_form());
        }

        #[test]
        fn hash_tracks_canonical_form(a in arb_params(), b in arb_params()) {
            prop_assert_eq!(a.hash() == b.hash(), a.canonical_form() == b.canonical_form());
        }
    }
}
