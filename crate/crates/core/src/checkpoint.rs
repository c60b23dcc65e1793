//! Portable `.polck` snapshots of a paused simulation.
//!
//! Layout (all integers little-endian, floats as IEEE-754 bit patterns):
//!
//! ```text
//! magic "POLCK\r\n\x1a"  format_version:u32
//! section*               tag:[u8;4] len:u64 payload[len]
//! digest:u64             digest64 over every preceding byte
//! ```
//!
//! Sections, in order: `META` (tick, agent count, hashes), `PARM`, `RNG `,
//! `AGNT`, `WRLD` (co-location counters, anomaly schedule, branch id) and
//! `WRTR` (per-table writer positions). Format 1 had no `WRTR` section; such
//! files can be inspected but not resumed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::anomaly::{parse_anomaly_specs, ActiveAnomaly, AnomalyKind, AnomalyLevel, AnomalySpec};
use crate::digest::{digest64, to_hex, Digest64};
use crate::engine::{Activity, Agent, EngineError, NeedLevels, Purpose, SimWorld};
use crate::logsys::WriterPosition;
use crate::params::{ParamsError, SimParams};
use crate::rng::Rng;
use crate::worldmap::WorldMap;

pub const MAGIC: [u8; 8] = *b"POLCK\r\n\x1a";
pub const FORMAT_VERSION: u32 = 2;
pub const EXTENSION: &str = "polck";

/// Parameters that would invalidate serialized state if changed on resume.
pub const NON_RESUMABLE: [&str; 4] = ["seed", "num_agents", "map_path", "schema_version"];

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("snapshot truncated: {0}")]
    Truncated(String),
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("snapshot integrity check failed: stored digest {stored}, computed {computed}")]
    Integrity { stored: String, computed: String },
    #[error("snapshot format {found} cannot be resumed by this build (format {supported}); re-create it with a current build")]
    Version { found: u32, supported: u32 },
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error("map hash mismatch: snapshot was taken on map {snapshot}, provided map is {provided}")]
    MapMismatch { snapshot: String, provided: String },
    #[error("parameter {0} cannot be overridden on resume")]
    NotResumable(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Everything needed to continue a run, given the map.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub format_version: u32,
    pub tick: u64,
    pub params: SimParams,
    pub params_hash: u64,
    pub map_hash: u64,
    pub rng: [u64; 4],
    pub agents: Vec<Agent>,
    pub colocation: BTreeMap<(u32, u32), u32>,
    pub anomalies: Vec<AnomalySpec>,
    /// Branch the writer positions belong to.
    pub branch: Option<String>,
    pub writers: [WriterPosition; 4],
}

impl Snapshot {
    /// Captures `world` between ticks.
    pub fn capture(world: &SimWorld, writers: Option<[WriterPosition; 4]>, branch: Option<&str>) -> Self {
        Snapshot {
            format_version: FORMAT_VERSION,
            tick: world.tick,
            params: world.params.clone(),
            params_hash: world.params.hash(),
            map_hash: world.map.map_hash(),
            rng: world.rng.state(),
            agents: world.agents.clone(),
            colocation: world.colocation.clone(),
            anomalies: world.anomalies.clone(),
            branch: branch.map(str::to_string),
            writers: writers.unwrap_or_default(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256 + self.agents.len() * 160);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());

        let mut meta = Enc::default();
        meta.u64(self.tick);
        meta.u32(self.agents.len() as u32);
        meta.u64(self.params_hash);
        meta.u64(self.map_hash);
        section(&mut out, b"META", meta);

        let mut p = Enc::default();
        p.u32(self.params.schema_version);
        p.u64(self.params.seed);
        p.u32(self.params.num_agents);
        p.u32(self.params.num_days);
        p.u32(self.params.sample_interval);
        p.str(&self.params.map_path);
        p.u32(self.params.values.len() as u32);
        for &v in &self.params.values {
            p.f64(v);
        }
        section(&mut out, b"PARM", p);

        let mut r = Enc::default();
        for s in self.rng {
            r.u64(s);
        }
        section(&mut out, b"RNG ", r);

        let mut a = Enc::default();
        a.u32(self.agents.len() as u32);
        for agent in &self.agents {
            encode_agent(&mut a, agent);
        }
        section(&mut out, b"AGNT", a);

        let mut w = Enc::default();
        w.u32(self.colocation.len() as u32);
        for (&(x, y), &c) in &self.colocation {
            w.u32(x);
            w.u32(y);
            w.u32(c);
        }
        w.u32(self.anomalies.len() as u32);
        for s in &self.anomalies {
            w.str(&s.to_string());
        }
        w.opt_str(self.branch.as_deref());
        section(&mut out, b"WRLD", w);

        if self.format_version >= 2 {
            let mut wr = Enc::default();
            for pos in &self.writers {
                wr.u8(pos.opened as u8);
                wr.u32(pos.chunk_index);
                wr.u64(pos.bytes_in_chunk);
                wr.u64(pos.rows_in_chunk);
                wr.u64(pos.records);
            }
            section(&mut out, b"WRTR", wr);
        }

        let d = digest64(&out);
        out.extend_from_slice(&d.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (version, sections) = split_sections(bytes)?;
        let get = |tag: &'static [u8; 4]| -> Result<Dec<'_>, CheckpointError> {
            sections
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, body)| Dec::new(body, tag))
                .ok_or_else(|| CheckpointError::Malformed(format!("missing section {}", String::from_utf8_lossy(tag))))
        };

        let mut m = get(b"META")?;
        let tick = m.u64()?;
        let meta_agents = m.u32()?;
        let params_hash = m.u64()?;
        let map_hash = m.u64()?;

        let mut p = get(b"PARM")?;
        let schema_version = p.u32()?;
        let seed = p.u64()?;
        let num_agents = p.u32()?;
        let num_days = p.u32()?;
        let sample_interval = p.u32()?;
        let map_path = p.str()?;
        let n = p.len()?;
        let values = (0..n).map(|_| p.f64()).collect::<Result<Vec<_>, _>>()?;
        let params = SimParams { values, seed, num_agents, num_days, map_path, schema_version, sample_interval };

        let mut r = get(b"RNG ")?;
        let rng = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];

        let mut a = get(b"AGNT")?;
        let n = a.len()?;
        let agents = (0..n).map(|_| decode_agent(&mut a)).collect::<Result<Vec<_>, _>>()?;
        if agents.len() != meta_agents as usize {
            return Err(CheckpointError::Malformed("agent count disagrees with META".into()));
        }

        let mut w = get(b"WRLD")?;
        let n = w.len()?;
        let mut colocation = BTreeMap::new();
        for _ in 0..n {
            colocation.insert((w.u32()?, w.u32()?), w.u32()?);
        }
        let n = w.len()?;
        let mut anomalies = Vec::with_capacity(n);
        for _ in 0..n {
            let line = w.str()?;
            let mut parsed = parse_anomaly_specs(&line).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            anomalies.push(parsed.pop().ok_or_else(|| CheckpointError::Malformed("empty anomaly spec".into()))?);
        }
        let branch = w.opt_str()?;

        let mut writers = [WriterPosition::default(); 4];
        if version >= 2 {
            let mut wr = get(b"WRTR")?;
            for pos in writers.iter_mut() {
                *pos = WriterPosition {
                    opened: wr.u8()? != 0,
                    chunk_index: wr.u32()?,
                    bytes_in_chunk: wr.u64()?,
                    rows_in_chunk: wr.u64()?,
                    records: wr.u64()?,
                };
            }
        }

        Ok(Snapshot {
            format_version: version,
            tick,
            params,
            params_hash,
            map_hash,
            rng,
            agents,
            colocation,
            anomalies,
            branch,
            writers,
        })
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: Enc) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(body.0.len() as u64).to_le_bytes());
    out.extend_from_slice(&body.0);
}

type Sections<'a> = Vec<([u8; 4], &'a [u8])>;

/// Checks magic, digest and section framing.
fn split_sections(bytes: &[u8]) -> Result<(u32, Sections<'_>), CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        if !bytes.is_empty() && !MAGIC.starts_with(&bytes[..bytes.len().min(MAGIC.len())]) {
            return Err(CheckpointError::BadMagic);
        }
        return Err(CheckpointError::Truncated(format!("{} bytes is shorter than the fixed header", bytes.len())));
    }
    if bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));

    let mut sections = Vec::new();
    let mut at = 12;
    while at < body_end {
        if body_end - at < 12 {
            return Err(CheckpointError::Truncated(format!("section header cut at byte {at}")));
        }
        let tag: [u8; 4] = bytes[at..at + 4].try_into().expect("4 bytes");
        let len = u64::from_le_bytes(bytes[at + 4..at + 12].try_into().expect("8 bytes"));
        at += 12;
        if len > (body_end - at) as u64 {
            return Err(CheckpointError::Truncated(format!(
                "section {} declares {len} bytes, {} remain",
                String::from_utf8_lossy(&tag),
                body_end - at
            )));
        }
        sections.push((tag, &bytes[at..at + len as usize]));
        at += len as usize;
    }
    let computed = digest64(&bytes[..body_end]);
    if computed != stored {
        return Err(CheckpointError::Integrity { stored: to_hex(stored), computed: to_hex(computed) });
    }
    Ok((version, sections))
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn opt_u32(&mut self, v: Option<u32>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.u32(x);
            }
            None => self.u8(0),
        }
    }
    fn opt_str(&mut self, v: Option<&str>) {
        match v {
            Some(s) => {
                self.u8(1);
                self.str(s);
            }
            None => self.u8(0),
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    at: usize,
    tag: &'static [u8; 4],
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], tag: &'static [u8; 4]) -> Self {
        Dec { buf, at: 0, tag }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.at < n {
            return Err(CheckpointError::Malformed(format!(
                "section {} ends early at byte {}",
                String::from_utf8_lossy(self.tag),
                self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// A u32 element count, sanity-checked against the bytes left.
    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u32()? as usize;
        if n > self.buf.len() - self.at {
            return Err(CheckpointError::Malformed(format!("implausible count {n}")));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Malformed("non-utf8 string".into()))
    }
    fn opt_u32(&mut self) -> Result<Option<u32>, CheckpointError> {
        Ok(if self.u8()? != 0 { Some(self.u32()?) } else { None })
    }
    fn opt_str(&mut self) -> Result<Option<String>, CheckpointError> {
        Ok(if self.u8()? != 0 { Some(self.str()?) } else { None })
    }
}

fn purpose_code(p: Purpose) -> u8 {
    match p {
        Purpose::Home => 0,
        Purpose::Sleep => 1,
        Purpose::Work => 2,
        Purpose::Eat => 3,
        Purpose::Recreate => 4,
    }
}

fn purpose_from(c: u8) -> Result<Purpose, CheckpointError> {
    Ok(match c {
        0 => Purpose::Home,
        1 => Purpose::Sleep,
        2 => Purpose::Work,
        3 => Purpose::Eat,
        4 => Purpose::Recreate,
        _ => return Err(CheckpointError::Malformed(format!("bad purpose code {c}"))),
    })
}

fn encode_agent(e: &mut Enc, a: &Agent) {
    e.u32(a.id);
    e.f64(a.x);
    e.f64(a.y);
    e.u32(a.home);
    e.u32(a.work);
    match a.activity {
        Activity::AtHome => e.u8(0),
        Activity::Sleeping => e.u8(1),
        Activity::Working => e.u8(2),
        Activity::Eating => e.u8(3),
        Activity::Recreating => e.u8(4),
        Activity::Traveling { target, purpose } => {
            e.u8(5);
            e.u32(target);
            e.u8(purpose_code(purpose));
        }
        Activity::Exited => e.u8(6),
    }
    e.opt_u32(a.location);
    e.f64(a.needs.hunger);
    e.f64(a.needs.energy_deficit);
    e.f64(a.needs.social);
    e.f64(a.balance);
    e.u32(a.friends.len() as u32);
    for &f in &a.friends {
        e.u32(f);
    }
    e.u32(a.interests.len() as u32);
    for &i in &a.interests {
        e.u32(i);
    }
    match a.anomaly {
        Some(an) => {
            e.u8(1);
            e.u32(an.spec);
            e.u8(an.kind.code());
            e.u8(an.level.code());
            e.u64(an.onset_tick);
            e.u64(an.end_tick);
        }
        None => e.u8(0),
    }
    e.u32(a.meal_left);
    e.opt_u32(a.rec_target);
    match a.work_plan {
        Some((day, skip)) => {
            e.u8(1);
            e.u32(day);
            e.u8(skip as u8);
        }
        None => e.u8(0),
    }
    e.u32(a.days_below);
    e.u64(a.working_ticks);
    e.u32(a.restaurant_meals);
    e.u32(a.home_meals);
}

fn decode_agent(d: &mut Dec<'_>) -> Result<Agent, CheckpointError> {
    let id = d.u32()?;
    let x = d.f64()?;
    let y = d.f64()?;
    let home = d.u32()?;
    let work = d.u32()?;
    let activity = match d.u8()? {
        0 => Activity::AtHome,
        1 => Activity::Sleeping,
        2 => Activity::Working,
        3 => Activity::Eating,
        4 => Activity::Recreating,
        5 => Activity::Traveling { target: d.u32()?, purpose: purpose_from(d.u8()?)? },
        6 => Activity::Exited,
        c => return Err(CheckpointError::Malformed(format!("bad activity code {c}"))),
    };
    let location = d.opt_u32()?;
    let needs = NeedLevels { hunger: d.f64()?, energy_deficit: d.f64()?, social: d.f64()? };
    let balance = d.f64()?;
    let n = d.len()?;
    let friends = (0..n).map(|_| d.u32()).collect::<Result<BTreeSet<_>, _>>()?;
    let n = d.len()?;
    let interests = (0..n).map(|_| d.u32()).collect::<Result<Vec<_>, _>>()?;
    let anomaly = if d.u8()? != 0 {
        let spec = d.u32()?;
        let kind = AnomalyKind::from_code(d.u8()?).ok_or_else(|| CheckpointError::Malformed("bad anomaly kind".into()))?;
        let level =
            AnomalyLevel::from_code(d.u8()?).ok_or_else(|| CheckpointError::Malformed("bad anomaly level".into()))?;
        Some(ActiveAnomaly { spec, kind, level, onset_tick: d.u64()?, end_tick: d.u64()? })
    } else {
        None
    };
    let meal_left = d.u32()?;
    let rec_target = d.opt_u32()?;
    let work_plan = if d.u8()? != 0 { Some((d.u32()?, d.u8()? != 0)) } else { None };
    Ok(Agent {
        id,
        x,
        y,
        home,
        work,
        activity,
        location,
        needs,
        balance,
        friends,
        interests,
        anomaly,
        meal_left,
        rec_target,
        work_plan,
        days_below: d.u32()?,
        working_ticks: d.u64()?,
        restaurant_meals: d.u32()?,
        home_meals: d.u32()?,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

/// Saves `world` (which must be between ticks, as it always is outside
/// [`SimWorld::step`]). Returns the file's trailing digest.
pub fn save_checkpoint(
    world: &SimWorld,
    writers: Option<[WriterPosition; 4]>,
    branch: Option<&str>,
    path: &Path,
) -> Result<u64, CheckpointError> {
    let bytes = Snapshot::capture(world, writers, branch).encode();
    write_atomic(path, &bytes)?;
    Ok(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes")))
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot, CheckpointError> {
    Snapshot::decode(&read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSummary {
    pub format_version: u32,
    pub tick: u64,
    pub num_agents: u32,
    pub params_hash: u64,
    pub map_hash: u64,
    /// Present when the file predates the current format.
    pub upgrade_note: Option<String>,
}

impl std::fmt::Display for SnapshotSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "format_version={}", self.format_version)?;
        writeln!(f, "tick={}", self.tick)?;
        writeln!(f, "num_agents={}", self.num_agents)?;
        writeln!(f, "params_hash={}", to_hex(self.params_hash))?;
        write!(f, "map_hash={}", to_hex(self.map_hash))?;
        if let Some(n) = &self.upgrade_note {
            write!(f, "\nnote={n}")?;
        }
        Ok(())
    }
}

/// Reads the header and `META` section only; agent payloads are not decoded.
pub fn inspect(path: &Path) -> Result<SnapshotSummary, CheckpointError> {
    let bytes = read(path)?;
    let (version, sections) = split_sections(&bytes)?;
    let (_, body) = sections
        .iter()
        .find(|(t, _)| t == b"META")
        .ok_or_else(|| CheckpointError::Malformed("missing section META".into()))?;
    let mut m = Dec::new(body, b"META");
    let tick = m.u64()?;
    let num_agents = m.u32()?;
    let params_hash = m.u64()?;
    let map_hash = m.u64()?;
    let upgrade_note = (version < FORMAT_VERSION).then(|| {
        format!("format {version} predates format {FORMAT_VERSION} (no writer positions); upgrade needed before resume")
    });
    Ok(SnapshotSummary { format_version: version, tick, num_agents, params_hash, map_hash, upgrade_note })
}

/// A reconstructed world plus what its log writers need to continue.
#[derive(Debug)]
pub struct Resumed {
    pub world: SimWorld,
    /// Branch id for subsequent log file names; `None` on the main line.
    pub branch: Option<String>,
    /// Writer positions to continue from, or `None` when a new branch starts fresh files.
    pub writers: Option<[WriterPosition; 4]>,
    pub anomalies_replaced: bool,
    pub snapshot_digest: u64,
}

/// Rebuilds the world saved at `path`.
///
/// `overrides` may change any behavioural parameter and extend `num_days`;
/// doing so starts a new branch whose id is derived from the snapshot and the
/// overrides. `anomalies`, when given, replaces the saved schedule (also a
/// branch).
pub fn resume(
    path: &Path,
    map: Arc<WorldMap>,
    overrides: &[(String, String)],
    anomalies: Option<Vec<AnomalySpec>>,
) -> Result<Resumed, CheckpointError> {
    let bytes = read(path)?;
    let snap = Snapshot::decode(&bytes)?;
    if snap.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: snap.format_version, supported: FORMAT_VERSION });
    }
    if snap.map_hash != map.map_hash() {
        return Err(CheckpointError::MapMismatch { snapshot: to_hex(snap.map_hash), provided: to_hex(map.map_hash()) });
    }
    if snap.params.hash() != snap.params_hash {
        return Err(CheckpointError::Malformed("params hash does not match stored params".into()));
    }
    if let Some((name, _)) = overrides.iter().find(|(n, _)| NON_RESUMABLE.contains(&n.as_str())) {
        return Err(CheckpointError::NotResumable(name.clone()));
    }
    let mut params = snap.params.clone();
    params.apply_overrides(overrides)?;
    let elapsed_days = snap.tick.div_ceil(crate::engine::clock::TICKS_PER_DAY);
    if (params.num_days as u64) < elapsed_days {
        return Err(CheckpointError::NotResumable(format!("num_days (below the {elapsed_days} days already simulated)")));
    }
    let changed = params.canonical_form() != snap.params.canonical_form();

    let anomalies_replaced = anomalies.is_some();
    let specs = anomalies.unwrap_or_else(|| snap.anomalies.clone());
    let snapshot_digest = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));

    // extending the horizon alone keeps the main line; anything behavioural branches
    let mut structural = snap.params.clone();
    structural.num_days = params.num_days;
    let behavioural_change = changed && structural.canonical_form() != params.canonical_form();
    let (branch, writers) = if behavioural_change || anomalies_replaced {
        let mut d = Digest64::new();
        d.update(&snapshot_digest.to_le_bytes());
        d.update(params.canonical_form().as_bytes());
        for s in &specs {
            d.update(s.to_string().as_bytes());
            d.update(b"\n");
        }
        (Some(format!("br{}", &to_hex(d.finish())[..8])), None)
    } else {
        (snap.branch.clone(), Some(snap.writers))
    };

    let mut world = SimWorld::from_parts(
        snap.params.clone(),
        map,
        snap.tick,
        Rng::from_state(snap.rng),
        snap.agents,
        snap.colocation,
        snap.anomalies,
    );
    world.set_params(params);
    if anomalies_replaced {
        world.set_anomalies(specs)?;
    }
    Ok(Resumed { world, branch, writers, anomalies_replaced, snapshot_digest })
}

#[cfg(test)]
mod tests;
