//! Runs many independent simulations on local workers.
//!
//! Line mode drains the requests through a FIFO queue with `parallel`
//! workers. Batch mode splits them into consecutive groups and waits for a
//! whole group before starting the next. Workers are threads of one process;
//! each simulation is single-threaded and shares nothing mutable, so a run's
//! logs do not depend on which mode or worker executed it.
//!
//! Plan file, one request per line (`#` comments, relative paths resolve
//! against the plan file's directory):
//!
//! ```text
//! run <id> params=<file> map=<file> out=<dir> [anomalies=<file>] [resume=<snapshot>] [set=<name>=<value>]... [until=<tick>]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::anomaly::load_anomaly_specs;
use crate::checkpoint::{self, save_checkpoint, EXTENSION};
use crate::digest::to_hex;
use crate::engine::clock::TICKS_PER_DAY;
use crate::engine::{run_world, RunError, SimWorld};
use crate::exec::Exec;
use crate::logsys::{default_chunk_bytes, LogSet, LogSink, StreamHandle};
use crate::manifest::{run_manifest_file, ParamValue, PlanManifest, RunManifest, RunStatus, MANIFEST_VERSION};
use crate::params::{load_params, parse_assignment, ParamSchema, SimParams};
use crate::worldmap::{load_map, WorldMap};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckpointPolicy {
    pub every_days: Option<u32>,
    pub at_tick: Option<u64>,
}

impl CheckpointPolicy {
    fn due(&self, tick: u64) -> bool {
        self.at_tick == Some(tick)
            || self.every_days.is_some_and(|d| d > 0 && tick > 0 && tick % (d as u64 * TICKS_PER_DAY) == 0)
    }
}

pub fn checkpoint_path(out_dir: &Path, tick: u64) -> PathBuf {
    out_dir.join(format!("checkpoint.t{tick:08}.{EXTENSION}"))
}

#[derive(Debug, Clone, Default)]
pub struct RunRequest {
    pub run_id: String,
    /// Parameters to run with; loaded from `params_path` when absent.
    pub params: Option<SimParams>,
    pub params_path: Option<PathBuf>,
    pub map_path: PathBuf,
    pub anomalies_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// `name=value` overrides; applied to the snapshot's parameters when resuming.
    pub overrides: Vec<(String, String)>,
    pub until_tick: Option<u64>,
    pub checkpoints: CheckpointPolicy,
}

#[derive(Clone)]
pub struct RunOptions {
    pub chunk_bytes: u64,
    pub stream: Option<StreamHandle>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { chunk_bytes: default_chunk_bytes(), stream: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunPlan {
    pub requests: Vec<RunRequest>,
    pub batch: bool,
    pub parallel: usize,
    pub group_size: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("parallel must be at least 1")]
    ZeroParallel,
    #[error("batch mode needs group_size of at least 1")]
    ZeroGroup,
    #[error("duplicate run id {0}")]
    DuplicateId(String),
    #[error("runs {0} and {1} share output directory {2}")]
    SharedOutDir(String, String, String),
    #[error("plan line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl RunPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.parallel < 1 {
            return Err(PlanError::ZeroParallel);
        }
        if self.batch && self.group_size < 1 {
            return Err(PlanError::ZeroGroup);
        }
        let mut ids = BTreeSet::new();
        let mut dirs: BTreeMap<PathBuf, &str> = BTreeMap::new();
        for r in &self.requests {
            if !ids.insert(r.run_id.as_str()) {
                return Err(PlanError::DuplicateId(r.run_id.clone()));
            }
            let key = normalize(&r.out_dir);
            if let Some(other) = dirs.insert(key, &r.run_id) {
                return Err(PlanError::SharedOutDir(other.to_string(), r.run_id.clone(), r.out_dir.display().to_string()));
            }
        }
        Ok(())
    }
}

fn normalize(p: &Path) -> PathBuf {
    p.components().collect()
}

struct Outcome {
    params: Option<SimParams>,
    map_hash: Option<u64>,
    branch: Option<String>,
    anomalies_replaced: bool,
    checkpoints: Vec<String>,
    ticks: u64,
    exited: u32,
    records: [u64; 4],
    init_secs: f64,
    sim_secs: f64,
}

fn run_inner(req: &RunRequest, map: Result<Arc<WorldMap>, String>, opts: &RunOptions, out: &mut Outcome) -> Result<(), String> {
    let t0 = Instant::now();
    let map = map?;
    out.map_hash = Some(map.map_hash());
    let specs = match &req.anomalies_path {
        Some(p) => Some(load_anomaly_specs(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let chunk = opts.chunk_bytes;
    let (mut world, branch, mut sink) = match &req.resume {
        Some(snap) => {
            let r = checkpoint::resume(snap, map, &req.overrides, specs).map_err(|e| e.to_string())?;
            out.anomalies_replaced = r.anomalies_replaced;
            let sink = match r.writers {
                Some(pos) => LogSet::resume(&req.out_dir, chunk, r.branch.as_deref(), &pos),
                None => LogSet::create_branch(&req.out_dir, chunk, r.branch.as_deref()),
            }
            .map_err(|e| e.to_string())?;
            (r.world, r.branch, sink)
        }
        None => {
            let mut params = match (&req.params, &req.params_path) {
                (Some(p), _) => p.clone(),
                (None, Some(path)) => load_params(path).map_err(|e| e.to_string())?,
                (None, None) => return Err("no parameters given".into()),
            };
            if !req.overrides.is_empty() {
                params.apply_overrides(&req.overrides).map_err(|e| e.to_string())?;
            }
            out.params = Some(params.clone());
            let mut world = SimWorld::new(params, map).map_err(|e| e.to_string())?;
            world.set_anomalies(specs.unwrap_or_default()).map_err(|e| e.to_string())?;
            let sink = LogSet::create(&req.out_dir, chunk).map_err(|e| e.to_string())?;
            (world, None, sink)
        }
    };
    out.params = Some(world.params().clone());
    out.branch = branch.clone();
    if let Some(h) = &opts.stream {
        sink.attach_stream(h.clone());
    }
    out.init_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let start_tick = world.tick();
    let policy = req.checkpoints;
    let mut saved = Vec::new();
    let result = run_world(&mut world, &mut sink, req.until_tick, |w, s| {
        if policy.due(w.tick()) {
            let path = checkpoint_path(&req.out_dir, w.tick());
            save_checkpoint(w, s.positions(), branch.as_deref(), &path)
                .map_err(|e| RunError::Checkpoint { tick: w.tick(), msg: e.to_string() })?;
            saved.push(path.display().to_string());
        }
        Ok(())
    });
    out.checkpoints = saved;
    out.sim_secs = t1.elapsed().as_secs_f64();
    out.ticks = world.tick() - start_tick;
    out.exited = world.exited_count();
    out.records = sink.record_counts();
    result.map(|_| ()).map_err(|e| e.to_string())
}

/// Executes one request and describes the outcome. Never panics on bad
/// input; failures come back as `status = failed` with the diagnostic.
pub fn execute_request(req: &RunRequest, map: Result<Arc<WorldMap>, String>, opts: &RunOptions, epoch: Instant) -> RunManifest {
    let started_secs = epoch.elapsed().as_secs_f64();
    let mut out = Outcome {
        params: req.params.clone(),
        map_hash: None,
        branch: None,
        anomalies_replaced: false,
        checkpoints: Vec::new(),
        ticks: 0,
        exited: 0,
        records: [0; 4],
        init_secs: 0.0,
        sim_secs: 0.0,
    };
    let result = run_inner(req, map, opts, &mut out);
    let schema = ParamSchema::builtin();
    let p = out.params.clone().unwrap_or_default();
    let manifest = RunManifest {
        run_id: req.run_id.clone(),
        status: if result.is_ok() { RunStatus::Ok } else { RunStatus::Failed },
        error: result.err(),
        params_path: req.params_path.as_ref().map(|p| p.display().to_string()),
        params_hash: if out.params.is_some() { to_hex(p.hash()) } else { String::new() },
        seed: p.seed,
        num_agents: p.num_agents,
        num_days: p.num_days,
        params: if out.params.is_some() {
            schema.entries().iter().zip(&p.values).map(|(d, &v)| ParamValue { name: d.name.to_string(), value: v }).collect()
        } else {
            Vec::new()
        },
        map_path: req.map_path.display().to_string(),
        map_hash: out.map_hash.map(to_hex),
        anomalies_path: req.anomalies_path.as_ref().map(|p| p.display().to_string()),
        resumed_from: req.resume.as_ref().map(|p| p.display().to_string()),
        branch: out.branch,
        anomalies_replaced: out.anomalies_replaced,
        out_dir: req.out_dir.display().to_string(),
        checkpoints: out.checkpoints,
        ticks_executed: out.ticks,
        agents_exited: out.exited,
        records: out.records.into(),
        init_secs: out.init_secs,
        sim_secs: out.sim_secs,
        started_secs,
        finished_secs: epoch.elapsed().as_secs_f64(),
    };
    if req.out_dir.is_dir() {
        // the manifest is best effort here; the plan manifest carries the same data
        let _ = manifest.save(&req.out_dir.join(run_manifest_file(manifest.branch.as_deref())));
    }
    manifest
}

/// Loads a map once per distinct path.
pub fn load_maps<'a>(paths: impl IntoIterator<Item = &'a Path>) -> BTreeMap<PathBuf, Result<Arc<WorldMap>, String>> {
    let mut maps = BTreeMap::new();
    for p in paths {
        maps.entry(p.to_path_buf()).or_insert_with(|| load_map(p).map(Arc::new).map_err(|e| e.to_string()));
    }
    maps
}

/// Runs every request of `plan`; one failed run never stops its siblings.
pub fn execute_plan(plan: &RunPlan, opts: &RunOptions) -> Result<PlanManifest, PlanError> {
    plan.validate()?;
    let maps = load_maps(plan.requests.iter().map(|r| r.map_path.as_path()));
    let epoch = Instant::now();
    let exec = Exec::with_workers(plan.parallel);
    let job = |_: usize, r: &RunRequest| execute_request(r, maps[&r.map_path].clone(), opts, epoch);
    let runs = if plan.batch {
        exec.groups(&plan.requests, plan.group_size, job)
    } else {
        exec.queue(&plan.requests, job)
    };
    Ok(PlanManifest {
        manifest_version: MANIFEST_VERSION,
        mode: if plan.batch { "batch" } else { "line" }.to_string(),
        parallel: plan.parallel,
        group_size: plan.batch.then_some(plan.group_size),
        runs,
    })
}

pub fn parse_plan(text: &str, base: &Path) -> Result<Vec<RunRequest>, PlanError> {
    let resolve = |s: &str| {
        let p = Path::new(s);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| PlanError::Parse { line: i + 1, msg };
        let mut words = line.split_whitespace();
        if words.next() != Some("run") {
            return Err(err("expected `run <id> key=value...`".into()));
        }
        let id = words.next().ok_or_else(|| err("missing run id".into()))?;
        let mut req = RunRequest { run_id: id.to_string(), ..RunRequest::default() };
        let (mut have_map, mut have_out) = (false, false);
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| err(format!("expected key=value, got {w:?}")))?;
            match k {
                "params" => req.params_path = Some(resolve(v)),
                "map" => {
                    req.map_path = resolve(v);
                    have_map = true;
                }
                "out" => {
                    req.out_dir = resolve(v);
                    have_out = true;
                }
                "anomalies" => req.anomalies_path = Some(resolve(v)),
                "resume" => req.resume = Some(resolve(v)),
                "set" => req.overrides.push(parse_assignment(v).map_err(|e| err(e.to_string()))?),
                "until" => req.until_tick = Some(v.parse().map_err(|_| err(format!("bad tick {v:?}")))?),
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        if !have_map || !have_out {
            return Err(err("map= and out= are required".into()));
        }
        if req.params_path.is_none() && req.resume.is_none() {
            return Err(err("params= is required unless resume= is given".into()));
        }
        out.push(req);
    }
    Ok(out)
}

pub fn load_plan(path: &Path) -> Result<Vec<RunRequest>, PlanError> {
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io { path: path.display().to_string(), source })?;
    parse_plan(&text, path.parent().unwrap_or(Path::new(".")))
}
