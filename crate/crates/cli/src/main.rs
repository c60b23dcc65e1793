//! `polgen` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input, 3 runtime or I/O failure.
//! Errors go to stderr as `error[<kind>]: <message>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use polgen::anomaly::{load_anomaly_specs, AnomalyError};
use polgen::calibrate::{evolve, GaConfig, GaReport};
use polgen::checkpoint::{self, CheckpointError};
use polgen::exec::Exec;
use polgen::logsys::{default_chunk_bytes, serve, stream_tap, StreamMode, Table};
use polgen::manifest::{RunManifest, RunStatus, run_manifest_file};
use polgen::metrics::{
    compute_metrics, extract_trips_with, load_reference, samples_from_csv, similarity, MetricsError,
    DEFAULT_STAY_MIN_SAMPLES, DEFAULT_STAY_RADIUS_M,
};
use polgen::params::{load_params, parse_assignment, ParamSchema, ParamsError, SimParams};
use polgen::process::{run_process, ProcessError, ProcessSpec};
use polgen::runner::{execute_plan, execute_request, load_plan, CheckpointPolicy, RunOptions, RunPlan, RunRequest};
use polgen::viz::{self, VizError, VizKind};
use polgen::worldmap::{generate_map, load_map, save_map, MapError, PoiCounts, WorldMap};

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn invalid(msg: impl ToString) -> CliError {
    CliError::Validation(msg.to_string())
}

fn runtime(msg: impl ToString) -> CliError {
    CliError::Runtime(msg.to_string())
}

impl From<ParamsError> for CliError {
    fn from(e: ParamsError) -> Self {
        match e {
            ParamsError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<AnomalyError> for CliError {
    fn from(e: AnomalyError) -> Self {
        match e {
            AnomalyError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } | CheckpointError::Engine(_) => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<ProcessError> for CliError {
    fn from(e: ProcessError) -> Self {
        match e {
            ProcessError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        invalid(e)
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

#[derive(Parser)]
#[command(name = "polgen", version, about = "Needs-driven agent-based mobility data generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic map.
    MapGen(MapGenArgs),
    /// Run one simulation.
    Run(RunArgs),
    /// Run a plan of simulations in batch or line mode.
    RunMany(RunManyArgs),
    /// Calibrate parameters against reference metrics.
    Calibrate(CalibrateArgs),
    /// Compute trip metrics of a finished run.
    Metrics(MetricsArgs),
    /// Concatenate, merge, trim, select and convert logs.
    Process(ProcessArgs),
    /// Snapshot utilities.
    Checkpoint {
        #[command(subcommand)]
        command: CheckpointCommand,
    },
    /// Continue a run from a snapshot.
    Resume(ResumeArgs),
    /// Subscribe to a running simulation's log stream.
    StreamTap(TapArgs),
    /// Aggregate logs into tidy tables for plotting.
    VizExport(VizArgs),
}

#[derive(Subcommand)]
enum CheckpointCommand {
    /// Print snapshot metadata.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct MapGenArgs {
    #[arg(long)]
    width: f64,
    #[arg(long)]
    height: f64,
    #[arg(long)]
    homes: u32,
    #[arg(long)]
    workplaces: u32,
    #[arg(long)]
    restaurants: u32,
    #[arg(long)]
    recreation: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    origin_lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    origin_lon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Save a snapshot at every multiple of this many days.
    #[arg(long)]
    checkpoint_every_days: Option<u32>,
    /// Save a snapshot when this tick is reached.
    #[arg(long)]
    checkpoint_at_tick: Option<u64>,
}

#[derive(Args)]
struct OutputArgs {
    /// Chunk size in bytes (default from POLGEN_CHUNK_BYTES or 512 MiB).
    #[arg(long)]
    chunk_bytes: Option<u64>,
    /// Serve the log stream on this address (for example 127.0.0.1:0).
    #[arg(long)]
    serve: Option<String>,
    #[arg(long, default_value = "lossless")]
    stream_mode: String,
    /// With --serve, wait up to 30 s for this many subscribers before starting.
    #[arg(long, default_value_t = 0)]
    wait_subscribers: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    anomalies: Option<PathBuf>,
    /// Overrides the seed from the parameter file.
    #[arg(long)]
    seed: Option<u64>,
    /// `name=value` parameter override; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    until_tick: Option<u64>,
    #[arg(long, default_value = "run")]
    run_id: String,
    #[command(flatten)]
    checkpoints: CheckpointArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ResumeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the snapshot's anomaly schedule (creates a branch).
    #[arg(long)]
    anomalies: Option<PathBuf>,
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    until_tick: Option<u64>,
    #[arg(long, default_value = "resume")]
    run_id: String,
    #[command(flatten)]
    checkpoints: CheckpointArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RunManyArgs {
    /// Plan file with one `run <id> params=.. map=.. out=..` line per run.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    batch: bool,
    #[arg(long, default_value_t = 1)]
    group_size: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Where to write the plan manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    chunk_bytes: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    map: PathBuf,
    /// Reference metrics file (`ADT ADA MXD MDD`).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Parameter files to include unchanged in the first generation.
    #[arg(long)]
    warm: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pool_size: usize,
    #[arg(long, default_value_t = 16)]
    layer_size: usize,
    #[arg(long, default_value_t = 4)]
    parents: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    cull_threshold: f64,
    #[arg(long, default_value_t = 20)]
    max_generations: u32,
    #[arg(long, default_value_t = 5)]
    patience: u32,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long, default_value_t = 200)]
    agents: u32,
    #[arg(long, default_value_t = 7)]
    days: u32,
    /// Evaluation workers; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run output directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    branch: Option<String>,
    /// Population size; read from the run manifest when omitted.
    #[arg(long)]
    agents: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    /// Also print the similarity to this reference.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write the metrics file here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STAY_RADIUS_M)]
    stay_radius: f64,
    #[arg(long, default_value_t = DEFAULT_STAY_MIN_SAMPLES)]
    stay_samples: usize,
}

#[derive(Args)]
struct ProcessArgs {
    /// One or more run directories; more than one adds a run_id column.
    #[arg(long = "in", num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    table: String,
    #[arg(long)]
    branch: Option<String>,
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Keep ticks in `T0:T1` (end exclusive).
    #[arg(long)]
    trim: Option<String>,
    #[arg(long)]
    convert: bool,
    #[arg(long, allow_hyphen_values = true)]
    origin_lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    origin_lon: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TapArgs {
    #[arg(long)]
    addr: String,
    /// Comma-separated tables or `*`.
    #[arg(long, value_delimiter = ',', default_value = "*")]
    tables: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VizArgs {
    /// checkins_per_day_by_venue, need_traces, trip_histogram or ga_scores.
    #[arg(long, value_parser = parse_viz_kind)]
    kind: VizKind,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_viz_kind(s: &str) -> Result<VizKind, String> {
    s.parse().map_err(|e: VizError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, msg) = match &e {
                CliError::Validation(m) => ("validation", m),
                CliError::Runtime(m) => ("runtime", m),
            };
            eprintln!("error[{kind}]: {msg}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::MapGen(a) => map_gen(a),
        Command::Run(a) => run(a),
        Command::RunMany(a) => run_many(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Metrics(a) => metrics(a),
        Command::Process(a) => process(a),
        Command::Checkpoint { command: CheckpointCommand::Inspect { path } } => {
            let s = checkpoint::inspect(&path)?;
            println!("{s}");
            Ok(())
        }
        Command::Resume(a) => resume(a),
        Command::StreamTap(a) => {
            let stats = stream_tap(&a.addr, &a.tables, &a.out).map_err(runtime)?;
            for t in Table::ALL {
                println!("{} {}", t.name(), stats.rows[t.index()]);
            }
            if let Some(d) = stats.dropped {
                println!("dropped {d}");
            }
            Ok(())
        }
        Command::VizExport(a) => {
            viz::export(a.kind, &a.input, &a.out)?;
            Ok(())
        }
    }
}

fn map_gen(a: MapGenArgs) -> CliResult {
    let counts = PoiCounts { home: a.homes, workplace: a.workplaces, restaurant: a.restaurants, recreation: a.recreation };
    let map = generate_map(a.width, a.height, counts, a.seed, (a.origin_lat, a.origin_lon))?;
    save_map(&map, &a.out)?;
    println!("map_hash {:016x}", map.map_hash());
    Ok(())
}

fn overrides(set: &[String]) -> CliResult<Vec<(String, String)>> {
    set.iter().map(|s| parse_assignment(s).map_err(CliError::from)).collect()
}

fn load_map_arc(path: &Path) -> CliResult<Arc<WorldMap>> {
    Ok(Arc::new(load_map(path)?))
}

fn stream_mode(s: &str) -> CliResult<StreamMode> {
    s.parse().map_err(invalid)
}

/// Executes one prepared request, optionally behind a stream server.
fn execute_single(req: RunRequest, map: Arc<WorldMap>, output: &OutputArgs) -> CliResult {
    let mode = stream_mode(&output.stream_mode)?;
    let mut opts = RunOptions { chunk_bytes: output.chunk_bytes.unwrap_or_else(default_chunk_bytes), stream: None };
    if opts.chunk_bytes == 0 {
        return Err(invalid("chunk size must be positive"));
    }
    std::fs::create_dir_all(&req.out_dir).map_err(|e| runtime(format!("cannot create {}: {e}", req.out_dir.display())))?;
    let server = match &output.serve {
        Some(addr) => {
            let s = serve(addr, mode).map_err(|e| runtime(format!("cannot listen on {addr}: {e}")))?;
            eprintln!("listening {}", s.local_addr());
            if output.wait_subscribers > 0 && !s.wait_for_subscribers(output.wait_subscribers, Duration::from_secs(30)) {
                return Err(runtime("timed out waiting for stream subscribers"));
            }
            opts.stream = Some(s.handle());
            Some(s)
        }
        None => None,
    };
    let manifest = execute_request(&req, Ok(map), &opts, Instant::now());
    if let Some(s) = server {
        s.finish();
    }
    report(&manifest)
}

fn report(m: &RunManifest) -> CliResult {
    println!("run {} status {:?} ticks {} exited {}", m.run_id, m.status, m.ticks_executed, m.agents_exited);
    println!(
        "records agent_state={} checkin={} social_link={} ground_truth={}",
        m.records.agent_state, m.records.checkin, m.records.social_link, m.records.ground_truth
    );
    if let Some(b) = &m.branch {
        println!("branch {b}");
    }
    for c in &m.checkpoints {
        println!("checkpoint {c}");
    }
    match m.status {
        RunStatus::Ok => Ok(()),
        RunStatus::Failed => Err(runtime(m.error.clone().unwrap_or_else(|| "run failed".into()))),
    }
}

fn run(a: RunArgs) -> CliResult {
    let mut params = load_params(&a.params)?;
    let mut ovr = overrides(&a.set)?;
    if let Some(seed) = a.seed {
        ovr.push(("seed".into(), seed.to_string()));
    }
    params.apply_overrides(&ovr)?;
    let map = load_map_arc(&a.map)?;
    if let Some(p) = &a.anomalies {
        for spec in load_anomaly_specs(p)? {
            spec.validate(&map, params.num_days)?;
        }
    }
    if params.num_agents == 0 {
        return Err(invalid("num_agents must be at least 1"));
    }
    let req = RunRequest {
        run_id: a.run_id,
        params: Some(params),
        params_path: Some(a.params),
        map_path: a.map,
        anomalies_path: a.anomalies,
        out_dir: a.out,
        until_tick: a.until_tick,
        checkpoints: CheckpointPolicy { every_days: a.checkpoints.checkpoint_every_days, at_tick: a.checkpoints.checkpoint_at_tick },
        ..RunRequest::default()
    };
    execute_single(req, map, &a.output)
}

fn resume(a: ResumeArgs) -> CliResult {
    let map = load_map_arc(&a.map)?;
    let ovr = overrides(&a.set)?;
    let specs = match &a.anomalies {
        Some(p) => Some(load_anomaly_specs(p)?),
        None => None,
    };
    // surface incompatible snapshots and overrides as input errors before any output is touched
    checkpoint::resume(&a.checkpoint, map.clone(), &ovr, specs)?;
    let req = RunRequest {
        run_id: a.run_id,
        map_path: a.map,
        anomalies_path: a.anomalies,
        out_dir: a.out,
        resume: Some(a.checkpoint),
        overrides: ovr,
        until_tick: a.until_tick,
        checkpoints: CheckpointPolicy { every_days: a.checkpoints.checkpoint_every_days, at_tick: a.checkpoints.checkpoint_at_tick },
        ..RunRequest::default()
    };
    execute_single(req, map, &a.output)
}

fn run_many(a: RunManyArgs) -> CliResult {
    let requests = load_plan(&a.plan).map_err(invalid)?;
    let plan = RunPlan { requests, batch: a.batch, parallel: a.parallel, group_size: a.group_size };
    plan.validate().map_err(invalid)?;
    let opts = RunOptions { chunk_bytes: a.chunk_bytes.unwrap_or_else(default_chunk_bytes), stream: None };
    for r in &plan.requests {
        std::fs::create_dir_all(&r.out_dir).map_err(|e| runtime(format!("cannot create {}: {e}", r.out_dir.display())))?;
    }
    let manifest = execute_plan(&plan, &opts).map_err(invalid)?;
    manifest.save(&a.manifest).map_err(runtime)?;
    let failed: Vec<&str> = manifest.runs.iter().filter(|r| r.status == RunStatus::Failed).map(|r| r.run_id.as_str()).collect();
    for r in &manifest.runs {
        println!("run {} {:?} {:.3}s", r.run_id, r.status, r.finished_secs - r.started_secs);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("{} of {} runs failed: {}", failed.len(), manifest.runs.len(), failed.join(", "))))
    }
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let map = load_map_arc(&a.map)?;
    let reference = load_reference(&a.reference)?;
    let warm = a.warm.iter().map(|p| load_params(p).map_err(CliError::from)).collect::<CliResult<Vec<SimParams>>>()?;
    let cfg = GaConfig {
        ga_seed: a.seed,
        pool_size: a.pool_size,
        layer_size: a.layer_size,
        parent_count: a.parents,
        cull_threshold: a.cull_threshold,
        max_generations: a.max_generations,
        patience: a.patience,
        top_k: a.top_k,
        eval_agents: a.agents,
        eval_days: a.days,
        exec: if a.parallel == 1 { Exec::Sequential } else { Exec::Parallel(a.parallel) },
        ..GaConfig::default()
    };
    let schema = ParamSchema::builtin();
    let outcome = evolve(&cfg, &schema, &reference, &map, warm, None).map_err(|e| match e {
        polgen::calibrate::GaError::Config(_) => invalid(e),
        _ => runtime(e),
    })?;
    let report = GaReport::new(&cfg, &reference, &outcome, &schema);
    let text = serde_json::to_string_pretty(&report).map_err(runtime)? + "\n";
    std::fs::write(&a.out, text).map_err(|e| runtime(format!("cannot write {}: {e}", a.out.display())))?;
    for g in &report.history {
        println!("generation {} best {:.6}", g.generation, g.best_score);
    }
    if let Some(top) = report.top.first() {
        println!("top score {:.6} generation {}", top.score, top.generation);
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    let (agents, days) = match (a.agents, a.days) {
        (Some(n), Some(d)) => (n, d),
        (n, d) => {
            let path = a.input.join(run_manifest_file(a.branch.as_deref()));
            let m = RunManifest::load(&path).map_err(|e| invalid(format!("{e}; pass --agents and --days")))?;
            (n.unwrap_or(m.num_agents), d.unwrap_or(m.num_days))
        }
    };
    let tmp = std::env::temp_dir().join(format!("polgen-metrics-{}.csv", std::process::id()));
    run_process(&ProcessSpec {
        inputs: vec![a.input.clone()],
        table: Table::AgentState,
        branch: a.branch.clone(),
        columns: Some(["tick", "agent_id", "x", "y"].map(String::from).to_vec()),
        out: tmp.clone(),
        ..ProcessSpec::default()
    })?;
    let text = std::fs::read_to_string(&tmp).map_err(runtime);
    let _ = std::fs::remove_file(&tmp);
    let samples = samples_from_csv(&text?)?;
    let trips = extract_trips_with(Exec::default(), &samples, a.stay_radius, a.stay_samples)?;
    let m = compute_metrics(&trips, agents, days)?;
    match &a.out {
        Some(p) => std::fs::write(p, m.to_file_string()).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))?,
        None => print!("{}", m.to_file_string()),
    }
    if let Some(r) = &a.reference {
        let reference = load_reference(r)?;
        println!("similarity {:.6}", similarity(&reference, &m)?);
    }
    Ok(())
}

fn process(a: ProcessArgs) -> CliResult {
    let table: Table = a.table.parse().map_err(invalid)?;
    let trim = match &a.trim {
        Some(t) => {
            let (s, e) = t.split_once(':').ok_or_else(|| invalid(format!("--trim expects T0:T1, got {t:?}")))?;
            let p = |v: &str| v.trim().parse::<u64>().map_err(|_| invalid(format!("bad tick {v:?} in --trim")));
            Some((p(s)?, p(e)?))
        }
        None => None,
    };
    let convert = if a.convert {
        match (a.origin_lat, a.origin_lon) {
            (Some(lat), Some(lon)) => Some((lat, lon)),
            _ => return Err(invalid("--convert needs --origin-lat and --origin-lon")),
        }
    } else {
        None
    };
    let stats = run_process(&ProcessSpec {
        inputs: a.input,
        table,
        branch: a.branch,
        columns: a.columns,
        trim,
        convert,
        tag_runs: None,
        out: a.out,
    })?;
    println!("rows_in {} rows_out {}", stats.rows_in, stats.rows_out);
    Ok(())
}
