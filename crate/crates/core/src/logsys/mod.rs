//! Log tables, record formatting and sinks.
//!
//! Every simulation output is a [`LogRecord`] in one of four tables. Rows are
//! CSV with `\n` endings, floats at six decimals and ISO-8601 timestamps
//! without a zone, so identical runs produce identical bytes everywhere.

mod stream;
mod writer;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use stream::{serve, stream_tap, StreamHandle, StreamMode, StreamServer, StreamTap, TapError, TapStats, PROTOCOL_VERSION};
pub use writer::{chunk_file_name, default_chunk_bytes, ChunkedWriter, WriterPosition, CHUNK_BYTES_ENV, DEFAULT_CHUNK_BYTES};

use crate::anomaly::{AnomalyKind, AnomalyLevel};
use crate::engine::clock;
use crate::worldmap::PoiKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Table {
    #[default]
    AgentState,
    CheckIn,
    SocialLink,
    GroundTruth,
}

impl Table {
    pub const ALL: [Table; 4] = [Table::AgentState, Table::CheckIn, Table::SocialLink, Table::GroundTruth];

    pub fn name(self) -> &'static str {
        match self {
            Table::AgentState => "agent_state",
            Table::CheckIn => "checkin",
            Table::SocialLink => "social_link",
            Table::GroundTruth => "ground_truth",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn payload_columns(self) -> &'static [&'static str] {
        match self {
            Table::AgentState => &["agent_id", "x", "y", "activity", "hunger", "energy_deficit", "social", "balance"],
            Table::CheckIn => &["agent_id", "venue_id", "venue_kind"],
            Table::SocialLink => &["agent_a", "agent_b", "event"],
            Table::GroundTruth => &["agent_id", "kind", "level", "start_tick", "end_tick"],
        }
    }

    /// All columns including the leading `tick,timestamp`.
    pub fn columns(self) -> Vec<&'static str> {
        let mut c = vec!["tick", "timestamp"];
        c.extend_from_slice(self.payload_columns());
        c
    }

    /// Header line including the trailing newline.
    pub fn header(self) -> String {
        let mut h = self.columns().join(",");
        h.push('\n');
        h
    }
}

impl std::fmt::Display for Table {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Table {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Table::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown table {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEvent {
    Create,
    /// Reserved; the engine never dissolves links.
    Dissolve,
}

impl LinkEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkEvent::Create => "create",
            LinkEvent::Dissolve => "dissolve",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    AgentState {
        agent_id: u32,
        x: f64,
        y: f64,
        activity: &'static str,
        hunger: f64,
        energy_deficit: f64,
        social: f64,
        balance: f64,
    },
    CheckIn {
        agent_id: u32,
        venue_id: u32,
        venue_kind: PoiKind,
    },
    SocialLink {
        agent_a: u32,
        agent_b: u32,
        event: LinkEvent,
    },
    GroundTruth {
        agent_id: u32,
        kind: AnomalyKind,
        level: AnomalyLevel,
        start_tick: u64,
        end_tick: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub tick: u64,
    pub payload: Payload,
}

impl LogRecord {
    pub fn table(&self) -> Table {
        match self.payload {
            Payload::AgentState { .. } => Table::AgentState,
            Payload::CheckIn { .. } => Table::CheckIn,
            Payload::SocialLink { .. } => Table::SocialLink,
            Payload::GroundTruth { .. } => Table::GroundTruth,
        }
    }

    pub fn payload_fields(&self) -> Vec<String> {
        match &self.payload {
            Payload::AgentState { agent_id, x, y, activity, hunger, energy_deficit, social, balance } => vec![
                agent_id.to_string(),
                format!("{x:.6}"),
                format!("{y:.6}"),
                activity.to_string(),
                format!("{hunger:.6}"),
                format!("{energy_deficit:.6}"),
                format!("{social:.6}"),
                format!("{balance:.6}"),
            ],
            Payload::CheckIn { agent_id, venue_id, venue_kind } => {
                vec![agent_id.to_string(), venue_id.to_string(), venue_kind.to_string()]
            }
            Payload::SocialLink { agent_a, agent_b, event } => {
                vec![agent_a.to_string(), agent_b.to_string(), event.as_str().to_string()]
            }
            Payload::GroundTruth { agent_id, kind, level, start_tick, end_tick } => vec![
                agent_id.to_string(),
                kind.as_str().to_string(),
                level.as_str().to_string(),
                start_tick.to_string(),
                end_tick.to_string(),
            ],
        }
    }

    /// Full CSV row including the trailing newline.
    pub fn to_row(&self) -> String {
        format_row(self.tick, &clock::timestamp(self.tick), &self.payload_fields())
    }
}

pub(crate) fn format_row(tick: u64, timestamp: &str, fields: &[String]) -> String {
    let mut row = String::with_capacity(96);
    let _ = write!(row, "{tick},{timestamp}");
    for f in fields {
        row.push(',');
        row.push_str(f);
    }
    row.push('\n');
    row
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error writing {table} to {path}: {source}")]
    Io { table: Table, path: PathBuf, source: std::io::Error },
    #[error("schema error: {table} rows carry {expected} payload fields, got {got}")]
    Schema { table: Table, expected: usize, got: usize },
    #[error("cannot continue {table} chunk {path}: {reason}")]
    Continuation { table: Table, path: PathBuf, reason: String },
}

impl LogError {
    pub fn table(&self) -> Table {
        match self {
            LogError::Io { table, .. } | LogError::Schema { table, .. } | LogError::Continuation { table, .. } => *table,
        }
    }
}

/// Destination for simulation records.
pub trait LogSink {
    fn write(&mut self, record: &LogRecord) -> Result<(), LogError>;

    fn flush(&mut self) -> Result<(), LogError> {
        Ok(())
    }

    /// Writer continuation state for checkpoints, when the sink has any.
    fn positions(&self) -> Option<[WriterPosition; 4]> {
        None
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl LogSink for NullSink {
    fn write(&mut self, _record: &LogRecord) -> Result<(), LogError> {
        Ok(())
    }
}

/// Keeps each table in memory in concatenated-file form (one header, all rows).
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    tables: [Vec<u8>; 4],
    counts: [u64; 4],
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self, table: Table) -> &[u8] {
        &self.tables[table.index()]
    }

    pub fn count(&self, table: Table) -> u64 {
        self.counts[table.index()]
    }

    pub fn text(&self, table: Table) -> &str {
        std::str::from_utf8(self.bytes(table)).expect("rows are utf-8")
    }
}

impl LogSink for MemorySink {
    fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let t = record.table().index();
        if self.tables[t].is_empty() {
            self.tables[t].extend_from_slice(record.table().header().as_bytes());
        }
        self.tables[t].extend_from_slice(record.to_row().as_bytes());
        self.counts[t] += 1;
        Ok(())
    }
}

impl<S: LogSink + ?Sized> LogSink for &mut S {
    fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        (**self).write(record)
    }
    fn flush(&mut self) -> Result<(), LogError> {
        (**self).flush()
    }
    fn positions(&self) -> Option<[WriterPosition; 4]> {
        (**self).positions()
    }
}

/// The four chunked table writers of one run, optionally mirrored to a stream server.
pub struct LogSet {
    writers: [ChunkedWriter; 4],
    stream: Option<StreamHandle>,
    last_ts: (u64, String),
}

impl LogSet {
    pub fn create(dir: &Path, chunk_bytes: u64) -> Result<Self, LogError> {
        Self::create_branch(dir, chunk_bytes, None)
    }

    /// Writers whose file names carry a branch id (`<table>.<branch>.<index>.csv`).
    pub fn create_branch(dir: &Path, chunk_bytes: u64, branch: Option<&str>) -> Result<Self, LogError> {
        let writers = Table::ALL.map(|t| ChunkedWriter::new(dir, t, chunk_bytes, branch));
        for w in &writers {
            w.ensure_dir()?;
        }
        Ok(LogSet { writers, stream: None, last_ts: (u64::MAX, String::new()) })
    }

    /// Continues the byte streams described by `positions` (see [`ChunkedWriter::continue_from`]).
    pub fn resume(dir: &Path, chunk_bytes: u64, branch: Option<&str>, positions: &[WriterPosition; 4]) -> Result<Self, LogError> {
        let mut set = Self::create_branch(dir, chunk_bytes, branch)?;
        for (w, p) in set.writers.iter_mut().zip(positions) {
            w.continue_from(*p)?;
        }
        Ok(set)
    }

    pub fn attach_stream(&mut self, handle: StreamHandle) {
        self.stream = Some(handle);
    }

    pub fn writer(&self, table: Table) -> &ChunkedWriter {
        &self.writers[table.index()]
    }

    pub fn record_counts(&self) -> [u64; 4] {
        std::array::from_fn(|i| self.writers[i].records())
    }

    /// Writes pre-formatted payload fields after checking them against the table schema.
    pub fn write_fields(&mut self, table: Table, tick: u64, fields: &[String]) -> Result<(), LogError> {
        let expected = table.payload_columns().len();
        if fields.len() != expected {
            return Err(LogError::Schema { table, expected, got: fields.len() });
        }
        if self.last_ts.0 != tick {
            self.last_ts = (tick, clock::timestamp(tick));
        }
        let row = format_row(tick, &self.last_ts.1, fields);
        self.writers[table.index()].write_row(&row)?;
        if let Some(s) = &self.stream {
            s.publish(table, &row[..row.len() - 1]);
        }
        Ok(())
    }
}

impl LogSink for LogSet {
    fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let fields = record.payload_fields();
        self.write_fields(record.table(), record.tick, &fields)
    }

    fn flush(&mut self) -> Result<(), LogError> {
        for w in &mut self.writers {
            w.flush()?;
        }
        Ok(())
    }

    fn positions(&self) -> Option<[WriterPosition; 4]> {
        Some(std::array::from_fn(|i| self.writers[i].position()))
    }
}

impl Drop for LogSet {
    fn drop(&mut self) {
        let _ = LogSink::flush(self);
    }
}
