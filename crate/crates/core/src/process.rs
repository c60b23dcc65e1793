//! Offline log processing: chunk concatenation, run merging and trimming,
//! column selection and planar to geographic conversion.
//!
//! Everything streams line by line, so memory use does not depend on log
//! size. [`run_process`] applies trim, selection, conversion and run tagging
//! in a single pass; the standalone file operations produce the same bytes.
//!
//! Coordinates use a local equirectangular approximation around the map
//! origin (110540 m per degree of latitude, 111320 m per degree of longitude
//! at the equator). It is self-consistent, not a survey-grade projection.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::exec::Exec;
use crate::logsys::{chunk_file_name, Table};

pub const METERS_PER_DEG_LAT: f64 = 110_540.0;
pub const METERS_PER_DEG_LON: f64 = 111_320.0;
/// Origins at or beyond this latitude are rejected.
pub const MAX_ORIGIN_LAT: f64 = 89.0;
pub const RUN_ID_COLUMN: &str = "run_id";

#[derive(Debug, thiserror::Error)]
pub enum ProcessError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("no {table} chunks in {dir}")]
    NoChunks { dir: String, table: String },
    #[error("{dir}: chunk index {missing} of {table} is missing")]
    Gap { dir: String, table: String, missing: u32 },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("header of {path} does not match {expected:?}")]
    SchemaMismatch { path: String, expected: String },
    #[error("origin latitude {0} is too close to a pole (|lat0| must be < 89)")]
    PoleOrigin(f64),
    #[error("empty tick range {0}..{1}")]
    EmptyRange(u64, u64),
    #[error("{path}: malformed row {line}")]
    Malformed { path: String, line: u64 },
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> ProcessError + '_ {
    move |source| ProcessError::Io { path: path.display().to_string(), source }
}

/// Planar meters relative to the origin to (lat, lon) degrees.
pub fn convert_coords(x: f64, y: f64, lat0: f64, lon0: f64) -> Result<(f64, f64), ProcessError> {
    check_origin(lat0)?;
    let lat = lat0 + y / METERS_PER_DEG_LAT;
    let lon = lon0 + x / (METERS_PER_DEG_LON * lat0.to_radians().cos());
    Ok((lat, lon))
}

/// Inverse of [`convert_coords`].
pub fn invert_coords(lat: f64, lon: f64, lat0: f64, lon0: f64) -> Result<(f64, f64), ProcessError> {
    check_origin(lat0)?;
    let y = (lat - lat0) * METERS_PER_DEG_LAT;
    let x = (lon - lon0) * METERS_PER_DEG_LON * lat0.to_radians().cos();
    Ok((x, y))
}

fn check_origin(lat0: f64) -> Result<(), ProcessError> {
    if lat0.abs() >= MAX_ORIGIN_LAT || !lat0.is_finite() {
        return Err(ProcessError::PoleOrigin(lat0));
    }
    Ok(())
}

/// Chunk files of `table` in `dir`, in index order. Fails on a gap.
pub fn list_chunks(dir: &Path, table: Table, branch: Option<&str>) -> Result<Vec<PathBuf>, ProcessError> {
    let prefix = match branch {
        Some(b) => format!("{}.{}.", table.name(), b),
        None => format!("{}.", table.name()),
    };
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let name = entry.map_err(io_err(dir))?.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".csv")) else { continue };
        if rest.len() == 5 && rest.bytes().all(|b| b.is_ascii_digit()) {
            indices.push(rest.parse::<u32>().expect("five digits"));
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(ProcessError::NoChunks { dir: dir.display().to_string(), table: table.name().into() });
    }
    for (want, &have) in indices.iter().enumerate() {
        if have != want as u32 {
            return Err(ProcessError::Gap { dir: dir.display().to_string(), table: table.name().into(), missing: want as u32 });
        }
    }
    Ok(indices.iter().map(|&i| dir.join(chunk_file_name(table, branch, i))).collect())
}

/// Streams the rows (without headers) of several CSV files that must share a
/// header. Returns the header.
struct Rows {
    files: Vec<PathBuf>,
    next: usize,
    current: Option<(BufReader<File>, u64)>,
    header: String,
}

impl Rows {
    fn open(files: Vec<PathBuf>) -> Result<Self, ProcessError> {
        let mut rows = Rows { files, next: 0, current: None, header: String::new() };
        if rows.files.is_empty() {
            return Ok(rows);
        }
        rows.advance()?;
        Ok(rows)
    }

    fn advance(&mut self) -> Result<bool, ProcessError> {
        let Some(path) = self.files.get(self.next).cloned() else {
            self.current = None;
            return Ok(false);
        };
        self.next += 1;
        let mut r = BufReader::new(File::open(&path).map_err(io_err(&path))?);
        let mut header = String::new();
        r.read_line(&mut header).map_err(io_err(&path))?;
        let header = header.trim_end_matches(['\n', '\r']).to_string();
        if self.next == 1 {
            self.header = header;
        } else if header != self.header {
            return Err(ProcessError::SchemaMismatch { path: path.display().to_string(), expected: self.header.clone() });
        }
        self.current = Some((r, 1));
        Ok(true)
    }

    /// Next data row, with its file and line number for diagnostics.
    fn next_row(&mut self, buf: &mut String) -> Result<Option<(PathBuf, u64)>, ProcessError> {
        loop {
            let Some((r, line)) = self.current.as_mut() else { return Ok(None) };
            buf.clear();
            let path = &self.files[self.next - 1];
            let n = r.read_line(buf).map_err(io_err(path))?;
            if n == 0 {
                if !self.advance()? {
                    return Ok(None);
                }
                continue;
            }
            *line += 1;
            let trimmed = buf.trim_end_matches(['\n', '\r']).len();
            buf.truncate(trimmed);
            // tap trailers and blank lines carry no records
            if buf.is_empty() || buf.starts_with('#') {
                continue;
            }
            return Ok(Some((path.clone(), *line)));
        }
    }
}

fn create_out(out: &Path) -> Result<(PathBuf, BufWriter<File>), ProcessError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = out.with_extension(format!("tmp{}", std::process::id()));
    let f = File::create(&tmp).map_err(io_err(&tmp))?;
    Ok((tmp, BufWriter::new(f)))
}

fn finish_out(tmp: PathBuf, mut w: BufWriter<File>, out: &Path) -> Result<(), ProcessError> {
    w.flush().map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, out).map_err(io_err(out))
}

/// Writes every chunk of `table` in `dir` to `out` with a single header.
/// Returns the number of data rows.
pub fn concat_chunks(dir: &Path, table: Table, branch: Option<&str>, out: &Path) -> Result<u64, ProcessError> {
    let stats = run_process(&ProcessSpec {
        inputs: vec![dir.to_path_buf()],
        table,
        branch: branch.map(str::to_string),
        out: out.to_path_buf(),
        ..ProcessSpec::default()
    })?;
    Ok(stats.rows_out)
}

/// Keeps `columns` of a CSV file, in the requested order.
pub fn select_columns(input: &Path, columns: &[String], out: &Path) -> Result<u64, ProcessError> {
    transform_file(input, out, |header| {
        let idx = columns
            .iter()
            .map(|c| header.iter().position(|h| h == c).ok_or_else(|| ProcessError::UnknownColumn(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Box::new(move |f: &[&str], o: &mut Vec<String>| {
            o.extend(idx.iter().map(|&i| f[i].to_string()));
            true
        }))
    }, columns.to_vec())
}

/// Appends `lat,lon` columns computed from `x,y`.
pub fn convert_file(input: &Path, lat0: f64, lon0: f64, out: &Path) -> Result<u64, ProcessError> {
    check_origin(lat0)?;
    let mut out_header = Vec::new();
    let header = read_header(input)?;
    out_header.extend(header.iter().cloned());
    out_header.extend(["lat".to_string(), "lon".to_string()]);
    transform_file(input, out, |header| {
        let conv = Converter::new(header, lat0, lon0)?;
        Ok(Box::new(move |f: &[&str], o: &mut Vec<String>| {
            o.extend(f.iter().map(|s| s.to_string()));
            conv.append(f, o)
        }))
    }, out_header)
}

type RowFn = Box<dyn Fn(&[&str], &mut Vec<String>) -> bool>;

fn read_header(input: &Path) -> Result<Vec<String>, ProcessError> {
    let mut r = BufReader::new(File::open(input).map_err(io_err(input))?);
    let mut h = String::new();
    r.read_line(&mut h).map_err(io_err(input))?;
    Ok(h.trim_end_matches(['\n', '\r']).split(',').map(str::to_string).collect())
}

fn transform_file(
    input: &Path,
    out: &Path,
    build: impl FnOnce(&[String]) -> Result<RowFn, ProcessError>,
    out_header: Vec<String>,
) -> Result<u64, ProcessError> {
    let mut rows = Rows::open(vec![input.to_path_buf()])?;
    let header: Vec<String> = rows.header.split(',').map(str::to_string).collect();
    let f = build(&header)?;
    let (tmp, mut w) = create_out(out)?;
    writeln!(w, "{}", out_header.join(",")).map_err(io_err(&tmp))?;
    let mut buf = String::new();
    let mut fields = Vec::new();
    let mut n = 0;
    while let Some((path, line)) = rows.next_row(&mut buf)? {
        let parts: Vec<&str> = buf.split(',').collect();
        if parts.len() != header.len() {
            return Err(ProcessError::Malformed { path: path.display().to_string(), line });
        }
        fields.clear();
        if !f(&parts, &mut fields) {
            return Err(ProcessError::Malformed { path: path.display().to_string(), line });
        }
        writeln!(w, "{}", fields.join(",")).map_err(io_err(&tmp))?;
        n += 1;
    }
    finish_out(tmp, w, out)?;
    Ok(n)
}

struct Converter {
    xi: usize,
    yi: usize,
    lat0: f64,
    lon0: f64,
}

impl Converter {
    fn new(header: &[String], lat0: f64, lon0: f64) -> Result<Self, ProcessError> {
        check_origin(lat0)?;
        let find = |c: &str| header.iter().position(|h| h == c).ok_or_else(|| ProcessError::UnknownColumn(c.to_string()));
        Ok(Converter { xi: find("x")?, yi: find("y")?, lat0, lon0 })
    }

    /// Pushes lat and lon; false when x or y does not parse.
    fn append(&self, f: &[&str], o: &mut Vec<String>) -> bool {
        let (Ok(x), Ok(y)) = (f[self.xi].parse::<f64>(), f[self.yi].parse::<f64>()) else { return false };
        let (lat, lon) = convert_coords(x, y, self.lat0, self.lon0).expect("origin checked");
        o.push(format!("{lat:.8}"));
        o.push(format!("{lon:.8}"));
        true
    }
}

/// One processing job: one table from one or more run directories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProcessSpec {
    pub inputs: Vec<PathBuf>,
    pub table: Table,
    pub branch: Option<String>,
    pub columns: Option<Vec<String>>,
    /// Keep rows with `start <= tick < end`.
    pub trim: Option<(u64, u64)>,
    /// Origin (lat0, lon0) to append geographic coordinates.
    pub convert: Option<(f64, f64)>,
    /// Prepend a `run_id` column holding the input's position. Defaults to
    /// on when there is more than one input.
    pub tag_runs: Option<bool>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProcessStats {
    pub rows_in: u64,
    pub rows_out: u64,
}

/// Single streaming pass over all inputs: trim, select, convert, tag.
pub fn run_process(spec: &ProcessSpec) -> Result<ProcessStats, ProcessError> {
    if let Some((a, b)) = spec.trim {
        if a >= b {
            return Err(ProcessError::EmptyRange(a, b));
        }
    }
    if let Some((lat0, _)) = spec.convert {
        check_origin(lat0)?;
    }
    let tag = spec.tag_runs.unwrap_or(spec.inputs.len() > 1);
    let chunk_lists = spec
        .inputs
        .iter()
        .map(|d| list_chunks(d, spec.table, spec.branch.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;

    let expected = spec.table.columns().join(",");
    let header: Vec<String> = expected.split(',').map(str::to_string).collect();
    let select = match &spec.columns {
        Some(cols) => cols
            .iter()
            .map(|c| header.iter().position(|h| h == c).ok_or_else(|| ProcessError::UnknownColumn(c.clone())))
            .collect::<Result<Vec<_>, _>>()?,
        None => (0..header.len()).collect(),
    };
    let conv = spec.convert.map(|(lat0, lon0)| Converter::new(&header, lat0, lon0)).transpose()?;
    let tick_i = 0;

    let mut out_header: Vec<String> = Vec::new();
    if tag {
        out_header.push(RUN_ID_COLUMN.into());
    }
    out_header.extend(select.iter().map(|&i| header[i].clone()));
    if conv.is_some() {
        out_header.extend(["lat".to_string(), "lon".to_string()]);
    }

    let (tmp, mut w) = create_out(&spec.out)?;
    writeln!(w, "{}", out_header.join(",")).map_err(io_err(&tmp))?;
    let mut stats = ProcessStats::default();
    let mut buf = String::new();
    let mut fields: Vec<String> = Vec::new();
    for (run, chunks) in chunk_lists.into_iter().enumerate() {
        let mut rows = Rows::open(chunks)?;
        if rows.header != expected {
            let path = rows.files.first().map(|p| p.display().to_string()).unwrap_or_default();
            return Err(ProcessError::SchemaMismatch { path, expected });
        }
        while let Some((path, line)) = rows.next_row(&mut buf)? {
            stats.rows_in += 1;
            let parts: Vec<&str> = buf.split(',').collect();
            let bad = || ProcessError::Malformed { path: path.display().to_string(), line };
            if parts.len() != header.len() {
                return Err(bad());
            }
            if let Some((a, b)) = spec.trim {
                let t: u64 = parts[tick_i].parse().map_err(|_| bad())?;
                if t < a || t >= b {
                    continue;
                }
            }
            fields.clear();
            if tag {
                fields.push(run.to_string());
            }
            fields.extend(select.iter().map(|&i| parts[i].to_string()));
            if let Some(c) = &conv {
                if !c.append(&parts, &mut fields) {
                    return Err(bad());
                }
            }
            writeln!(w, "{}", fields.join(",")).map_err(io_err(&tmp))?;
            stats.rows_out += 1;
        }
    }
    finish_out(tmp, w, &spec.out)?;
    Ok(stats)
}

/// Merges `table` from several runs with a leading `run_id` column.
pub fn merge_runs(dirs: &[PathBuf], table: Table, trim: Option<(u64, u64)>, out: &Path) -> Result<ProcessStats, ProcessError> {
    run_process(&ProcessSpec {
        inputs: dirs.to_vec(),
        table,
        trim,
        tag_runs: Some(true),
        out: out.to_path_buf(),
        ..ProcessSpec::default()
    })
}

/// Independent jobs (typically one per table) fanned out over `exec`.
pub fn run_many(specs: &[ProcessSpec], exec: Exec) -> Vec<Result<ProcessStats, ProcessError>> {
    exec.map(specs, |_, s| run_process(s))
}
