use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{LogError, Table};

/// 512 MiB.
pub const DEFAULT_CHUNK_BYTES: u64 = 536_870_912;
pub const CHUNK_BYTES_ENV: &str = "POLGEN_CHUNK_BYTES";

/// Chunk size from `POLGEN_CHUNK_BYTES`, falling back to the default.
pub fn default_chunk_bytes() -> u64 {
    std::env::var(CHUNK_BYTES_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_CHUNK_BYTES)
}

pub fn chunk_file_name(table: Table, branch: Option<&str>, index: u32) -> String {
    match branch {
        Some(b) => format!("{}.{}.{:05}.csv", table.name(), b, index),
        None => format!("{}.{:05}.csv", table.name(), index),
    }
}

/// Where a writer stands; enough to continue the same byte stream later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriterPosition {
    /// False until the first row is written (no file exists yet).
    pub opened: bool,
    pub chunk_index: u32,
    pub bytes_in_chunk: u64,
    pub rows_in_chunk: u64,
    pub records: u64,
}

/// Size-rotated CSV writer for one table. Rows are never split; a new chunk
/// starts when the next row would push the current file past the limit.
pub struct ChunkedWriter {
    dir: PathBuf,
    table: Table,
    branch: Option<String>,
    chunk_bytes: u64,
    pos: WriterPosition,
    file: Option<BufWriter<File>>,
}

impl ChunkedWriter {
    pub fn new(dir: &Path, table: Table, chunk_bytes: u64, branch: Option<&str>) -> Self {
        ChunkedWriter {
            dir: dir.to_path_buf(),
            table,
            branch: branch.map(str::to_string),
            chunk_bytes,
            pos: WriterPosition::default(),
            file: None,
        }
    }

    pub(super) fn ensure_dir(&self) -> Result<(), LogError> {
        fs::create_dir_all(&self.dir).map_err(|source| self.io_err(&self.dir, source))
    }

    fn io_err(&self, path: &Path, source: std::io::Error) -> LogError {
        LogError::Io { table: self.table, path: path.to_path_buf(), source }
    }

    pub fn chunk_path(&self, index: u32) -> PathBuf {
        self.dir.join(chunk_file_name(self.table, self.branch.as_deref(), index))
    }

    pub fn position(&self) -> WriterPosition {
        self.pos
    }

    pub fn records(&self) -> u64 {
        self.pos.records
    }

    /// Continues from a saved position. If the active chunk exists in this
    /// directory with exactly the recorded length, rows are appended to it;
    /// if it is absent, output continues with the next chunk index.
    pub fn continue_from(&mut self, pos: WriterPosition) -> Result<(), LogError> {
        self.pos = pos;
        if !pos.opened {
            return Ok(());
        }
        let path = self.chunk_path(pos.chunk_index);
        match fs::metadata(&path) {
            Ok(meta) if meta.len() == pos.bytes_in_chunk => {
                let f = OpenOptions::new().append(true).open(&path).map_err(|e| self.io_err(&path, e))?;
                self.file = Some(BufWriter::new(f));
                Ok(())
            }
            Ok(meta) => Err(LogError::Continuation {
                table: self.table,
                path,
                reason: format!("expected {} bytes, found {}", pos.bytes_in_chunk, meta.len()),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                // fresh directory: the next row opens chunk index + 1
                self.pos.opened = false;
                self.pos.chunk_index = pos.chunk_index + 1;
                self.pos.bytes_in_chunk = 0;
                self.pos.rows_in_chunk = 0;
                Ok(())
            }
            Err(e) => Err(self.io_err(&path, e)),
        }
    }

    fn open_chunk(&mut self) -> Result<(), LogError> {
        let path = self.chunk_path(self.pos.chunk_index);
        let f = File::create(&path).map_err(|e| self.io_err(&path, e))?;
        let mut w = BufWriter::with_capacity(1 << 16, f);
        let header = self.table.header();
        w.write_all(header.as_bytes()).map_err(|e| self.io_err(&path, e))?;
        self.file = Some(w);
        self.pos.opened = true;
        self.pos.bytes_in_chunk = header.len() as u64;
        self.pos.rows_in_chunk = 0;
        Ok(())
    }

    /// `row` must end with `\n`.
    pub fn write_row(&mut self, row: &str) -> Result<(), LogError> {
        if !self.pos.opened {
            self.open_chunk()?;
        } else if self.pos.rows_in_chunk > 0 && self.pos.bytes_in_chunk + row.len() as u64 > self.chunk_bytes {
            self.flush()?;
            self.file = None;
            self.pos.chunk_index += 1;
            self.open_chunk()?;
        }
        let file = self.file.as_mut().expect("chunk open");
        if let Err(e) = file.write_all(row.as_bytes()) {
            let p = self.chunk_path(self.pos.chunk_index);
            return Err(self.io_err(&p, e));
        }
        self.pos.bytes_in_chunk += row.len() as u64;
        self.pos.rows_in_chunk += 1;
        self.pos.records += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        if let Some(f) = self.file.as_mut() {
            if let Err(e) = f.flush() {
                let p = self.chunk_path(self.pos.chunk_index);
                return Err(self.io_err(&p, e));
            }
        }
        Ok(())
    }
}

impl Drop for ChunkedWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize) -> String {
        let mut s = "x".repeat(n - 1);
        s.push('\n');
        s
    }

    #[test]
    fn rotation_by_row_budget() {
        let dir = tempfile::tempdir().unwrap();
        let header = Table::CheckIn.header().len() as u64;
        // 200 bytes of row budget on top of the header: two 90-byte rows fit, the third rotates
        let mut w = ChunkedWriter::new(dir.path(), Table::CheckIn, header + 200, None);
        for _ in 0..3 {
            w.write_row(&row(90)).unwrap();
        }
        w.flush().unwrap();
        let c0 = fs::read_to_string(w.chunk_path(0)).unwrap();
        let c1 = fs::read_to_string(w.chunk_path(1)).unwrap();
        assert_eq!(c0.lines().count(), 3); // header + 2
        assert_eq!(c1.lines().count(), 2); // header + 1
        assert!(!w.chunk_path(2).exists());
        assert!(c0.len() as u64 <= header + 200);
    }

    #[test]
    fn nothing_written_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let w = ChunkedWriter::new(dir.path(), Table::SocialLink, 100, None);
        drop(w);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn oversized_row_still_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ChunkedWriter::new(dir.path(), Table::CheckIn, 10, None);
        w.write_row(&row(50)).unwrap();
        w.write_row(&row(50)).unwrap();
        w.flush().unwrap();
        assert!(w.chunk_path(1).exists());
        assert_eq!(w.records(), 2);
    }

    #[test]
    fn names() {
        assert_eq!(chunk_file_name(Table::AgentState, None, 3), "agent_state.00003.csv");
        assert_eq!(chunk_file_name(Table::CheckIn, Some("b1a2"), 0), "checkin.b1a2.00000.csv");
    }

    #[test]
    fn continue_appends_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ChunkedWriter::new(dir.path(), Table::CheckIn, 1000, None);
        a.write_row(&row(10)).unwrap();
        a.flush().unwrap();
        let pos = a.position();
        drop(a);
        let mut b = ChunkedWriter::new(dir.path(), Table::CheckIn, 1000, None);
        b.continue_from(pos).unwrap();
        b.write_row(&row(10)).unwrap();
        b.flush().unwrap();
        let text = fs::read_to_string(b.chunk_path(0)).unwrap();
        assert_eq!(text.lines().count(), 3);

        // a fresh directory continues with the next chunk index
        let other = tempfile::tempdir().unwrap();
        let mut c = ChunkedWriter::new(other.path(), Table::CheckIn, 1000, None);
        c.continue_from(pos).unwrap();
        c.write_row(&row(10)).unwrap();
        c.flush().unwrap();
        assert!(c.chunk_path(1).exists());
        assert_eq!(c.records(), 2);
    }

    #[test]
    fn continue_rejects_modified_chunk() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ChunkedWriter::new(dir.path(), Table::CheckIn, 1000, None);
        a.write_row(&row(10)).unwrap();
        a.flush().unwrap();
        let pos = a.position();
        drop(a);
        fs::write(dir.path().join("checkin.00000.csv"), "tampered\n").unwrap();
        let mut b = ChunkedWriter::new(dir.path(), Table::CheckIn, 1000, None);
        assert!(matches!(b.continue_from(pos), Err(LogError::Continuation { .. })));
    }
}
