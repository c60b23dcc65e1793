//! Read-only live streaming of log rows over TCP.
//!
//! Protocol (text, `\n`-terminated lines):
//!
//! ```text
//! client: SUB <table|*>[,<table>...]
//! server: OK 1                  (or `ERR bad-handshake`, then close)
//! server: <table>|<csv row>     (one frame per record, emission order)
//! server: STAT dropped=<n>      (lossy mode only)
//! server: END
//! ```
//!
//! The server only ever sees copies of rows after they are written; it has
//! no path back into the simulation.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::Table;

pub const PROTOCOL_VERSION: u32 = 1;
/// Per-subscriber queue depth.
pub const QUEUE_FRAMES: usize = 10_000;
pub const PARTIAL_TRAILER: &str = "#PARTIAL stream ended without END frame\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// Writers block when a subscriber queue is full.
    Lossless,
    /// Frames beyond the queue capacity are dropped and counted.
    Lossy,
}

impl std::str::FromStr for StreamMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lossless" => Ok(StreamMode::Lossless),
            "lossy" => Ok(StreamMode::Lossy),
            _ => Err(format!("unknown stream mode {s:?} (lossless|lossy)")),
        }
    }
}

enum Frame {
    Row(Table, Arc<str>),
    End,
}

struct Subscriber {
    tables: [bool; 4],
    tx: SyncSender<Frame>,
    dropped: Arc<AtomicU64>,
    worker: Option<JoinHandle<()>>,
}

struct Hub {
    mode: StreamMode,
    subs: Mutex<Vec<Subscriber>>,
}

impl Hub {
    fn publish(&self, table: Table, row: &str) {
        let mut subs = self.subs.lock().expect("hub lock");
        if subs.is_empty() {
            return;
        }
        let shared: Arc<str> = Arc::from(row);
        subs.retain(|s| {
            if !s.tables[table.index()] {
                return true;
            }
            let frame = Frame::Row(table, shared.clone());
            match self.mode {
                StreamMode::Lossless => s.tx.send(frame).is_ok(),
                StreamMode::Lossy => match s.tx.try_send(frame) {
                    Ok(()) => true,
                    Err(TrySendError::Full(_)) => {
                        s.dropped.fetch_add(1, Ordering::Relaxed);
                        true
                    }
                    Err(TrySendError::Disconnected(_)) => false,
                },
            }
        });
    }
}

/// Cloneable publishing side, attached to a [`super::LogSet`].
#[derive(Clone)]
pub struct StreamHandle(Arc<Hub>);

impl StreamHandle {
    pub fn publish(&self, table: Table, row: &str) {
        self.0.publish(table, row);
    }

    pub fn subscriber_count(&self) -> usize {
        self.0.subs.lock().expect("hub lock").len()
    }
}

pub struct StreamServer {
    addr: SocketAddr,
    hub: Arc<Hub>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

pub fn serve(addr: &str, mode: StreamMode) -> io::Result<StreamServer> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let hub = Arc::new(Hub { mode, subs: Mutex::new(Vec::new()) });
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let hub = hub.clone();
        let stop = stop.clone();
        thread::spawn(move || accept_loop(listener, hub, stop))
    };
    Ok(StreamServer { addr: local, hub, stop, acceptor: Some(acceptor) })
}

fn accept_loop(listener: TcpListener, hub: Arc<Hub>, stop: Arc<AtomicBool>) {
    let mut handshakes = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((conn, _)) => {
                let hub = hub.clone();
                handshakes.push(thread::spawn(move || {
                    let _ = handshake(conn, &hub);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
    for h in handshakes {
        let _ = h.join();
    }
}

fn parse_subscription(line: &str) -> Option<[bool; 4]> {
    let rest = line.strip_prefix("SUB ")?.trim();
    if rest.is_empty() {
        return None;
    }
    let mut tables = [false; 4];
    for name in rest.split(',') {
        let name = name.trim();
        if name == "*" {
            tables = [true; 4];
        } else {
            tables[name.parse::<Table>().ok()?.index()] = true;
        }
    }
    Some(tables)
}

fn handshake(conn: TcpStream, hub: &Hub) -> io::Result<()> {
    conn.set_nonblocking(false)?;
    conn.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut out = conn;
    let Some(tables) = parse_subscription(line.trim_end()) else {
        out.write_all(b"ERR bad-handshake\n")?;
        out.flush()?;
        let _ = out.shutdown(std::net::Shutdown::Both);
        return Ok(());
    };
    let (tx, rx) = mpsc::sync_channel(QUEUE_FRAMES);
    let dropped = Arc::new(AtomicU64::new(0));
    // Register before acknowledging so every row published after the client
    // reads OK reaches it.
    let mut subs = hub.subs.lock().expect("hub lock");
    out.write_all(format!("OK {PROTOCOL_VERSION}\n").as_bytes())?;
    out.flush()?;
    let worker = {
        let dropped = dropped.clone();
        let lossy = hub.mode == StreamMode::Lossy;
        thread::spawn(move || pump(out, rx, dropped, lossy))
    };
    subs.push(Subscriber { tables, tx, dropped, worker: Some(worker) });
    Ok(())
}

fn pump(conn: TcpStream, rx: Receiver<Frame>, dropped: Arc<AtomicU64>, lossy: bool) {
    let mut w = BufWriter::with_capacity(1 << 16, conn);
    let write_frame = |w: &mut BufWriter<TcpStream>, f: Frame| -> io::Result<bool> {
        match f {
            Frame::Row(t, row) => {
                w.write_all(t.name().as_bytes())?;
                w.write_all(b"|")?;
                w.write_all(row.as_bytes())?;
                w.write_all(b"\n")?;
                Ok(true)
            }
            Frame::End => Ok(false),
        }
    };
    let result: io::Result<()> = (|| {
        loop {
            let frame = match rx.try_recv() {
                Ok(f) => f,
                Err(mpsc::TryRecvError::Empty) => {
                    w.flush()?;
                    match rx.recv() {
                        Ok(f) => f,
                        Err(_) => break,
                    }
                }
                Err(mpsc::TryRecvError::Disconnected) => break,
            };
            if !write_frame(&mut w, frame)? {
                break;
            }
        }
        if lossy {
            writeln!(w, "STAT dropped={}", dropped.load(Ordering::Relaxed))?;
        }
        w.write_all(b"END\n")?;
        w.flush()
    })();
    drop(result);
    if let Ok(conn) = w.into_inner() {
        let _ = conn.shutdown(std::net::Shutdown::Write);
    }
}

impl StreamServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn handle(&self) -> StreamHandle {
        StreamHandle(self.hub.clone())
    }

    pub fn subscriber_count(&self) -> usize {
        self.handle().subscriber_count()
    }

    /// Blocks until at least `n` subscribers completed their handshake or the timeout passes.
    pub fn wait_for_subscribers(&self, n: usize, timeout: Duration) -> bool {
        let start = std::time::Instant::now();
        while self.subscriber_count() < n {
            if start.elapsed() > timeout {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
        true
    }

    /// Sends END to every subscriber, waits for their queues to drain and stops accepting.
    pub fn finish(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let subs: Vec<Subscriber> = std::mem::take(&mut *self.hub.subs.lock().expect("hub lock"));
        for mut s in subs {
            let _ = s.tx.send(Frame::End);
            drop(s.tx);
            if let Some(w) = s.worker.take() {
                let _ = w.join();
            }
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TapError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("handshake rejected: {0}")]
    Rejected(String),
    #[error("stream i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("stream ended without END after {rows} rows; outputs marked partial")]
    Disconnected { rows: u64 },
    #[error("malformed frame: {0:?}")]
    Frame(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TapStats {
    pub rows: [u64; 4],
    pub dropped: Option<u64>,
}

/// Client side of the protocol.
pub struct StreamTap {
    reader: BufReader<TcpStream>,
    tables: [bool; 4],
    single: Option<Table>,
}

impl StreamTap {
    /// Connects and completes the handshake. `tables` holds table names or `*`.
    pub fn connect(addr: &str, tables: &[String]) -> Result<StreamTap, TapError> {
        let mut sel = [false; 4];
        let mut named = Vec::new();
        for t in tables {
            if t == "*" {
                sel = [true; 4];
            } else {
                let table = t.parse::<Table>().map_err(|_| TapError::UnknownTable(t.clone()))?;
                sel[table.index()] = true;
                named.push(table);
            }
        }
        let wildcard = tables.iter().any(|t| t == "*");
        let single = if !wildcard && named.len() == 1 { Some(named[0]) } else { None };
        let sock_addr = addr
            .to_socket_addrs()
            .map_err(|source| TapError::Connect { addr: addr.to_string(), source })?
            .next()
            .ok_or_else(|| TapError::Connect {
                addr: addr.to_string(),
                source: io::Error::new(io::ErrorKind::NotFound, "no address"),
            })?;
        let mut conn = TcpStream::connect(sock_addr).map_err(|source| TapError::Connect { addr: addr.to_string(), source })?;
        conn.write_all(format!("SUB {}\n", tables.join(",")).as_bytes())?;
        conn.flush()?;
        let mut reader = BufReader::new(conn);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if !line.starts_with("OK ") {
            return Err(TapError::Rejected(line.to_string()));
        }
        Ok(StreamTap { reader, tables: sel, single })
    }

    /// Writes received rows until END. With one named table `out` is a file
    /// laid out like the concatenated table (one header, rows); otherwise
    /// `out` is a directory receiving `<table>.csv` per table.
    pub fn drain_to(mut self, out: &Path) -> Result<TapStats, TapError> {
        let mut files: [Option<BufWriter<File>>; 4] = Default::default();
        let path_for = |t: Table| -> PathBuf {
            match self.single {
                Some(_) => out.to_path_buf(),
                None => out.join(format!("{}.csv", t.name())),
            }
        };
        if self.single.is_none() {
            fs::create_dir_all(out)?;
        } else {
            // an empty table still yields an (empty) output file
            File::create(out)?;
        }
        let mut stats = TapStats::default();
        let mut line = String::new();
        let mut clean = false;
        loop {
            line.clear();
            let n = self.reader.read_line(&mut line)?;
            if n == 0 || !line.ends_with('\n') {
                break;
            }
            let body = &line[..line.len() - 1];
            if body == "END" {
                clean = true;
                break;
            }
            if let Some(v) = body.strip_prefix("STAT dropped=") {
                stats.dropped = v.parse().ok();
                continue;
            }
            let (name, row) = body.split_once('|').ok_or_else(|| TapError::Frame(body.to_string()))?;
            let table = name.parse::<Table>().map_err(|_| TapError::Frame(body.to_string()))?;
            if !self.tables[table.index()] {
                continue;
            }
            let slot = &mut files[table.index()];
            if slot.is_none() {
                let mut f = BufWriter::new(File::create(path_for(table))?);
                f.write_all(table.header().as_bytes())?;
                *slot = Some(f);
            }
            let f = slot.as_mut().expect("opened above");
            f.write_all(row.as_bytes())?;
            f.write_all(b"\n")?;
            stats.rows[table.index()] += 1;
        }
        if !clean {
            let mut marked = false;
            for f in files.iter_mut().flatten() {
                f.write_all(PARTIAL_TRAILER.as_bytes())?;
                marked = true;
            }
            if !marked {
                let mut f = fs::OpenOptions::new().create(true).append(true).open(match self.single {
                    Some(t) => path_for(t),
                    None => out.join("partial.marker"),
                })?;
                f.write_all(PARTIAL_TRAILER.as_bytes())?;
            }
            for f in files.iter_mut().flatten() {
                f.flush()?;
            }
            return Err(TapError::Disconnected { rows: stats.rows.iter().sum() });
        }
        for f in files.iter_mut().flatten() {
            f.flush()?;
        }
        Ok(stats)
    }
}

/// Connects, subscribes and writes everything received to `out` until the server ends the stream.
pub fn stream_tap(addr: &str, tables: &[String], out: &Path) -> Result<TapStats, TapError> {
    StreamTap::connect(addr, tables)?.drain_to(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subscription_parsing() {
        assert_eq!(parse_subscription("SUB checkin"), Some([false, true, false, false]));
        assert_eq!(parse_subscription("SUB *"), Some([true; 4]));
        assert_eq!(parse_subscription("SUB agent_state,ground_truth"), Some([true, false, false, true]));
        assert_eq!(parse_subscription("HELLO"), None);
        assert_eq!(parse_subscription("SUB nope"), None);
        assert_eq!(parse_subscription("SUB "), None);
    }

    #[test]
    fn bad_handshake_gets_error_line() {
        let server = serve("127.0.0.1:0", StreamMode::Lossless).unwrap();
        let mut conn = TcpStream::connect(server.local_addr()).unwrap();
        conn.write_all(b"HELLO\n").unwrap();
        let mut reply = String::new();
        BufReader::new(conn.try_clone().unwrap()).read_line(&mut reply).unwrap();
        assert_eq!(reply, "ERR bad-handshake\n");
        let mut rest = Vec::new();
        // connection is closed after the error line
        let _ = io::Read::read_to_end(&mut conn, &mut rest);
        assert!(rest.is_empty());
        server.finish();
    }

    #[test]
    fn connection_refused() {
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let dir = tempfile::tempdir().unwrap();
        let r = stream_tap(&format!("127.0.0.1:{port}"), &["checkin".into()], &dir.path().join("o.csv"));
        assert!(matches!(r, Err(TapError::Connect { .. })));
    }

    #[test]
    fn filtered_subscription_receives_only_its_table() {
        let server = serve("127.0.0.1:0", StreamMode::Lossless).unwrap();
        let addr = server.local_addr().to_string();
        let tap = StreamTap::connect(&addr, &["checkin".into()]).unwrap();
        let h = server.handle();
        h.publish(Table::AgentState, "0,2024-01-01T00:00:00,0,1.000000,1.000000,at_home,0,0,0,0");
        h.publish(Table::CheckIn, "3,2024-01-01T00:03:00,0,2,restaurant");
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("c.csv");
        let reader = thread::spawn(move || tap.drain_to(&out).map(|s| (s, out)));
        server.finish();
        let (stats, out) = reader.join().unwrap().unwrap();
        assert_eq!(stats.rows, [0, 1, 0, 0]);
        assert_eq!(fs::read_to_string(out).unwrap(), format!("{}3,2024-01-01T00:03:00,0,2,restaurant\n", Table::CheckIn.header()));
    }

    #[test]
    fn lossy_mode_reports_drops() {
        let server = serve("127.0.0.1:0", StreamMode::Lossy).unwrap();
        let addr = server.local_addr().to_string();
        let tap = StreamTap::connect(&addr, &["*".into()]).unwrap();
        let h = server.handle();
        for i in 0..100 {
            h.publish(Table::CheckIn, &format!("{i},2024-01-01T00:00:00,0,1,home"));
        }
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_path_buf();
        let reader = thread::spawn(move || tap.drain_to(&out));
        server.finish();
        let stats = reader.join().unwrap().unwrap();
        assert_eq!(stats.dropped, Some(0));
        assert_eq!(stats.rows[Table::CheckIn.index()], 100);
    }

    #[test]
    fn disconnect_marks_partial() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let fake = thread::spawn(move || {
            let (mut c, _) = listener.accept().unwrap();
            let mut line = String::new();
            BufReader::new(c.try_clone().unwrap()).read_line(&mut line).unwrap();
            c.write_all(b"OK 1\ncheckin|0,2024-01-01T00:00:00,0,1,home\n").unwrap();
        });
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("c.csv");
        let r = stream_tap(&addr, &["checkin".into()], &out);
        fake.join().unwrap();
        assert!(matches!(r, Err(TapError::Disconnected { rows: 1 })));
        assert!(fs::read_to_string(out).unwrap().ends_with(PARTIAL_TRAILER));
    }
}
