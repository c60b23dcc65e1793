use super::*;
use crate::engine::run_world;
use crate::logsys::{MemorySink, NullSink, Table};
use crate::worldmap::{generate_map, PoiCounts};

fn map() -> Arc<WorldMap> {
    let counts = PoiCounts { home: 30, workplace: 5, restaurant: 6, recreation: 4 };
    Arc::new(generate_map(2500.0, 2500.0, counts, 3, (44.98, -93.27)).unwrap())
}

fn params() -> SimParams {
    SimParams { num_agents: 20, num_days: 2, seed: 9, ..SimParams::default() }
}

fn world_at(tick: u64) -> SimWorld {
    let mut w = SimWorld::new(params(), map()).unwrap();
    run_world(&mut w, &mut NullSink, Some(tick), |_, _| Ok(())).unwrap();
    w
}

fn rest_of_run(mut w: SimWorld) -> MemorySink {
    let mut sink = MemorySink::new();
    run_world(&mut w, &mut sink, None, |_, _| Ok(())).unwrap();
    sink
}

#[test]
fn encode_decode_round_trip() {
    let w = world_at(700);
    let snap = Snapshot::capture(&w, None, Some("br00ff00ff"));
    let back = Snapshot::decode(&snap.encode()).unwrap();
    assert_eq!(back, snap);
    assert!(w.agents().iter().any(|a| a.location != Some(a.home)));
}

#[test]
fn same_tick_saves_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let w = world_at(300);
    let (a, b) = (dir.path().join("a.polck"), dir.path().join("b.polck"));
    save_checkpoint(&w, None, None, &a).unwrap();
    save_checkpoint(&w, None, None, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    // no temp files left behind
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn corrupted_byte_fails_integrity() {
    let mut bytes = Snapshot::capture(&world_at(10), None, None).encode();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    assert!(matches!(Snapshot::decode(&bytes), Err(CheckpointError::Integrity { .. })));
}

#[test]
fn truncated_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.polck");
    let bytes = Snapshot::capture(&world_at(10), None, None).encode();
    fs::write(&path, &bytes[..bytes.len() / 3]).unwrap();
    assert!(matches!(inspect(&path), Err(CheckpointError::Truncated(_)) | Err(CheckpointError::Integrity { .. })));
    fs::write(&path, &bytes[..6]).unwrap();
    assert!(matches!(inspect(&path), Err(CheckpointError::Truncated(_))));
    fs::write(&path, b"not a snapshot at all, just text").unwrap();
    assert!(matches!(inspect(&path), Err(CheckpointError::BadMagic)));
}

#[test]
fn tick_zero_resume_matches_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.polck");
    let fresh = SimWorld::new(params(), map()).unwrap();
    save_checkpoint(&fresh, None, None, &path).unwrap();
    let r = resume(&path, map(), &[], None).unwrap();
    assert_eq!(r.branch, None);
    let a = rest_of_run(fresh);
    let b = rest_of_run(r.world);
    for t in Table::ALL {
        assert_eq!(a.bytes(t), b.bytes(t), "{t} differs");
    }
}

#[test]
fn mid_run_resume_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.polck");
    let w = world_at(1500);
    save_checkpoint(&w, None, None, &path).unwrap();
    let a = rest_of_run(w);
    let b = rest_of_run(resume(&path, map(), &[], None).unwrap().world);
    for t in Table::ALL {
        assert_eq!(a.bytes(t), b.bytes(t));
    }
}

fn set(name: &str, value: &str) -> (String, String) {
    (name.to_string(), value.to_string())
}

#[test]
fn structural_overrides_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.polck");
    save_checkpoint(&world_at(100), None, None, &path).unwrap();
    for name in ["num_agents", "seed"] {
        match resume(&path, map(), &[set(name, "7")], None) {
            Err(CheckpointError::NotResumable(n)) => assert_eq!(n, name),
            other => panic!("expected rejection, got {other:?}"),
        }
    }
    assert!(matches!(resume(&path, map(), &[set("num_days", "0")], None), Err(_)));
}

#[test]
fn map_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.polck");
    save_checkpoint(&world_at(5), None, None, &path).unwrap();
    let other = Arc::new(
        generate_map(2500.0, 2500.0, PoiCounts { home: 30, workplace: 5, restaurant: 6, recreation: 4 }, 4, (44.98, -93.27))
            .unwrap(),
    );
    assert!(matches!(resume(&path, other, &[], None), Err(CheckpointError::MapMismatch { .. })));
}

#[test]
fn behavioural_override_starts_a_deterministic_branch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.polck");
    let w = world_at(1440);
    save_checkpoint(&w, None, None, &path).unwrap();
    let main = rest_of_run(w);

    let overrides = [set("hunger_threshold", "0.35")];
    let r1 = resume(&path, map(), &overrides, None).unwrap();
    let r2 = resume(&path, map(), &overrides, None).unwrap();
    let id = r1.branch.clone().unwrap();
    assert!(id.starts_with("br") && id.len() == 10);
    assert_eq!(r1.branch, r2.branch);
    assert!(r1.writers.is_none());
    let (b1, b2) = (rest_of_run(r1.world), rest_of_run(r2.world));
    assert_eq!(b1.bytes(Table::CheckIn), b2.bytes(Table::CheckIn));
    assert_ne!(b1.bytes(Table::CheckIn), main.bytes(Table::CheckIn));

    // extending the horizon alone stays on the main line
    let ext = resume(&path, map(), &[set("num_days", "3")], None).unwrap();
    assert_eq!(ext.branch, None);
    assert_eq!(ext.world.horizon(), 3 * 1440);
}

#[test]
fn inspect_reports_header_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.polck");
    let w = world_at(42);
    save_checkpoint(&w, None, None, &path).unwrap();
    let s = inspect(&path).unwrap();
    assert_eq!(s.tick, 42);
    assert_eq!(s.num_agents, 20);
    assert_eq!(s.params_hash, params().hash());
    assert_eq!(s.map_hash, map().map_hash());
    assert_eq!(s.format_version, FORMAT_VERSION);
    assert!(s.upgrade_note.is_none());
}

#[test]
fn older_format_inspects_with_note_but_does_not_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("old.polck");
    let mut snap = Snapshot::capture(&world_at(42), None, None);
    snap.format_version = 1;
    fs::write(&path, snap.encode()).unwrap();
    let s = inspect(&path).unwrap();
    assert_eq!(s.format_version, 1);
    assert!(s.upgrade_note.unwrap().contains("upgrade"));
    assert!(matches!(resume(&path, map(), &[], None), Err(CheckpointError::Version { found: 1, .. })));
}

