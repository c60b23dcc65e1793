mod common;

use std::fs;
use std::thread;

use polgen::anomaly::parse_anomaly_specs;
use polgen::engine::run;
use polgen::logsys::{chunk_file_name, serve, LogSet, MemorySink, StreamMode, StreamTap, Table};

#[test]
fn checkin_subscriber_sees_every_checkin_in_order() {
    let map = common::city();
    let server = serve("127.0.0.1:0", StreamMode::Lossless).unwrap();
    let tap = StreamTap::connect(&server.local_addr().to_string(), &["checkin".to_string()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tap.csv");
    let out2 = out.clone();
    let reader = thread::spawn(move || tap.drain_to(&out2).unwrap());

    let mut sink = LogSet::create(&dir.path().join("run"), 1 << 20).unwrap();
    sink.attach_stream(server.handle());
    let summary = run(common::params(20, 1, 4), map, Vec::new(), &mut sink, None).unwrap();
    drop(sink);
    server.finish();
    let stats = reader.join().unwrap();

    let n = summary.records[Table::CheckIn.index()];
    assert!(n > 12);
    assert_eq!(stats.rows[Table::CheckIn.index()], n);
    assert_eq!(stats.rows[Table::AgentState.index()], 0);
    let tapped = fs::read(&out).unwrap();
    assert_eq!(tapped, common::concat(&dir.path().join("run"), Table::CheckIn, None));
}

#[test]
fn small_chunks_concatenate_to_memory_stream() {
    let map = common::city();
    let specs = parse_anomaly_specs("anomaly hunger orange random 1.0 0 1\n").unwrap();
    let mut mem = MemorySink::new();
    run(common::params(30, 2, 6), map.clone(), specs.clone(), &mut mem, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut sink = LogSet::create(dir.path(), 1024).unwrap();
    run(common::params(30, 2, 6), map, specs, &mut sink, None).unwrap();
    drop(sink);
    for t in Table::ALL {
        assert_eq!(common::concat(dir.path(), t, None), mem.bytes(t), "{t}");
        let chunks = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(&format!("{}.", t.name())))
            .count();
        assert!(chunks >= 2, "{t} produced {chunks} chunks");
        for i in 0..chunks as u32 {
            let len = fs::metadata(dir.path().join(chunk_file_name(t, None, i))).unwrap().len();
            assert!(len <= 1024);
        }
    }
}
