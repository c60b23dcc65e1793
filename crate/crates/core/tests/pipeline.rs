mod common;

use std::fs;
use std::time::Instant;

use polgen::engine::clock::TICKS_PER_DAY;
use polgen::logsys::{default_chunk_bytes, Table};
use polgen::manifest::RunStatus;
use polgen::process::{merge_runs, run_process, ProcessSpec};
use polgen::runner::{checkpoint_path, execute_request, CheckpointPolicy, RunOptions, RunRequest};
use polgen::viz;
use polgen::worldmap::save_map;

#[test]
fn trim_keeps_exactly_day_two_and_viz_conserves_checkins() {
    let dir = tempfile::tempdir().unwrap();
    let map_path = dir.path().join("city.map");
    save_map(&common::city(), &map_path).unwrap();
    let run_dir = dir.path().join("run");
    let req = RunRequest {
        run_id: "a".into(),
        params: Some(common::params(25, 2, 3)),
        map_path: map_path.clone(),
        out_dir: run_dir.clone(),
        ..RunRequest::default()
    };
    let m = execute_request(&req, Ok(common::city()), &RunOptions { chunk_bytes: 64 * 1024, stream: None }, Instant::now());
    assert_eq!(m.status, RunStatus::Ok);

    let trimmed = dir.path().join("day2.csv");
    let s = merge_runs(&[run_dir.clone(), run_dir.clone()], Table::AgentState, Some((TICKS_PER_DAY, 2 * TICKS_PER_DAY)), &trimmed).unwrap();
    // 25 agents sampled every 5 ticks, two copies of the run
    assert_eq!(s.rows_out, 2 * 25 * 288);
    assert_eq!(s.rows_in, 2 * m.records.agent_state);
    let text = fs::read_to_string(&trimmed).unwrap();
    assert!(text.lines().skip(1).all(|l| {
        let t: u64 = l.split(',').nth(1).unwrap().parse().unwrap();
        (TICKS_PER_DAY..2 * TICKS_PER_DAY).contains(&t)
    }));

    let checkins = dir.path().join("checkins.csv");
    run_process(&ProcessSpec { inputs: vec![run_dir], table: Table::CheckIn, out: checkins.clone(), ..ProcessSpec::default() }).unwrap();
    let agg = viz::checkins_per_day_by_venue(&fs::read_to_string(&checkins).unwrap()).unwrap();
    let total: u64 = agg.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, m.records.checkin);
}

#[test]
fn resumed_branch_is_deterministic_and_separate_from_main_line() {
    let dir = tempfile::tempdir().unwrap();
    let map_path = dir.path().join("city.map");
    save_map(&common::city(), &map_path).unwrap();
    let opts = RunOptions { chunk_bytes: default_chunk_bytes(), stream: None };
    let base = dir.path().join("base");
    let first = RunRequest {
        run_id: "base".into(),
        params: Some(common::params(20, 2, 8)),
        map_path: map_path.clone(),
        out_dir: base.clone(),
        checkpoints: CheckpointPolicy { every_days: None, at_tick: Some(TICKS_PER_DAY) },
        ..RunRequest::default()
    };
    assert_eq!(execute_request(&first, Ok(common::city()), &opts, Instant::now()).status, RunStatus::Ok);
    let snap = checkpoint_path(&base, TICKS_PER_DAY);
    assert!(snap.exists());

    let branch_run = |name: &str| {
        let out = dir.path().join(name);
        let req = RunRequest {
            run_id: name.into(),
            map_path: map_path.clone(),
            out_dir: out.clone(),
            resume: Some(snap.clone()),
            overrides: vec![("hunger_threshold".into(), "0.4".into())],
            ..RunRequest::default()
        };
        let m = execute_request(&req, Ok(common::city()), &opts, Instant::now());
        assert_eq!(m.status, RunStatus::Ok, "{:?}", m.error);
        (m.branch.clone().unwrap(), out)
    };
    let (b1, d1) = branch_run("b1");
    let (b2, d2) = branch_run("b2");
    assert_eq!(b1, b2);
    assert!(b1.starts_with("br") && b1.len() == 10);
    for t in Table::ALL {
        assert_eq!(common::concat(&d1, t, Some(&b1)), common::concat(&d2, t, Some(&b2)), "{t}");
    }
    // the branch's second day differs from the main line's
    let main_day2: Vec<u8> = common::concat(&base, Table::AgentState, None);
    let branch_day2 = common::concat(&d1, Table::AgentState, Some(&b1));
    assert!(!main_day2.ends_with(&branch_day2[branch_day2.iter().position(|&b| b == b'\n').unwrap() + 1..]));
}
