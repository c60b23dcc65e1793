mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use polgen::anomaly::parse_anomaly_specs;
use polgen::engine::clock::TICKS_PER_DAY;
use polgen::engine::SimWorld;
use polgen::logsys::{LogRecord, Payload};
use polgen::params::{Param, SimParams};
use polgen::worldmap::{generate_map, PoiCounts, PoiKind, WorldMap};

fn city(recreation: u32) -> Arc<WorldMap> {
    let counts = PoiCounts { home: 40, workplace: 6, restaurant: 8, recreation };
    Arc::new(generate_map(3000.0, 3000.0, counts, 21, (41.88, -87.63)).unwrap())
}

fn world(agents: u32, days: u32, seed: u64, map: Arc<WorldMap>, specs: &str) -> SimWorld {
    let p = SimParams { num_agents: agents, num_days: days, seed, ..SimParams::default() };
    let mut w = SimWorld::new(p, map).unwrap();
    w.set_anomalies(parse_anomaly_specs(specs).unwrap()).unwrap();
    w
}

fn labels(records: &[LogRecord]) -> Vec<(u32, u64, u64)> {
    records
        .iter()
        .filter_map(|r| match r.payload {
            Payload::GroundTruth { agent_id, start_tick, end_tick, .. } => Some((agent_id, start_tick, end_tick)),
            _ => None,
        })
        .collect()
}

fn run_collect(w: &mut SimWorld, until: u64) -> Vec<LogRecord> {
    let mut all = Vec::new();
    while w.tick() < until {
        all.extend(w.step());
    }
    all
}

#[test]
fn global_red_work_labels_cover_the_day() {
    let mut w = world(10, 7, 3, city(4), "anomaly work red global 5 5 5\n");
    let recs = run_collect(&mut w, 7 * TICKS_PER_DAY);
    let l = labels(&recs);
    assert_eq!(l.len(), 10);
    let ids: BTreeSet<u32> = l.iter().map(|x| x.0).collect();
    assert_eq!(ids.len(), 10);
    for (_, s, e) in l {
        assert!(s <= 5 * TICKS_PER_DAY && e >= 6 * TICKS_PER_DAY, "label {s}..{e} does not cover day 5");
    }
}

#[test]
fn red_work_means_no_work_that_day() {
    let map = city(4);
    let mut w = world(40, 3, 8, map.clone(), "anomaly work red global 1 1 1\n");
    let day0 = run_collect(&mut w, TICKS_PER_DAY);
    let before: Vec<u64> = w.agents().iter().map(|a| a.working_ticks).collect();
    let day1 = run_collect(&mut w, 2 * TICKS_PER_DAY);
    let after: Vec<u64> = w.agents().iter().map(|a| a.working_ticks).collect();
    assert_eq!(before, after, "someone worked on the anomaly day");

    let work_checkins = |recs: &[LogRecord]| {
        recs.iter()
            .filter(|r| matches!(r.payload, Payload::CheckIn { venue_kind: PoiKind::Workplace, .. }))
            .count()
    };
    assert_eq!(work_checkins(&day1), 0);
    // the same population does go to work on an ordinary weekday
    assert!(work_checkins(&day0) >= 30);
}

#[test]
fn yellow_work_skips_about_a_fifth_of_agent_days() {
    let (lo, hi) = (common::binomial_quantile(100, 0.2, 0.005), common::binomial_quantile(100, 0.2, 0.995));
    assert!(lo >= 8 && hi <= 32, "band {lo}..{hi}");
    let mut w = world(100, 1, 77, city(4), "anomaly work yellow global 0 0 0\n");
    run_collect(&mut w, TICKS_PER_DAY);
    let skipped = w.agents().iter().filter(|a| a.work_plan == Some((0, true))).count() as u64;
    let idle = w.agents().iter().filter(|a| a.working_ticks == 0).count() as u64;
    assert_eq!(skipped, idle);
    assert!((lo..=hi).contains(&skipped), "{skipped} skipped outside [{lo}, {hi}]");
}

#[test]
fn certain_infection_reaches_every_contact() {
    let map = city(1);
    let p = SimParams {
        num_agents: 30,
        num_days: 3,
        seed: 5,
        values: {
            let mut v = SimParams::default().values;
            v[Param::Joviality as usize] = 0.9;
            v
        },
        ..SimParams::default()
    };
    let mut w = SimWorld::new(p, map).unwrap();
    w.set_anomalies(parse_anomaly_specs("anomaly social yellow infectious 1 1.0 0 2\n").unwrap()).unwrap();
    let mut total_labels = 0;
    while !w.finished() {
        let t = w.tick();
        let recs = w.step();
        total_labels += labels(&recs).len();
        // anyone flagged before this tick was a carrier during this tick's spread
        let agents = w.agents();
        let carriers: BTreeSet<u32> = agents
            .iter()
            .filter(|a| a.anomaly.is_some_and(|an| an.onset_tick < t && an.covers(t)))
            .filter_map(|a| a.location)
            .collect();
        for a in agents {
            if let Some(loc) = a.location {
                assert!(
                    a.anomaly.is_some() || !carriers.contains(&loc),
                    "tick {t}: agent {} shares venue {loc} with a carrier but is not flagged",
                    a.id
                );
            }
        }
    }
    let flagged = w.agents().iter().filter(|a| a.anomaly.is_some()).count();
    assert_eq!(total_labels, flagged);
    assert!(flagged > 1, "infection never spread");
}
