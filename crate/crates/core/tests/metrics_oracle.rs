mod common;

use polgen::metrics::{compute_metrics, extract_trips, Sample, DEFAULT_STAY_MIN_SAMPLES as MIN, DEFAULT_STAY_RADIUS_M as R};
use polgen::rng::Rng;

#[test]
fn stay_walk_stay_is_one_kilometre_trip() {
    // 60 min at A, walk 1000 m east in 5-minute samples of 100 m, 60 min at B
    let mut s = Vec::new();
    let mut tick = 0;
    for _ in 0..12 {
        s.push(Sample { agent_id: 0, tick, x: 0.0, y: 0.0 });
        tick += 5;
    }
    for k in 1..=10 {
        s.push(Sample { agent_id: 0, tick, x: 100.0 * k as f64, y: 0.0 });
        tick += 5;
    }
    for _ in 0..11 {
        s.push(Sample { agent_id: 0, tick, x: 1000.0, y: 0.0 });
        tick += 5;
    }
    let trips = extract_trips(&s, R, MIN).unwrap();
    assert_eq!(trips.len(), 1);
    assert!((trips[0].distance_m - 1000.0).abs() <= 100.0, "{}", trips[0].distance_m);
}

#[test]
fn random_walks_match_brute_force_segmenter() {
    let mut rng = Rng::seed_from(2024);
    let traces: Vec<Vec<Sample>> = (0..20).map(|a| common::random_trace(a, 5, &mut rng)).collect();
    let all: Vec<Sample> = traces.iter().flatten().copied().collect();
    let trips = extract_trips(&all, R, MIN).unwrap();
    let oracle: Vec<_> = traces.iter().flat_map(|t| common::brute_trips(t, R, MIN)).collect();
    assert!(oracle.len() >= 10, "only {} trips", oracle.len());
    assert_eq!(trips.len(), oracle.len());
    for (a, b) in trips.iter().zip(&oracle) {
        assert_eq!((a.agent_id, a.start_tick, a.end_tick), (b.agent_id, b.start_tick, b.end_tick));
        assert!(common::rel_close(a.distance_m, b.distance_m, 1e-9));
    }
    if !trips.is_empty() {
        let m = compute_metrics(&trips, 20, 1).unwrap();
        let o = common::brute_metrics(&oracle, 20, 1);
        for (x, y) in m.values().iter().zip(o.values()) {
            assert!(common::rel_close(*x, y, 1e-9));
        }
    }
}
