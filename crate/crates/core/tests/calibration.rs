mod common;

use polgen::calibrate::{evolve, GaConfig, GaError, Lineage};
use polgen::engine::run_world;
use polgen::engine::SimWorld;
use polgen::exec::Exec;
use polgen::metrics::{compute_metrics, extract_trips, MetricSet, TraceSink, DEFAULT_STAY_MIN_SAMPLES, DEFAULT_STAY_RADIUS_M};
use polgen::params::{ParamSchema, SimParams};

fn reference_of(p: &SimParams) -> MetricSet {
    let mut w = SimWorld::new(p.clone(), common::city()).unwrap();
    let mut sink = TraceSink::new();
    run_world(&mut w, &mut sink, None, |_, _| Ok(())).unwrap();
    let trips = extract_trips(&sink.into_samples(), DEFAULT_STAY_RADIUS_M, DEFAULT_STAY_MIN_SAMPLES).unwrap();
    compute_metrics(&trips, p.num_agents, p.num_days).unwrap()
}

fn small_cfg(seed: u64) -> GaConfig {
    GaConfig {
        ga_seed: seed,
        pool_size: 4,
        layer_size: 5,
        parent_count: 2,
        max_generations: 2,
        patience: 5,
        top_k: 3,
        eval_agents: 20,
        eval_days: 1,
        exec: Exec::Parallel(2),
        ..GaConfig::default()
    }
}

#[test]
fn warm_start_vector_scores_exactly_one() {
    let star = common::params(20, 1, 123);
    let reference = reference_of(&star);
    let out = evolve(&small_cfg(1), &ParamSchema::builtin(), &reference, &common::city(), vec![star.clone()], None).unwrap();
    let best = &out.top[0];
    assert_eq!(best.score.rank_value(), 1.0);
    assert_eq!(best.lineage, Lineage::Warm);
    assert_eq!(best.params.seed, 123);
    let bests: Vec<f64> = out.history.iter().map(|g| g.best_score).collect();
    assert!(bests.windows(2).all(|w| w[1] >= w[0]), "{bests:?}");
    assert_eq!(out.history.len(), 3);
}

#[test]
fn seeded_runs_repeat_and_sequential_matches_parallel() {
    let reference = reference_of(&common::params(20, 1, 9));
    let a = evolve(&small_cfg(7), &ParamSchema::builtin(), &reference, &common::city(), Vec::new(), None).unwrap();
    let seq = GaConfig { exec: Exec::Sequential, ..small_cfg(7) };
    let b = evolve(&seq, &ParamSchema::builtin(), &reference, &common::city(), Vec::new(), None).unwrap();
    assert_eq!(a.top, b.top);
    assert_eq!(a.history, b.history);
}

#[test]
fn impossible_threshold_aborts_with_diagnostic() {
    let reference = reference_of(&common::params(20, 1, 9));
    let cfg = GaConfig { cull_threshold: 1.1, ..small_cfg(3) };
    let err = evolve(&cfg, &ParamSchema::builtin(), &reference, &common::city(), Vec::new(), None).unwrap_err();
    assert!(matches!(err, GaError::NoSurvivors { generation: 0, .. }), "{err}");
}
