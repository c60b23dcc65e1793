//! Pooled genetic calibration of [`SimParams`] against reference metrics.
//!
//! Each generation takes the best `parent_count` individuals of the pool as
//! parents and creates `layer_size` children, split as evenly as possible
//! between the Producer (Gaussian mutation) and the four Mixers (max, min,
//! mean, random mix), with the remainder going to the Producer. Children are
//! simulated as one batch, scored with [`similarity`], and those scoring below
//! `cull_threshold` (or failing) are dropped; the rest join the pool. The loop
//! stops after `max_generations` or `patience` generations without a better
//! best score.
//!
//! Every child is simulated with seed `derive_seed([ga_seed, generation,
//! index])`. Warm-start individuals keep the seed they carry.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{run_world, SimWorld};
use crate::exec::Exec;
use crate::manifest::ParamValue;
use crate::metrics::{
    compute_metrics, extract_trips, similarity, MetricSet, TraceSink, DEFAULT_STAY_MIN_SAMPLES, DEFAULT_STAY_RADIUS_M,
    FAILED_SCORE,
};
use crate::params::{validate_params, ParamKind, ParamSchema, SimParams};
use crate::rng::{derive_seed, Rng};
use crate::worldmap::WorldMap;

pub const MUTATION_PROB: f64 = 0.25;
/// Mutation noise as a fraction of each parameter's range.
pub const MUTATION_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    Max,
    Min,
    Mean,
    RandomMix,
}

impl MixStrategy {
    pub const ALL: [MixStrategy; 4] = [MixStrategy::Max, MixStrategy::Min, MixStrategy::Mean, MixStrategy::RandomMix];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "strategy")]
pub enum Lineage {
    Seed,
    Warm,
    Producer,
    Mixer(MixStrategy),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Score {
    Unevaluated,
    Failed(String),
    Value(f64),
}

impl Score {
    /// Ranking value; failures and unevaluated individuals rank last.
    pub fn rank_value(&self) -> f64 {
        match self {
            Score::Value(v) => *v,
            _ => FAILED_SCORE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub params: SimParams,
    pub score: Score,
    pub metrics: Option<MetricSet>,
    pub generation: u32,
    pub lineage: Lineage,
}

impl Individual {
    fn new(params: SimParams, generation: u32, lineage: Lineage) -> Self {
        Individual { params, score: Score::Unevaluated, metrics: None, generation, lineage }
    }
}

#[derive(Debug, Clone)]
pub struct GaConfig {
    pub ga_seed: u64,
    pub pool_size: usize,
    pub layer_size: usize,
    pub parent_count: usize,
    pub cull_threshold: f64,
    pub max_generations: u32,
    pub patience: u32,
    pub top_k: usize,
    pub eval_agents: u32,
    pub eval_days: u32,
    pub sample_interval: u32,
    pub stay_radius_m: f64,
    pub stay_min_samples: usize,
    pub exec: Exec,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            ga_seed: 0,
            pool_size: 16,
            layer_size: 16,
            parent_count: 4,
            cull_threshold: 0.0,
            max_generations: 20,
            patience: 5,
            top_k: 10,
            eval_agents: 200,
            eval_days: 7,
            sample_interval: crate::params::DEFAULT_SAMPLE_INTERVAL,
            stay_radius_m: DEFAULT_STAY_RADIUS_M,
            stay_min_samples: DEFAULT_STAY_MIN_SAMPLES,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GaError {
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("generation {generation}: no individual survived ({failed} failed, {culled} below threshold {threshold})")]
    NoSurvivors { generation: u32, failed: usize, culled: usize, threshold: f64 },
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |m: &str| Err(GaError::Config(m.to_string()));
        if self.pool_size < 1 {
            return bad("pool_size must be at least 1");
        }
        if self.layer_size < 2 {
            return bad("layer_size must be at least 2");
        }
        if self.parent_count < 2 {
            return bad("parent_count must be at least 2");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.eval_agents < 1 || self.eval_days < 1 || self.sample_interval < 1 {
            return bad("evaluation agents, days and sample interval must be at least 1");
        }
        Ok(())
    }
}

fn snap(value: f64, kind: ParamKind, min: f64, max: f64) -> f64 {
    let v = value.clamp(min, max);
    match kind {
        ParamKind::Real => v,
        ParamKind::Integer | ParamKind::Boolean => v.round().clamp(min, max),
    }
}

/// `n` individuals drawn uniformly from the schema ranges.
pub fn seed_pool(n: usize, schema: &ParamSchema, template: &SimParams, rng: &mut Rng) -> Vec<Individual> {
    (0..n)
        .map(|_| {
            let values = schema
                .entries()
                .iter()
                .map(|d| match d.kind {
                    ParamKind::Real => rng.range_f64(d.min, d.max),
                    ParamKind::Integer => (d.min + rng.below((d.max - d.min) as u64 + 1) as f64).min(d.max),
                    ParamKind::Boolean => {
                        if rng.chance(0.5) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            Individual::new(SimParams { values, ..template.clone() }, 0, Lineage::Seed)
        })
        .collect()
}

/// Mutates each coordinate with probability [`MUTATION_PROB`] by Gaussian
/// noise of [`MUTATION_SIGMA`] times its range, clipped to the range.
pub fn produce(parent: &Individual, schema: &ParamSchema, rng: &mut Rng, generation: u32) -> Individual {
    let values = schema
        .entries()
        .iter()
        .zip(&parent.params.values)
        .map(|(d, &v)| {
            if rng.chance(MUTATION_PROB) {
                snap(v + rng.gaussian() * MUTATION_SIGMA * (d.max - d.min), d.kind, d.min, d.max)
            } else {
                v
            }
        })
        .collect();
    Individual::new(SimParams { values, ..parent.params.clone() }, generation, Lineage::Producer)
}

/// Combines one coordinate across parents, before range clipping and
/// integer rounding.
pub fn mix_values(values: &[f64], strategy: MixStrategy, rng: &mut Rng) -> f64 {
    assert!(!values.is_empty(), "mixing needs at least one value");
    match strategy {
        MixStrategy::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        MixStrategy::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        MixStrategy::Mean => {
            // offset from the first value so equal parents give back their exact value
            let base = values[0];
            base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
        }
        MixStrategy::RandomMix => values[rng.index(values.len())],
    }
}

/// Per-coordinate combination of two or more parents.
pub fn mix(parents: &[&Individual], strategy: MixStrategy, schema: &ParamSchema, rng: &mut Rng, generation: u32) -> Individual {
    assert!(parents.len() >= 2, "mixing needs at least two parents");
    let mut col = Vec::with_capacity(parents.len());
    let values = schema
        .entries()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            col.clear();
            col.extend(parents.iter().map(|p| p.params.values[i]));
            snap(mix_values(&col, strategy, rng), d.kind, d.min, d.max)
        })
        .collect();
    Individual::new(SimParams { values, ..parents[0].params.clone() }, generation, Lineage::Mixer(strategy))
}

/// Strategy of each child in a layer: round-robin over Producer and the four
/// Mixers until each has its share.
pub fn layer_plan(layer_size: usize) -> Vec<Option<MixStrategy>> {
    let per = layer_size / 5;
    let mut left = [per + layer_size % 5, per, per, per, per];
    let kinds = [None, Some(MixStrategy::Max), Some(MixStrategy::Min), Some(MixStrategy::Mean), Some(MixStrategy::RandomMix)];
    let mut plan = Vec::with_capacity(layer_size);
    while plan.len() < layer_size {
        for (k, kind) in kinds.iter().enumerate() {
            if left[k] > 0 {
                left[k] -= 1;
                plan.push(*kind);
            }
        }
    }
    plan
}

/// Simulates `params` and scores its trips against `reference`.
pub fn evaluate(
    params: &SimParams,
    map: &Arc<WorldMap>,
    reference: &MetricSet,
    cfg: &GaConfig,
) -> Result<(f64, MetricSet), String> {
    let mut world = SimWorld::new(params.clone(), map.clone()).map_err(|e| e.to_string())?;
    let mut sink = TraceSink::new();
    run_world(&mut world, &mut sink, None, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let trips = extract_trips(&sink.into_samples(), cfg.stay_radius_m, cfg.stay_min_samples).map_err(|e| e.to_string())?;
    let m = compute_metrics(&trips, params.num_agents, params.num_days).map_err(|e| e.to_string())?;
    let s = similarity(reference, &m).map_err(|e| e.to_string())?;
    Ok((s, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u32,
    pub evaluated: usize,
    pub failed: usize,
    pub culled: usize,
    pub best_score: f64,
    pub generation_best: Option<f64>,
    pub mean_score: Option<f64>,
    pub pool_size: usize,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    /// All-time best individuals, best first, at most `top_k`.
    pub top: Vec<Individual>,
    pub history: Vec<GenerationStats>,
    pub stopped_early: bool,
    pub cancelled: bool,
}

fn by_rank(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    b.score.rank_value().total_cmp(&a.score.rank_value()).then(a.generation.cmp(&b.generation))
}

/// Runs the GA. `warm` individuals join generation 0 unchanged (including
/// their seeds). `cancel`, when set between generations, stops the loop and
/// keeps the results so far.
pub fn evolve(
    cfg: &GaConfig,
    schema: &ParamSchema,
    reference: &MetricSet,
    map: &Arc<WorldMap>,
    warm: Vec<SimParams>,
    cancel: Option<&AtomicBool>,
) -> Result<GaOutcome, GaError> {
    cfg.validate()?;
    if let Err(e) = similarity(reference, reference) {
        return Err(GaError::Config(e.to_string()));
    }
    let mut rng = Rng::seed_from(derive_seed(&[cfg.ga_seed, u64::MAX]));
    let template = SimParams {
        num_agents: cfg.eval_agents,
        num_days: cfg.eval_days,
        sample_interval: cfg.sample_interval,
        map_path: String::new(),
        ..SimParams::default()
    };

    let mut gen0: Vec<(Individual, bool)> = seed_pool(cfg.pool_size, schema, &template, &mut rng)
        .into_iter()
        .map(|i| (i, false))
        .collect();
    for w in warm {
        let params = SimParams {
            num_agents: cfg.eval_agents,
            num_days: cfg.eval_days,
            sample_interval: cfg.sample_interval,
            ..w
        };
        gen0.push((Individual::new(params, 0, Lineage::Warm), true));
    }

    let mut pool: Vec<Individual> = Vec::new();
    let mut all: Vec<Individual> = Vec::new();
    let mut history = Vec::new();
    let mut best = FAILED_SCORE;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut cancelled = false;

    let mut layer: Vec<(Individual, bool)> = gen0;
    let mut generation = 0u32;
    loop {
        for (idx, (ind, keep_seed)) in layer.iter_mut().enumerate() {
            if !*keep_seed {
                ind.params.seed = derive_seed(&[cfg.ga_seed, generation as u64, idx as u64]);
            }
        }
        let scored: Vec<Individual> = cfg.exec.groups(&layer, layer.len(), |_, (ind, _)| {
            let mut out = ind.clone();
            match evaluate(&ind.params, map, reference, cfg) {
                Ok((s, m)) => {
                    out.score = Score::Value(s);
                    out.metrics = Some(m);
                }
                Err(e) => out.score = Score::Failed(e),
            }
            out
        });

        let failed = scored.iter().filter(|i| matches!(i.score, Score::Failed(_))).count();
        let values: Vec<f64> = scored.iter().filter_map(|i| matches!(i.score, Score::Value(_)).then(|| i.score.rank_value())).collect();
        let survivors: Vec<Individual> =
            scored.iter().filter(|i| matches!(i.score, Score::Value(v) if v >= cfg.cull_threshold)).cloned().collect();
        let culled = values.len() - survivors.len();
        all.extend(scored.iter().filter(|i| matches!(i.score, Score::Value(_))).cloned());

        if survivors.is_empty() {
            return Err(GaError::NoSurvivors { generation, failed, culled, threshold: cfg.cull_threshold });
        }
        pool.extend(survivors);

        let gen_best = values.iter().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        if let Some(g) = gen_best {
            if g > best {
                best = g;
                stale = 0;
            } else {
                stale += 1;
            }
        }
        history.push(GenerationStats {
            generation,
            evaluated: scored.len(),
            failed,
            culled,
            best_score: best,
            generation_best: gen_best,
            mean_score: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
            pool_size: pool.len(),
        });

        if generation >= cfg.max_generations {
            break;
        }
        if generation > 0 && stale >= cfg.patience {
            stopped_early = true;
            break;
        }
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            cancelled = true;
            break;
        }

        generation += 1;
        pool.sort_by(by_rank);
        let parents: Vec<&Individual> = pool.iter().take(cfg.parent_count).collect();
        let mut producer_turn = 0;
        layer = layer_plan(cfg.layer_size)
            .into_iter()
            .map(|kind| {
                let child = match kind {
                    None => {
                        let p = parents[producer_turn % parents.len()];
                        producer_turn += 1;
                        produce(p, schema, &mut rng, generation)
                    }
                    Some(s) if parents.len() >= 2 => mix(&parents, s, schema, &mut rng, generation),
                    // a single-member pool cannot be mixed; mutate instead
                    Some(_) => produce(parents[0], schema, &mut rng, generation),
                };
                (child, false)
            })
            .collect();
    }

    all.sort_by(by_rank);
    all.truncate(cfg.top_k);
    for ind in &all {
        debug_assert!(validate_params(&ind.params, schema).is_ok());
    }
    Ok(GaOutcome { top: all, history, stopped_early, cancelled })
}

/// Serializable form of one ranked result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub score: f64,
    pub generation: u32,
    pub lineage: Lineage,
    pub seed: u64,
    pub metrics: Option<[f64; 4]>,
    pub params: Vec<ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaReport {
    pub ga_seed: u64,
    pub reference: [f64; 4],
    pub stopped_early: bool,
    pub cancelled: bool,
    pub top: Vec<RankedEntry>,
    pub history: Vec<GenerationStats>,
}

impl GaReport {
    pub fn new(cfg: &GaConfig, reference: &MetricSet, outcome: &GaOutcome, schema: &ParamSchema) -> Self {
        let top = outcome
            .top
            .iter()
            .enumerate()
            .map(|(i, ind)| RankedEntry {
                rank: i + 1,
                score: ind.score.rank_value(),
                generation: ind.generation,
                lineage: ind.lineage,
                seed: ind.params.seed,
                metrics: ind.metrics.map(|m| m.values()),
                params: schema
                    .entries()
                    .iter()
                    .zip(&ind.params.values)
                    .map(|(d, &v)| ParamValue { name: d.name.to_string(), value: v })
                    .collect(),
            })
            .collect();
        GaReport {
            ga_seed: cfg.ga_seed,
            reference: reference.values(),
            stopped_early: outcome.stopped_early,
            cancelled: outcome.cancelled,
            top,
            history: outcome.history.clone(),
        }
    }
}
