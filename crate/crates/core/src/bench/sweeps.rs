//! Few-shot sweeps over shared test episodes.

use std::time::Instant;

use rayon::prelude::*;

use super::metrics::balanced_accuracy_of;
use super::records::{sort_records, RunRecord};
use crate::dataio::{ClassPartition, Dataset, Split, SplitId};
use crate::episodes::{test_episode_batch, Episode};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, forest_predict, ForestConfig};
use crate::nets::{head_params, EncoderSpec, HeadSpec};
use crate::trainers::{evaluate_episode, train_source, EmbeddingCache, Method, SourceModel, TrainConfig};

/// Geometry and bookkeeping shared by all sweep points.
#[derive(Clone, Debug)]
pub struct EpisodeSweep {
    pub ways: usize,
    pub queries: usize,
    pub episodes: usize,
    pub seed: u64,
    pub dataset_id: String,
}

fn head_size(method: Method, source: &SourceModel, ways: usize, cfg: &TrainConfig) -> Result<usize> {
    let d = source.encoder.latent();
    match method.downstream_head(cfg) {
        Some((kind, _)) => HeadSpec::new(kind, ways).param_count(d),
        None => Ok(head_params(d, ways)),
    }
}

/// Score `source` under `method` on every episode, in parallel.
#[allow(clippy::too_many_arguments)]
fn score_episodes(
    method: Method,
    source: &SourceModel,
    cache: &EmbeddingCache,
    data: &Dataset,
    episodes: &[Episode],
    cfg: &TrainConfig,
    scenario: &str,
    sweep: &EpisodeSweep,
    train_ways: Option<usize>,
) -> Result<Vec<RunRecord>> {
    if method == Method::Monolithic {
        return Err(Error::config("monolithic models are scored by the scenario runner"));
    }
    let trunk = source.encoder.spec.trunk_params();
    episodes
        .par_iter()
        .map(|ep| {
            let start = Instant::now();
            let acc = evaluate_episode(method, source, cache, data, ep, cfg)?;
            let mut r = RunRecord::new(method.name(), scenario, &sweep.dataset_id, sweep.seed, &source.config_hash);
            r.ways = ep.ways();
            r.shots = ep.shots();
            r.queries = ep.queries();
            r.train_ways = train_ways;
            r.unit_id = ep.id;
            r.balanced_accuracy = acc;
            r.trunk_params = Some(trunk);
            r.head_params = Some(head_size(method, source, ep.ways(), cfg)?);
            r.wall_clock_seconds = start.elapsed().as_secs_f64();
            r.seal()
        })
        .collect()
}

/// Per-episode records of one method on explicit episodes (scenario `episodes`).
pub fn eval_episodes(
    method: Method,
    source: &SourceModel,
    data: &Dataset,
    split: &Split,
    episodes: &[Episode],
    cfg: &TrainConfig,
    sweep: &EpisodeSweep,
) -> Result<Vec<RunRecord>> {
    let cache = EmbeddingCache::build(source, data, &split.indices)?;
    let mut out = score_episodes(method, source, &cache, data, episodes, cfg, "episodes", sweep, None)?;
    sort_records(&mut out);
    Ok(out)
}

/// For every shot count, `sweep.episodes` test episodes shared by all
/// methods; one record per (method, shots, episode).
pub fn sweep_shots(
    sources: &[(Method, &SourceModel)],
    data: &Dataset,
    test: &Split,
    shots: &[usize],
    sweep: &EpisodeSweep,
    cfg: &TrainConfig,
) -> Result<Vec<RunRecord>> {
    let caches: Vec<EmbeddingCache> =
        sources.iter().map(|(_, s)| EmbeddingCache::build(s, data, &test.indices)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &s in shots {
        let episodes = test_episode_batch(data, test, SplitId::Test, (sweep.ways, s, sweep.queries), sweep.episodes, sweep.seed)?;
        for ((method, source), cache) in sources.iter().zip(&caches) {
            out.extend(score_episodes(*method, source, cache, data, &episodes, cfg, "shots", sweep, None)?);
        }
    }
    sort_records(&mut out);
    Ok(out)
}

/// Forest fitted on each episode's support set, scored on its query set.
pub fn forest_reference(data: &Dataset, episodes: &[Episode], forest: &ForestConfig, sweep: &EpisodeSweep, scenario: &str) -> Result<Vec<RunRecord>> {
    let hash = crate::trainers::config_hash(forest);
    episodes
        .par_iter()
        .map(|ep| {
            let start = Instant::now();
            let cfg = ForestConfig { seed: crate::rng::derive_seed(forest.seed, &[crate::rng::stream::FOREST, ep.id]), ..forest.clone() };
            let f = fit_forest(&data.flat_rows(&ep.support_indices()), &ep.support_labels(), &cfg)?;
            let pred: Vec<usize> = data.flat_rows(&ep.query_indices()).iter().map(|r| forest_predict(&f, r)).collect();
            let (nodes, depth) = crate::forest::forest_stats(&f);
            let mut r = RunRecord::new("rf", scenario, &sweep.dataset_id, sweep.seed, &hash);
            r.ways = ep.ways();
            r.shots = ep.shots();
            r.queries = ep.queries();
            r.unit_id = ep.id;
            r.balanced_accuracy = balanced_accuracy_of(&ep.query_labels(), &pred, ep.ways())?;
            r.forest_nodes = Some(nodes);
            r.forest_avg_depth = Some(depth);
            r.wall_clock_seconds = start.elapsed().as_secs_f64();
            r.seal()
        })
        .collect()
}

/// One source model per train-way value, each scored at every test-way value
/// with `shots` shots; plus a forest reference row per test-way value.
#[allow(clippy::too_many_arguments)]
pub fn sweep_ways(
    method: Method,
    data: &Dataset,
    partition: &ClassPartition,
    spec: EncoderSpec,
    train_grid: &[usize],
    test_grid: &[usize],
    shots: usize,
    sweep: &EpisodeSweep,
    cfg: &TrainConfig,
    forest: Option<&ForestConfig>,
) -> Result<Vec<RunRecord>> {
    if !matches!(method, Method::Protonet | Method::BaselineNn) {
        return Err(Error::config(format!("the way sweep supports protonet and baseline_nn, not {method}")));
    }
    let test = partition.split(SplitId::Test);
    let episodes: Vec<Vec<Episode>> = test_grid
        .iter()
        .map(|&n| test_episode_batch(data, test, SplitId::Test, (n, shots, sweep.queries), sweep.episodes, sweep.seed))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut shared: Option<SourceModel> = None;
    for &tw in train_grid {
        let cfg_tw = TrainConfig { train_ways: tw, ..cfg.clone() };
        // Non-episodic sources do not depend on the train-way value.
        let source = match (&shared, method) {
            (Some(s), Method::BaselineNn) => s.clone(),
            _ => train_source(method.source(), data, partition, spec.clone(), &cfg_tw, None)?.0,
        };
        if method == Method::BaselineNn {
            shared = Some(source.clone());
        }
        let cache = EmbeddingCache::build(&source, data, &test.indices)?;
        for eps in &episodes {
            out.extend(score_episodes(method, &source, &cache, data, eps, cfg, "ways", sweep, Some(tw))?);
        }
    }
    if let Some(f) = forest {
        for eps in &episodes {
            out.extend(forest_reference(data, eps, f, sweep, "ways")?);
        }
    }
    sort_records(&mut out);
    Ok(out)
}
