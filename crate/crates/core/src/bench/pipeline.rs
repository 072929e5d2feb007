//! End-to-end runs driven by an [`ExperimentConfig`].

use std::collections::BTreeMap;

use super::config::ExperimentConfig;
use super::records::{sort_records, RunRecord};
use super::scenarios::{run_scenarios_abc, ScenarioInputs};
use super::sweeps::{sweep_shots, sweep_ways, EpisodeSweep};
use crate::dataio::{normalize_fit, ClassPartition, Dataset, NormStats, SplitId};
use crate::error::Result;
use crate::trainers::{train_source, Method, SourceKind, SourceModel, TrainConfig};

/// Raw data, its partition, and a copy standardized with training-split statistics.
pub struct Prepared {
    pub raw: Dataset,
    pub partition: ClassPartition,
    pub data: Dataset,
    pub norm: NormStats,
    pub dataset_id: String,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (raw, partition) = cfg.load_partitioned()?;
    let norm = normalize_fit(&raw, partition.split(SplitId::Train))?;
    let data = raw.normalized(&norm)?;
    Ok(Prepared { raw, partition, data, norm, dataset_id: cfg.dataset.id() })
}

/// One trained source per distinct [`SourceKind`] needed by `methods`. The
/// distilled source reuses the linear source as its teacher when present.
pub fn train_sources(
    methods: &[Method],
    prep: &Prepared,
    cfg: &ExperimentConfig,
    train: &TrainConfig,
) -> Result<BTreeMap<SourceKind, SourceModel>> {
    let spec = cfg.encoder_spec(&prep.data.profile);
    let mut kinds: Vec<SourceKind> = methods.iter().filter(|m| **m != Method::Monolithic).map(|m| m.source()).collect();
    kinds.sort();
    kinds.dedup();
    let mut out = BTreeMap::new();
    for kind in kinds {
        let teacher = out.get(&SourceKind::Linear);
        let (mut model, metrics) = train_source(kind, &prep.data, &prep.partition, spec.clone(), train, teacher)?;
        log::info!("trained {kind:?} source: {} epochs, last loss {:.4}", metrics.len(), metrics.last().map_or(f64::NAN, |m| m.train_loss));
        model.norm = Some(prep.norm.clone());
        out.insert(kind, model);
    }
    Ok(out)
}

fn sweep_for(cfg: &ExperimentConfig, ways: usize, seed: u64, dataset_id: &str) -> EpisodeSweep {
    EpisodeSweep { ways, queries: cfg.queries, episodes: cfg.test_episodes, seed, dataset_id: dataset_id.to_string() }
}

/// Shot sweep for every configured method and seed.
pub fn run_sweep_shots(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let prep = prepare(cfg)?;
    let methods: Vec<Method> = cfg.method_list()?.into_iter().filter(|m| *m != Method::Monolithic).collect();
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let train = TrainConfig { seed, ..cfg.train.clone() };
        let sources = train_sources(&methods, &prep, cfg, &train)?;
        let pairs: Vec<(Method, &SourceModel)> = methods.iter().map(|m| (*m, &sources[&m.source()])).collect();
        let sweep = sweep_for(cfg, cfg.ways, seed, &prep.dataset_id);
        out.extend(sweep_shots(&pairs, &prep.data, prep.partition.split(SplitId::Test), &cfg.shots, &sweep, &train)?);
    }
    sort_records(&mut out);
    Ok(out)
}

/// Way sweep of `method` for every seed, with the forest reference row.
pub fn run_sweep_ways(cfg: &ExperimentConfig, method: Method) -> Result<Vec<RunRecord>> {
    let prep = prepare(cfg)?;
    let spec = cfg.encoder_spec(&prep.data.profile);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let train = TrainConfig { seed, ..cfg.train.clone() };
        let sweep = sweep_for(cfg, cfg.ways, seed, &prep.dataset_id);
        let forest = crate::forest::ForestConfig { seed, ..cfg.forest.clone() };
        out.extend(sweep_ways(
            method,
            &prep.data,
            &prep.partition,
            spec.clone(),
            &cfg.train_ways,
            &cfg.test_ways,
            cfg.way_sweep_shots,
            &sweep,
            &train,
            Some(&forest),
        )?);
    }
    sort_records(&mut out);
    Ok(out)
}

/// Scenarios (a), (b), (c) for every seed; selections come from the classes
/// outside the training split.
pub fn run_scenarios(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let (raw, partition) = cfg.load_partitioned()?;
    let unpopular = partition.unpopular_classes();
    let dataset_id = cfg.dataset.id();
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let inputs = ScenarioInputs {
            data: &raw,
            unpopular: &unpopular,
            spec: cfg.encoder_spec(&raw.profile),
            train: &cfg.train,
            forest: &cfg.forest,
            scenarios: &cfg.scenarios,
            seed,
            dataset_id: &dataset_id,
        };
        out.extend(run_scenarios_abc(&inputs)?);
    }
    sort_records(&mut out);
    Ok(out)
}
