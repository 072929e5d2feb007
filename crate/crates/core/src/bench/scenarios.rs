//! Closed-set scenarios with stratified cross-validation:
//! (a) all classes, (b) the (a) models restricted to a random selection of
//! unpopular classes, (c) fresh models trained on the selection alone.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::metrics::balanced_accuracy_of;
use super::records::{sort_records, RunRecord};
use crate::dataio::{monolithic_split, normalize_fit, Dataset, Split};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, forest_stats, forest_votes, Forest, ForestConfig};
use crate::nets::{head_logits, head_params, infer, EncoderSpec, HeadKind};
use crate::rng::{self, stream};
use crate::trainers::{config_hash, train_monolithic, SourceModel, TrainConfig};

/// Unit ids pack `(fold, selection)`.
pub const UNIT_STRIDE: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioModel {
    Cnn,
    Forest { max_depth: Option<usize> },
}

impl ScenarioModel {
    pub fn name(&self) -> String {
        match self {
            ScenarioModel::Cnn => "monolithic".into(),
            ScenarioModel::Forest { max_depth: None } => "rf_unbounded".into(),
            ScenarioModel::Forest { max_depth: Some(d) } => format!("rf_depth{d}"),
        }
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Vec<ScenarioModel> {
        let mut v = Vec::new();
        if cfg.cnn {
            v.push(ScenarioModel::Cnn);
        }
        v.extend(cfg.forest_depths.iter().map(|&d| ScenarioModel::Forest { max_depth: (d > 0).then_some(d) }));
        v
    }
}

pub struct ScenarioInputs<'a> {
    pub data: &'a Dataset,
    /// Pool the class selections are drawn from.
    pub unpopular: &'a [usize],
    pub spec: EncoderSpec,
    pub train: &'a TrainConfig,
    pub forest: &'a ForestConfig,
    pub scenarios: &'a ScenarioConfig,
    pub seed: u64,
    pub dataset_id: &'a str,
}

enum Fitted {
    Cnn { model: SourceModel, data: Dataset },
    Forest(Forest),
}

/// A model over `classes` (sorted dataset labels).
struct Trained {
    classes: Vec<usize>,
    fitted: Fitted,
    size: (Option<usize>, Option<usize>, Option<usize>, Option<f64>),
}

impl Trained {
    fn fit(model: ScenarioModel, inp: &ScenarioInputs, train_idx: &[usize], salt: u64) -> Result<Trained> {
        let data = inp.data;
        let mut classes: Vec<usize> = data.labels(train_idx);
        classes.sort_unstable();
        classes.dedup();
        let train = Split { classes: classes.clone(), indices: train_idx.to_vec() };
        match model {
            ScenarioModel::Cnn => {
                let stats = normalize_fit(data, &train)?;
                let norm = data.normalized(&stats)?;
                let cfg = TrainConfig { seed: rng::derive_seed(inp.seed, &[stream::INIT, salt]), ..inp.train.clone() };
                let (fit, val) = monolithic_split(&norm, &train, cfg.seed)?;
                let (model, _) = train_monolithic(&norm, &fit, &val, inp.spec.clone(), HeadKind::Linear, &cfg)?;
                let size = (Some(model.encoder.spec.trunk_params()), Some(head_params(model.encoder.latent(), classes.len())), None, None);
                Ok(Trained { classes, fitted: Fitted::Cnn { model, data: norm }, size })
            }
            ScenarioModel::Forest { max_depth } => {
                let cfg = ForestConfig { max_depth, seed: rng::derive_seed(inp.seed, &[stream::FOREST, salt]), ..inp.forest.clone() };
                let y: Vec<usize> = data.labels(train_idx).iter().map(|l| classes.binary_search(l).expect("own class")).collect();
                let forest = fit_forest(&data.flat_rows(train_idx), &y, &cfg)?;
                let (nodes, depth) = forest_stats(&forest);
                Ok(Trained { classes, fitted: Fitted::Forest(forest), size: (None, None, Some(nodes), Some(depth)) })
            }
        }
    }

    /// Dataset-label predictions, argmax restricted to `allowed` when given.
    fn predict(&self, data: &Dataset, idx: &[usize], allowed: Option<&[usize]>) -> Result<Vec<usize>> {
        let cols: Vec<usize> = match allowed {
            None => (0..self.classes.len()).collect(),
            Some(a) => a
                .iter()
                .map(|l| self.classes.binary_search(l).map_err(|_| Error::contract(format!("class {l} unknown to the model"))))
                .collect::<Result<_>>()?,
        };
        let scores: Vec<Vec<f64>> = match &self.fitted {
            Fitted::Cnn { model, data: norm } => {
                let (kind, head) = model.head.as_ref().expect("classifier head");
                let z = model.encoder.embed(&norm.batch(idx)?)?;
                let logits = infer(head, &[&z], |p, x| head_logits(*kind, p, &x[0]))?;
                (0..logits.rows()).map(|i| logits.row(i).to_vec()).collect()
            }
            Fitted::Forest(f) => {
                let rows = data.flat_rows(idx);
                rows.iter().map(|r| forest_votes(f, r).into_iter().map(|v| v as f64).collect()).collect()
            }
        };
        Ok(scores
            .iter()
            .map(|s| {
                let mut best = cols[0];
                for &c in &cols {
                    if s[c] > s[best] {
                        best = c;
                    }
                }
                self.classes[best]
            })
            .collect())
    }
}

fn score(truth: &[usize], pred: &[usize], classes: &[usize]) -> Result<f64> {
    let local = |v: &[usize]| -> Result<Vec<usize>> {
        v.iter().map(|l| classes.binary_search(l).map_err(|_| Error::contract(format!("label {l} outside the scored classes")))).collect()
    };
    balanced_accuracy_of(&local(truth)?, &local(pred)?, classes.len())
}

/// Stratified fold of every index in `idx`: members of each class are
/// shuffled and dealt round-robin.
pub fn stratified_folds(data: &Dataset, idx: &[usize], folds: usize, seed: u64, salt: u64) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for (class, mut members) in data.by_class(idx) {
        members.shuffle(&mut rng::rng_for(seed, &[stream::FOLDS, salt, class as u64]));
        for (k, i) in members.into_iter().enumerate() {
            out[k % folds].push(i);
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

/// Random class selections shared by scenarios (b) and (c).
pub fn class_selections(pool: &[usize], per: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if pool.len() < per {
        return Err(Error::config(format!("cannot select {per} classes from a pool of {}", pool.len())));
    }
    Ok((0..count)
        .map(|j| {
            let mut r = rng::rng_for(seed, &[stream::SELECTION, j as u64]);
            let mut s: Vec<usize> = index::sample(&mut r, pool.len(), per).into_iter().map(|k| pool[k]).collect();
            s.sort_unstable();
            s
        })
        .collect())
}

fn train_test(folds: &[Vec<usize>], f: usize) -> (Vec<usize>, Vec<usize>) {
    let train: Vec<usize> = folds.iter().enumerate().filter(|(k, _)| *k != f).flat_map(|(_, v)| v.iter().copied()).collect();
    (train, folds[f].clone())
}

#[allow(clippy::too_many_arguments)]
fn record(inp: &ScenarioInputs, model: ScenarioModel, scenario: &str, ways: usize, unit: u64, acc: f64, t: &Trained, secs: f64) -> Result<RunRecord> {
    let hash = config_hash(&(inp.train, inp.forest, inp.scenarios, model.name()));
    let mut r = RunRecord::new(&model.name(), scenario, inp.dataset_id, inp.seed, &hash);
    r.ways = ways;
    r.unit_id = unit;
    r.balanced_accuracy = acc;
    (r.trunk_params, r.head_params, r.forest_nodes, r.forest_avg_depth) = t.size;
    r.wall_clock_seconds = secs;
    r.seal()
}

/// Records for scenarios (a), (b) and (c) for every model in the config.
/// Scenario (c) yields `folds x selections x models` records.
pub fn run_scenarios_abc(inp: &ScenarioInputs) -> Result<Vec<RunRecord>> {
    let sc = inp.scenarios;
    let data = inp.data;
    let models = ScenarioModel::from_config(sc);
    if models.is_empty() {
        return Err(Error::config("no scenario models configured"));
    }
    let selections = class_selections(inp.unpopular, sc.target_classes, sc.selections, inp.seed)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let folds_a = stratified_folds(data, &all, sc.folds, inp.seed, 0);
    let all_classes: Vec<usize> = (0..data.num_classes()).collect();

    let jobs_ab: Vec<(ScenarioModel, usize)> = models.iter().flat_map(|&m| (0..sc.folds).map(move |f| (m, f))).collect();
    let ab: Vec<Vec<RunRecord>> = jobs_ab
        .par_iter()
        .map(|&(m, f)| -> Result<Vec<RunRecord>> {
            let start = Instant::now();
            let (tr, te) = train_test(&folds_a, f);
            let t = Trained::fit(m, inp, &tr, f as u64)?;
            let pred = t.predict(data, &te, None)?;
            let acc = score(&data.labels(&te), &pred, &all_classes)?;
            let mut out = vec![record(inp, m, "a", all_classes.len(), f as u64, acc, &t, start.elapsed().as_secs_f64())?];
            for (j, sel) in selections.iter().enumerate() {
                let start = Instant::now();
                let idx: Vec<usize> = te.iter().copied().filter(|i| sel.binary_search(&data.label(*i)).is_ok()).collect();
                if idx.is_empty() {
                    continue;
                }
                let pred = t.predict(data, &idx, Some(sel))?;
                let acc = score(&data.labels(&idx), &pred, sel)?;
                let unit = f as u64 * UNIT_STRIDE + j as u64;
                out.push(record(inp, m, "b", sel.len(), unit, acc, &t, start.elapsed().as_secs_f64())?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let jobs_c: Vec<(ScenarioModel, usize, usize)> = models
        .iter()
        .flat_map(|&m| (0..selections.len()).flat_map(move |j| (0..sc.folds).map(move |f| (m, j, f))))
        .collect();
    let c: Vec<RunRecord> = jobs_c
        .par_iter()
        .map(|&(m, j, f)| -> Result<RunRecord> {
            let start = Instant::now();
            let sel = &selections[j];
            let idx = Split::of_classes(data, sel).indices;
            let folds = stratified_folds(data, &idx, sc.folds, inp.seed, 1 + j as u64);
            let (tr, te) = train_test(&folds, f);
            let salt = UNIT_STRIDE * (1 + j as u64) + f as u64;
            let t = Trained::fit(m, inp, &tr, salt)?;
            let pred = t.predict(data, &te, None)?;
            let acc = score(&data.labels(&te), &pred, sel)?;
            record(inp, m, "c", sel.len(), f as u64 * UNIT_STRIDE + j as u64, acc, &t, start.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<RunRecord> = ab.into_iter().flatten().chain(c).collect();
    sort_records(&mut records);
    Ok(records)
}
