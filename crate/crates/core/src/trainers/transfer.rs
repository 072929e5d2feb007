//! Fixed-representation transfer: the source trunk only embeds, a new head is
//! fitted on the target samples.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Method, SourceModel, TrainConfig};
use crate::bench::balanced_accuracy_of;
use crate::dataio::Dataset;
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::nets::{
    argmax_rows, fit_logistic, head_logits, infer, logistic_probs, nn_predict, normalize_rows, proto_logits,
    prototypes, relation_scores, shuffled, Encoder, HeadKind, HeadSpec,
};
use crate::numerics::{OptimizerState, Tape, Tensor, Var};
use crate::rng::{self, stream};

/// A target task: labelled training samples and test samples, with local
/// labels `0..classes.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTask {
    pub id: u64,
    pub classes: Vec<usize>,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl From<&Episode> for TargetTask {
    fn from(e: &Episode) -> Self {
        TargetTask { id: e.id, classes: e.classes.clone(), train: e.support.clone(), test: e.query.clone() }
    }
}

/// Evaluation-mode embeddings of a fixed set of samples.
pub struct EmbeddingCache {
    rows: HashMap<usize, usize>,
    z: Tensor,
}

impl EmbeddingCache {
    pub fn build(source: &SourceModel, data: &Dataset, indices: &[usize]) -> Result<Self> {
        Self::from_encoder(&source.encoder, data, indices)
    }

    pub fn from_encoder(encoder: &Encoder, data: &Dataset, indices: &[usize]) -> Result<Self> {
        let z = encoder.embed(&data.batch(indices)?)?;
        Ok(EmbeddingCache { rows: indices.iter().enumerate().map(|(r, &i)| (i, r)).collect(), z })
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = indices
            .iter()
            .map(|i| self.rows.get(i).copied().ok_or_else(|| Error::contract(format!("sample {i} is not cached"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.z.select_rows(&rows))
    }
}

/// Train a `Linear` or `ClassEmbedding` head on fixed embeddings with Adam.
///
/// With `batch_size >= n` every epoch is one full-batch step on the samples in
/// their given order.
#[allow(clippy::too_many_arguments)]
pub fn fit_gradient_head(
    kind: HeadKind,
    z: &Tensor,
    labels: &[usize],
    classes: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let n = z.rows();
    let mut params = HeadSpec::new(kind, classes).init(z.row_len(), seed)?;
    let mut opt = OptimizerState::adam(lr)?;
    for epoch in 0..epochs {
        let order: Vec<usize> = if batch_size >= n {
            (0..n).collect()
        } else {
            shuffled(n, &mut rng::rng_for(seed, &[stream::SHUFFLE, epoch as u64]))
        };
        for chunk in order.chunks(batch_size.max(1)) {
            let tape = Tape::new();
            let p: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
            let zc = tape.constant(z.select_rows(chunk));
            let y: Vec<usize> = chunk.iter().map(|&k| labels[k]).collect();
            let loss = head_logits(kind, &p, &zc)?.cross_entropy(&y)?;
            let grads: Vec<Tensor> = tape.grad(&loss, &p, false)?.iter().map(|g| g.value().clone()).collect();
            opt.step(&mut params, &grads)?;
        }
    }
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum FitMode {
    /// Full-batch steps on a support set.
    Episode,
    /// Mini-batch epochs over the whole target training set.
    Plain,
}

/// Fit `kind` on `(zs, ys)` and return the balanced accuracy on `(zq, yq)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_and_score(
    kind: HeadKind,
    zs: &Tensor,
    ys: &[usize],
    zq: &Tensor,
    yq: &[usize],
    ways: usize,
    relation: Option<&[Tensor]>,
    cfg: &TrainConfig,
    mode: FitMode,
    seed: u64,
) -> Result<f64> {
    let pred = match kind {
        HeadKind::Linear | HeadKind::ClassEmbedding => {
            let (epochs, batch) = match mode {
                FitMode::Episode => (cfg.finetune_steps, zs.rows()),
                FitMode::Plain => (cfg.transfer_epochs, cfg.batch_size),
            };
            let p = fit_gradient_head(kind, zs, ys, ways, epochs, batch, cfg.finetune_lr, seed)?;
            argmax_rows(&infer(&p, &[zq], |p, x| head_logits(kind, p, &x[0]))?)
        }
        HeadKind::Logistic => {
            let p = fit_logistic(zs, ys, ways)?;
            let zn = normalize_rows(zq);
            argmax_rows(&infer(&p, &[&zn], |p, x| logistic_probs(&p[0], &p[1], &x[0]))?)
        }
        HeadKind::NearestNeighbor => {
            (0..zq.rows()).map(|i| nn_predict(zs, ys, zq.row(i))).collect::<Result<Vec<_>>>()?
        }
        HeadKind::Prototype => {
            let protos = prototypes(zs, ys, ways)?;
            argmax_rows(&infer(&[], &[&protos, zq], |_, x| proto_logits(&x[0], &x[1]))?)
        }
        HeadKind::Relation => {
            let rel = relation.ok_or_else(|| Error::config("relation head needs a trained relation module"))?;
            let protos = prototypes(zs, ys, ways)?;
            argmax_rows(&infer(rel, &[&protos, zq], |p, x| relation_scores(p, &x[0], &x[1]))?)
        }
        HeadKind::Projection => return Err(Error::config("a projection head does not classify")),
    };
    balanced_accuracy_of(yq, &pred, ways)
}

fn split_pairs(pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    pairs.iter().copied().unzip()
}

/// Score a task on cached embeddings.
pub fn score_task(
    source: &SourceModel,
    cache: &EmbeddingCache,
    task: &TargetTask,
    head: HeadKind,
    cfg: &TrainConfig,
    plain: bool,
) -> Result<f64> {
    let (si, ys) = split_pairs(&task.train);
    let (qi, yq) = split_pairs(&task.test);
    let mode = if plain { FitMode::Plain } else { FitMode::Episode };
    let seed = rng::derive_seed(cfg.seed, &[stream::HEAD_INIT, task.id]);
    fit_and_score(
        head,
        &cache.gather(&si)?,
        &ys,
        &cache.gather(&qi)?,
        &yq,
        task.classes.len(),
        source.relation.as_deref(),
        cfg,
        mode,
        seed,
    )
}

/// Fit a new head of kind `head` on the episode's support set with the trunk
/// frozen; balanced accuracy on the query set.
pub fn finetune_episode(source: &SourceModel, data: &Dataset, episode: &Episode, head: HeadKind, cfg: &TrainConfig) -> Result<f64> {
    let cache = EmbeddingCache::build(source, data, &[episode.support_indices(), episode.query_indices()].concat())?;
    score_task(source, &cache, &TargetTask::from(episode), head, cfg, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub balanced_accuracy: f64,
    pub head_params: usize,
}

/// Plain transfer: a new linear or class-embedding head trained by mini-batch
/// epochs on all target training samples; frozen trunk.
pub fn transfer_plain(
    source: &SourceModel,
    data: &Dataset,
    task: &TargetTask,
    head: HeadKind,
    cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    if !matches!(head, HeadKind::Linear | HeadKind::ClassEmbedding) {
        return Err(Error::config("plain transfer trains a linear or class-embedding head"));
    }
    let idx: Vec<usize> = task.train.iter().chain(&task.test).map(|p| p.0).collect();
    let cache = EmbeddingCache::build(source, data, &idx)?;
    let bacc = score_task(source, &cache, task, head, cfg, true)?;
    let head_params = HeadSpec::new(head, task.classes.len()).param_count(source.encoder.latent())?;
    Ok(TransferOutcome { balanced_accuracy: bacc, head_params })
}

/// Downstream accuracy of `method` on one episode. Frozen-trunk methods use
/// `cache`; MAML adapts its trunk and reads raw samples from `data`.
pub fn evaluate_episode(
    method: Method,
    source: &SourceModel,
    cache: &EmbeddingCache,
    data: &Dataset,
    episode: &Episode,
    cfg: &TrainConfig,
) -> Result<f64> {
    let task = TargetTask::from(episode);
    match method {
        Method::Maml => super::maml_adapt_and_score(source, data, episode, cfg),
        Method::Monolithic => Err(Error::config("monolithic models are evaluated by the scenario runner")),
        m => {
            let (head, plain) = m.downstream_head(cfg).ok_or_else(|| Error::config(format!("{m} has no downstream head")))?;
            score_task(source, cache, &task, head, cfg, plain)
        }
    }
}
