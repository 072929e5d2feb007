//! Episodic meta-training: ProtoNet, RelationNet and second-order MAML.
//!
//! One optimizer step per episode. Checkpoints are selected on a fixed set of
//! meta-validation episodes drawn from the validation split when it can supply
//! them.

use super::monolithic::keep_best;
use super::transfer::{fit_and_score, EmbeddingCache, FitMode};
use super::{train_step, EpochMetrics, SourceModel, TrainConfig};
use crate::bench::balanced_accuracy_of;
use crate::dataio::{Dataset, Split, SplitId};
use crate::episodes::{test_episode_batch, Episode, EpisodeStream};
use crate::error::{Error, Result};
use crate::nets::{
    argmax_rows, linear_logits, proto_logits, prototypes_var, relation_scores, Encoder, EncoderSpec, HeadKind,
    HeadSpec, RunningStats,
};
use crate::numerics::{one_hot, LrSchedule, OptimizerState, Tape, Tensor, Var};
use crate::rng::{self, stream};

fn stream_for(cfg: &TrainConfig) -> EpisodeStream {
    EpisodeStream {
        epochs: cfg.epochs,
        episodes_per_epoch: cfg.episodes_per_epoch,
        ways: cfg.train_ways,
        shots: cfg.train_shots,
        queries: cfg.train_queries,
        seed: cfg.seed,
    }
}

fn validation_episodes(data: &Dataset, val: &Split, cfg: &TrainConfig) -> Vec<Episode> {
    if val.is_empty() || cfg.val_episodes == 0 {
        return Vec::new();
    }
    let ways = cfg.train_ways.min(val.classes.len());
    let geometry = (ways, cfg.train_shots, cfg.train_queries);
    match test_episode_batch(data, val, SplitId::Val, geometry, cfg.val_episodes, cfg.seed) {
        Ok(eps) if ways >= 2 => eps,
        Ok(_) => Vec::new(),
        Err(e) => {
            log::warn!("no meta-validation episodes ({e}); publishing the last epoch");
            Vec::new()
        }
    }
}

fn episode_batch(data: &Dataset, ep: &Episode) -> Result<(Tensor, Vec<usize>, Vec<usize>)> {
    let idx: Vec<usize> = ep.support_indices().into_iter().chain(ep.query_indices()).collect();
    Ok((data.batch(&idx)?, ep.support_labels(), ep.query_labels()))
}

/// Mean balanced accuracy of a frozen-trunk head over `episodes`.
fn frozen_score(enc: &Encoder, relation: Option<&[Tensor]>, head: HeadKind, data: &Dataset, val: &Split, episodes: &[Episode], cfg: &TrainConfig) -> Result<Option<f64>> {
    if episodes.is_empty() {
        return Ok(None);
    }
    let cache = EmbeddingCache::from_encoder(enc, data, &val.indices)?;
    let mut total = 0.0;
    for ep in episodes {
        let zs = cache.gather(&ep.support_indices())?;
        let zq = cache.gather(&ep.query_indices())?;
        total += fit_and_score(head, &zs, &ep.support_labels(), &zq, &ep.query_labels(), ep.ways(), relation, cfg, FitMode::Episode, cfg.seed)?;
    }
    Ok(Some(total / episodes.len() as f64))
}

struct EpisodicRun<'a> {
    data: &'a Dataset,
    train: &'a Split,
    val: &'a Split,
    cfg: &'a TrainConfig,
}

impl EpisodicRun<'_> {
    /// Shared loop for frozen-head meta-learners.
    fn run<L>(
        &self,
        spec: EncoderSpec,
        mut extra: Vec<Tensor>,
        opt: &mut OptimizerState,
        head: HeadKind,
        loss: L,
    ) -> Result<(Encoder, Vec<Tensor>, Vec<EpochMetrics>)>
    where
        L: Fn(&Var, &Var, &[usize], &[usize], usize, &[Var]) -> Result<Var>,
    {
        let cfg = self.cfg;
        let mut enc = Encoder::init(spec, cfg.seed)?;
        let val_eps = validation_episodes(self.data, self.val, cfg);
        let mut best = None;
        let mut metrics = Vec::new();
        let mut epoch_loss = (0.0, 0usize);
        let mut current = usize::MAX;
        let stream = stream_for(cfg);
        let mut finish_epoch = |epoch: usize, enc: &Encoder, extra: &[Tensor], sum: (f64, usize), lr: f64| -> Result<()> {
            let rel = if head == HeadKind::Relation { Some(extra) } else { None };
            let score = frozen_score(enc, rel, head, self.data, self.val, &val_eps, cfg)?;
            metrics.push(EpochMetrics { epoch, train_loss: sum.0 / sum.1.max(1) as f64, val_balanced_accuracy: score, learning_rate: lr });
            keep_best(&mut best, cfg.selection, enc, extra, score);
            Ok(())
        };
        for (epoch, ep) in stream.iter(self.data, self.train, SplitId::Train)? {
            if epoch != current {
                if current != usize::MAX {
                    finish_epoch(current, &enc, &extra, epoch_loss, opt.learning_rate)?;
                }
                current = epoch;
                epoch_loss = (0.0, 0);
                opt.start_epoch(epoch);
            }
            let (x, ys, yq) = episode_batch(self.data, &ep)?;
            let ns = ys.len();
            let nq = yq.len();
            let ways = ep.ways();
            let l = train_step(&mut enc, &mut extra, opt, &x, |z, e| {
                let zs = z.narrow(0, 0, ns)?;
                let zq = z.narrow(0, ns, nq)?;
                loss(&zs, &zq, &ys, &yq, ways, e)
            })?;
            epoch_loss.0 += l;
            epoch_loss.1 += 1;
        }
        if current != usize::MAX {
            finish_epoch(current, &enc, &extra, epoch_loss, opt.learning_rate)?;
        }
        let best = best.ok_or_else(|| Error::config("meta-training produced no episodes"))?;
        Ok((best.encoder, best.extra, metrics))
    }
}

/// Prototypical networks: cross-entropy over negative squared distances to
/// support-set class means; learning rate halved every
/// `protonet_halving_epochs` epochs.
pub fn meta_train_protonet(
    data: &Dataset,
    train: &Split,
    val: &Split,
    spec: EncoderSpec,
    cfg: &TrainConfig,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let schedule = LrSchedule::HalveEveryKEpochs { k: cfg.protonet_halving_epochs };
    let mut opt = cfg.optimizer(cfg.learning_rate, schedule)?;
    let run = EpisodicRun { data, train, val, cfg };
    let (encoder, _, metrics) = run.run(spec, Vec::new(), &mut opt, HeadKind::Prototype, |zs, zq, ys, yq, ways, _| {
        proto_logits(&prototypes_var(zs, ys, ways)?, zq)?.cross_entropy(yq)
    })?;
    Ok((
        SourceModel {
            method: "protonet".into(),
            config_hash: super::config_hash(&(cfg, "protonet")),
            encoder,
            head: None,
            relation: None,
            norm: None,
            train_classes: train.classes.clone(),
            class_ids: data.class_ids.clone(),
            skipped_episodes: 0,
        },
        metrics,
    ))
}

/// Relation networks: MSE between relation scores and one-hot query targets;
/// trunk and relation module trained jointly.
pub fn meta_train_relationnet(
    data: &Dataset,
    train: &Split,
    val: &Split,
    spec: EncoderSpec,
    cfg: &TrainConfig,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let mut opt = cfg.optimizer(cfg.learning_rate, cfg.lr_schedule)?;
    let rel = HeadSpec::new(HeadKind::Relation, cfg.train_ways).init(spec.latent, cfg.seed)?;
    let run = EpisodicRun { data, train, val, cfg };
    let (encoder, relation, metrics) = run.run(spec, rel, &mut opt, HeadKind::Relation, |zs, zq, ys, yq, ways, e| {
        let scores = relation_scores(e, &prototypes_var(zs, ys, ways)?, zq)?;
        let target = scores.tape().constant(one_hot(yq, ways)?);
        scores.mse(&target)
    })?;
    Ok((
        SourceModel {
            method: "relationnet".into(),
            config_hash: super::config_hash(&(cfg, "relationnet")),
            encoder,
            head: None,
            relation: Some(relation),
            norm: None,
            train_classes: train.classes.clone(),
            class_ids: data.class_ids.clone(),
            skipped_episodes: 0,
        },
        metrics,
    ))
}

/// Adapt `(trunk, linear head)` with `steps` SGD steps on the support loss,
/// keeping the graph, then return the query loss at the adapted parameters.
#[allow(clippy::too_many_arguments)]
fn adapted_query_loss(
    spec: &EncoderSpec,
    running: &[RunningStats],
    theta: &[Var],
    xs: &Var,
    ys: &[usize],
    xq: &Var,
    yq: &[usize],
    steps: usize,
    inner_lr: f64,
    create_graph: bool,
) -> Result<Var> {
    let tape = theta[0].tape().clone();
    let n_enc = theta.len() - 2;
    let mut fast: Vec<Var> = theta.to_vec();
    for _ in 0..steps {
        let (zs, _) = spec.forward(&fast[..n_enc], running, xs, true)?;
        let loss = linear_logits(&fast[n_enc], &fast[n_enc + 1], &zs)?.cross_entropy(ys)?;
        let grads = tape.grad(&loss, &fast, create_graph)?;
        fast = fast.iter().zip(&grads).map(|(f, g)| f.sub(&g.scale(inner_lr)?)).collect::<Result<_>>()?;
    }
    let (zq, _) = spec.forward(&fast[..n_enc], running, xq, true)?;
    linear_logits(&fast[n_enc], &fast[n_enc + 1], &zq)?.cross_entropy(yq)
}

/// Query loss after adaptation and its exact gradient with respect to the
/// initial parameters `params = trunk ++ [W, b]`, through the inner updates.
#[allow(clippy::too_many_arguments)]
pub fn maml_outer_grad(
    spec: &EncoderSpec,
    params: &[Tensor],
    running: &[RunningStats],
    xs: &Tensor,
    ys: &[usize],
    xq: &Tensor,
    yq: &[usize],
    steps: usize,
    inner_lr: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let theta: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let (xs, xq) = (tape.constant(xs.clone()), tape.constant(xq.clone()));
    let mut loss = 0.0;
    let grads = crate::numerics::higher_order_grad(&tape, &theta, |th| {
        let l = adapted_query_loss(spec, running, th, &xs, ys, &xq, yq, steps, inner_lr, true)?;
        loss = l.item();
        Ok(l)
    })?;
    Ok((loss, grads))
}

/// MAML with second-order outer gradients and a meta-batch of one episode.
/// Episodes whose inner loop diverges are skipped and counted.
pub fn meta_train_maml(
    data: &Dataset,
    train: &Split,
    val: &Split,
    spec: EncoderSpec,
    cfg: &TrainConfig,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let mut enc = Encoder::init(spec.clone(), cfg.seed)?;
    let mut head = HeadSpec::new(HeadKind::Linear, cfg.train_ways).init(enc.latent(), cfg.seed)?;
    let mut opt = cfg.optimizer(cfg.maml_outer_lr, cfg.lr_schedule)?;
    let val_eps = validation_episodes(data, val, cfg);
    let stream = stream_for(cfg);
    let n_enc = enc.params.len();
    let mut skipped = 0usize;
    let mut best = None;
    let mut metrics = Vec::new();
    let mut sums = vec![(0.0, 0usize); cfg.epochs];
    let mut last_epoch = None;
    let mut close = |epoch: usize, enc: &Encoder, head: &[Tensor], sum: (f64, usize), lr: f64, best: &mut Option<_>| -> Result<()> {
        let score = if val_eps.is_empty() {
            None
        } else {
            let probe = SourceModel {
                method: "maml".into(),
                config_hash: String::new(),
                encoder: enc.clone(),
                head: Some((HeadKind::Linear, head.to_vec())),
                relation: None,
                norm: None,
                train_classes: Vec::new(),
                class_ids: Vec::new(),
                skipped_episodes: 0,
            };
            let mut t = 0.0;
            for ep in &val_eps {
                t += maml_adapt_and_score(&probe, data, ep, cfg)?;
            }
            Some(t / val_eps.len() as f64)
        };
        metrics.push(EpochMetrics { epoch, train_loss: sum.0 / sum.1.max(1) as f64, val_balanced_accuracy: score, learning_rate: lr });
        keep_best(best, cfg.selection, enc, head, score);
        Ok(())
    };
    for (epoch, ep) in stream.iter(data, train, SplitId::Train)? {
        if last_epoch != Some(epoch) {
            if let Some(prev) = last_epoch {
                close(prev, &enc, &head, sums[prev], opt.learning_rate, &mut best)?;
            }
            last_epoch = Some(epoch);
            opt.start_epoch(epoch);
        }
        let xs = data.batch(&ep.support_indices())?;
        let xq = data.batch(&ep.query_indices())?;
        let params: Vec<Tensor> = enc.params.iter().chain(&head).cloned().collect();
        let outcome = maml_outer_grad(
            &enc.spec,
            &params,
            &enc.running,
            &xs,
            &ep.support_labels(),
            &xq,
            &ep.query_labels(),
            cfg.maml_inner_steps,
            cfg.maml_inner_lr,
        );
        let (loss, grads) = match outcome {
            Ok(v) => v,
            Err(Error::Numeric { op, detail }) => {
                log::warn!("maml episode {} skipped: inner loop diverged in `{op}` ({detail})", ep.id);
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut all = params;
        opt.step(&mut all, &grads)?;
        head = all.split_off(n_enc);
        enc.params = all;
        sums[epoch].0 += loss;
        sums[epoch].1 += 1;
    }
    if let Some(prev) = last_epoch {
        close(prev, &enc, &head, sums[prev], opt.learning_rate, &mut best)?;
    }
    let best = best.ok_or_else(|| Error::config("meta-training produced no episodes"))?;
    Ok((
        SourceModel {
            method: "maml".into(),
            config_hash: super::config_hash(&(cfg, "maml")),
            encoder: best.encoder,
            head: Some((HeadKind::Linear, best.extra)),
            relation: None,
            norm: None,
            train_classes: train.classes.clone(),
            class_ids: data.class_ids.clone(),
            skipped_episodes: skipped,
        },
        metrics,
    ))
}

/// Meta-test: a copy of the trunk plus a freshly initialized N-way head is
/// adapted on the support set (same steps and inner learning rate as in
/// training), then scored on the query set.
pub fn maml_adapt_and_score(source: &SourceModel, data: &Dataset, episode: &Episode, cfg: &TrainConfig) -> Result<f64> {
    let enc = &source.encoder;
    let ways = episode.ways();
    let seed = rng::derive_seed(cfg.seed, &[stream::HEAD_INIT, episode.id]);
    let head = HeadSpec::new(HeadKind::Linear, ways).init(enc.latent(), seed)?;
    let tape = Tape::new();
    let theta: Vec<Var> = enc.params.iter().chain(&head).map(|t| tape.param(t.clone())).collect();
    let xs = tape.constant(data.batch(&episode.support_indices())?);
    let xq = tape.constant(data.batch(&episode.query_indices())?);
    let ys = episode.support_labels();
    let n_enc = enc.params.len();
    let mut fast = theta;
    for _ in 0..cfg.maml_inner_steps {
        let (zs, _) = enc.spec.forward(&fast[..n_enc], &enc.running, &xs, true)?;
        let loss = linear_logits(&fast[n_enc], &fast[n_enc + 1], &zs)?.cross_entropy(&ys)?;
        let grads = tape.grad(&loss, &fast, false)?;
        fast = fast
            .iter()
            .zip(&grads)
            .map(|(f, g)| Ok(tape.param(f.value().zip(g.value(), |a, b| a - cfg.maml_inner_lr * b)?)))
            .collect::<Result<_>>()?;
    }
    let (zq, _) = enc.spec.forward(&fast[..n_enc], &enc.running, &xq, true)?;
    let logits = linear_logits(&fast[n_enc], &fast[n_enc + 1], &zq)?;
    let pred = argmax_rows(logits.value());
    balanced_accuracy_of(&episode.query_labels(), &pred, ways)
}
