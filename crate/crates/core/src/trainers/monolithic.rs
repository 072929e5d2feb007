//! Mini-batch training over all training classes, and self-distillation.

use super::{local_labels, train_step, EpochMetrics, Selection, SourceModel, TrainConfig};
use crate::bench::balanced_accuracy_of;
use crate::dataio::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nets::{argmax_rows, head_logits, infer, shuffled, Encoder, EncoderSpec, HeadKind, HeadSpec};
use crate::numerics::{Tensor, Var};
use crate::rng::{self, stream};

/// Balanced accuracy of a source classifier on `indices`.
pub(crate) fn classifier_accuracy(
    enc: &Encoder,
    kind: HeadKind,
    head: &[Tensor],
    data: &Dataset,
    indices: &[usize],
    classes: &[usize],
) -> Result<f64> {
    let z = enc.embed(&data.batch(indices)?)?;
    let logits = infer(head, &[&z], |p, x| head_logits(kind, p, &x[0]))?;
    let truth = local_labels(&data.labels(indices), classes)?;
    balanced_accuracy_of(&truth, &argmax_rows(&logits), classes.len())
}

pub(crate) struct Candidate {
    pub encoder: Encoder,
    pub extra: Vec<Tensor>,
    pub score: Option<f64>,
}

/// Keeps the parameters of the best-scoring epoch (or the last one).
pub(crate) fn keep_best(best: &mut Option<Candidate>, selection: Selection, enc: &Encoder, extra: &[Tensor], score: Option<f64>) {
    let better = match (selection, best.as_ref(), score) {
        (Selection::Last, _, _) | (_, None, _) => true,
        (Selection::BestValidation, Some(b), Some(s)) => b.score.is_none_or(|bs| s > bs),
        (Selection::BestValidation, Some(_), None) => true,
    };
    if better {
        *best = Some(Candidate { encoder: enc.clone(), extra: extra.to_vec(), score });
    }
}

pub(crate) fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let order = shuffled(n, &mut rng::rng_for(seed, &[stream::SHUFFLE, epoch as u64]));
    order
        .chunks(batch)
        // A lone trailing sample gives batch norm nothing to normalize against.
        .filter(|c| c.len() > 1 || n == 1)
        .map(|c| c.to_vec())
        .collect()
}

/// Cross-entropy training of `spec` plus a `head` classifier over the classes
/// of `fit`; after every epoch the balanced accuracy on `val` is recorded.
pub fn train_monolithic(
    data: &Dataset,
    fit: &Split,
    val: &Split,
    spec: EncoderSpec,
    head: HeadKind,
    cfg: &TrainConfig,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if !matches!(head, HeadKind::Linear | HeadKind::ClassEmbedding) {
        return Err(Error::config(format!("monolithic training needs a linear or class-embedding head, not {head:?}")));
    }
    if fit.is_empty() {
        return Err(Error::data("monolithic training on an empty split"));
    }
    let classes = fit.classes.clone();
    let mut enc = Encoder::init(spec, cfg.seed)?;
    let mut hp = HeadSpec::new(head, classes.len()).init(enc.latent(), cfg.seed)?;
    let mut opt = cfg.optimizer(cfg.learning_rate, cfg.lr_schedule)?;
    let labels = local_labels(&data.labels(&fit.indices), &classes)?;
    let mut best = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.start_epoch(epoch);
        let mut total = 0.0;
        let mut count = 0;
        for b in batches(fit.len(), cfg.batch_size, cfg.seed, epoch) {
            let idx: Vec<usize> = b.iter().map(|&k| fit.indices[k]).collect();
            let y: Vec<usize> = b.iter().map(|&k| labels[k]).collect();
            let x = data.batch(&idx)?;
            total += train_step(&mut enc, &mut hp, &mut opt, &x, |z, e| head_logits(head, e, z)?.cross_entropy(&y))?;
            count += 1;
        }
        let score = if val.is_empty() { None } else { Some(classifier_accuracy(&enc, head, &hp, data, &val.indices, &classes)?) };
        log::debug!("monolithic epoch {epoch}: loss {:.4} val {:?}", total / count.max(1) as f64, score);
        metrics.push(EpochMetrics {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_balanced_accuracy: score,
            learning_rate: opt.learning_rate,
        });
        keep_best(&mut best, cfg.selection, &enc, &hp, score);
    }
    let best = best.expect("at least one epoch");
    let model = SourceModel {
        method: format!("monolithic_{}", head_name(head)),
        config_hash: super::config_hash(&(cfg, "monolithic", head)),
        encoder: best.encoder,
        head: Some((head, best.extra)),
        relation: None,
        norm: None,
        train_classes: classes,
        class_ids: data.class_ids.clone(),
        skipped_episodes: 0,
    };
    Ok((model, metrics))
}

fn head_name(h: HeadKind) -> &'static str {
    match h {
        HeadKind::ClassEmbedding => "class_embedding",
        _ => "linear",
    }
}

/// `sum_k p_k (ln p_k - ln q_k)` averaged over rows, with `p = softmax(teacher/T)`
/// and `q = softmax(student/T)`.
pub fn soft_kl(teacher: &Tensor, student: &Var, temperature: f64) -> Result<Var> {
    if teacher.shape() != student.shape() || teacher.shape().len() != 2 {
        return Err(Error::contract("soft_kl expects matching [n, c] logits"));
    }
    let n = teacher.shape()[0] as f64;
    let tape = student.tape();
    let logp = crate::nets::infer(&[], &[teacher], |_, x| x[0].scale(1.0 / temperature)?.log_softmax())?;
    let p = logp.map(f64::exp);
    let logq = student.scale(1.0 / temperature)?.log_softmax()?;
    let diff = tape.constant(logp).sub(&logq)?;
    tape.constant(p).mul(&diff)?.sum()?.scale(1.0 / n)
}

/// `alpha * CE(labels, student) + (1 - alpha) * T^2 * KL(teacher_T || student_T)`.
pub fn kd_loss(student: &Var, teacher: &Tensor, labels: &[usize], alpha: f64, temperature: f64) -> Result<Var> {
    let ce = student.cross_entropy(labels)?.scale(alpha)?;
    if alpha == 1.0 {
        return Ok(ce);
    }
    let kl = soft_kl(teacher, student, temperature)?.scale((1.0 - alpha) * temperature * temperature)?;
    ce.add(&kl)
}

/// Train a freshly initialized student of the same architecture against the
/// frozen `teacher`'s softened predictions and the true labels.
pub fn distill(
    teacher: &SourceModel,
    data: &Dataset,
    fit: &Split,
    val: &Split,
    cfg: &TrainConfig,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let (t_kind, t_head) = teacher.head.clone().ok_or_else(|| Error::config("distillation needs a teacher with a classifier"))?;
    let classes = teacher.train_classes.clone();
    if fit.classes != classes {
        return Err(Error::config("distillation split must cover the teacher's training classes"));
    }
    let student_seed = rng::derive_seed(cfg.seed, &[stream::INIT, 1]);
    let mut enc = Encoder::init(teacher.encoder.spec.clone(), student_seed)?;
    let mut hp = HeadSpec::new(t_kind, classes.len()).init(enc.latent(), student_seed)?;
    let mut opt = cfg.optimizer(cfg.learning_rate, cfg.lr_schedule)?;
    let labels = local_labels(&data.labels(&fit.indices), &classes)?;
    let (alpha, temp) = (cfg.distill_alpha, cfg.distill_temperature);
    let mut best = None;
    let mut metrics = Vec::new();
    for epoch in 0..cfg.epochs {
        opt.start_epoch(epoch);
        let (mut total, mut count) = (0.0, 0);
        for b in batches(fit.len(), cfg.batch_size, student_seed, epoch) {
            let idx: Vec<usize> = b.iter().map(|&k| fit.indices[k]).collect();
            let y: Vec<usize> = b.iter().map(|&k| labels[k]).collect();
            let x = data.batch(&idx)?;
            let tz = teacher.encoder.embed(&x)?;
            let tlogits = infer(&t_head, &[&tz], |p, xs| head_logits(t_kind, p, &xs[0]))?;
            total += train_step(&mut enc, &mut hp, &mut opt, &x, |z, e| {
                kd_loss(&head_logits(t_kind, e, z)?, &tlogits, &y, alpha, temp)
            })?;
            count += 1;
        }
        let score = if val.is_empty() { None } else { Some(classifier_accuracy(&enc, t_kind, &hp, data, &val.indices, &classes)?) };
        metrics.push(EpochMetrics {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_balanced_accuracy: score,
            learning_rate: opt.learning_rate,
        });
        keep_best(&mut best, cfg.selection, &enc, &hp, score);
    }
    let best = best.expect("at least one epoch");
    Ok((
        SourceModel {
            method: "distill".into(),
            config_hash: super::config_hash(&(cfg, "distill", &teacher.config_hash)),
            encoder: best.encoder,
            head: Some((t_kind, best.extra)),
            relation: None,
            norm: teacher.norm.clone(),
            train_classes: classes,
            class_ids: teacher.class_ids.clone(),
            skipped_episodes: 0,
        },
        metrics,
    ))
}
