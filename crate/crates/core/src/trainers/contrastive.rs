//! SimCLR / SupCon pre-training on pairs of augmented views.

use serde::{Deserialize, Serialize};

use super::monolithic::{batches, keep_best};
use super::{local_labels, train_step, EpochMetrics, SourceModel, TrainConfig};
use crate::augment::random_view;
use crate::bench::balanced_accuracy_of;
use crate::dataio::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nets::{argmax_rows, head_logits, infer, projection, proto_logits, prototypes, Encoder, EncoderSpec, HeadKind, HeadSpec};
use crate::numerics::{Tensor, Var};
use crate::rng::{self, stream};

/// Large negative logit that removes an entry from a softmax.
const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveOptions {
    /// SupCon when set, SimCLR otherwise.
    pub supervised: bool,
    /// Add a cosine-classifier cross-entropy term over the training classes.
    pub class_embedding: bool,
}

/// Mean over contributing anchors of `-(1/|P(i)|) sum_{p in P(i)} log softmax_i(p)`,
/// where the softmax of anchor `i` runs over all other views.
fn positive_log_likelihood(z: &Var, labels: &[usize], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let shape = z.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::contract(format!("contrastive loss expects [views, d] with one label per view, got {shape:?}")));
    }
    let n = labels.len();
    let tape = z.tape();
    let zn = z.l2_normalize()?;
    let sim = zn.matmul(&zn.t()?)?.scale(1.0 / tau)?;
    let mut mask = Tensor::zeros(&[n, n]);
    let mut weights = Tensor::zeros(&[n, n]);
    let mut anchors = 0usize;
    for i in 0..n {
        mask.data_mut()[i * n + i] = MASKED;
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        for p in &positives {
            weights.data_mut()[i * n + p] = 1.0 / positives.len() as f64;
        }
    }
    if anchors == 0 {
        return Err(Error::contract("contrastive batch has no anchor with a positive"));
    }
    let logp = sim.add(&tape.constant(mask))?.log_softmax()?;
    tape.constant(weights).mul(&logp)?.sum()?.scale(-1.0 / anchors as f64)
}

/// InfoNCE over `2B` views laid out as `[first views; second views]`, so the
/// positive of view `i` is view `(i + B) mod 2B`.
pub fn simclr_loss(z: &Var, tau: f64) -> Result<Var> {
    let n = z.shape().first().copied().unwrap_or(0);
    if n < 2 || n % 2 != 0 {
        return Err(Error::contract(format!("simclr_loss needs an even number of views, got {n}")));
    }
    let b = n / 2;
    let pairs: Vec<usize> = (0..n).map(|i| i % b).collect();
    positive_log_likelihood(z, &pairs, tau)
}

/// Supervised contrastive loss; `labels` has one entry per view. Anchors
/// without another view of their class are skipped.
pub fn supcon_loss(z: &Var, labels: &[usize], tau: f64) -> Result<Var> {
    positive_log_likelihood(z, labels, tau)
}

fn nearest_centroid_accuracy(enc: &Encoder, data: &Dataset, fit: &Split, val: &Split, classes: &[usize]) -> Result<f64> {
    let zf = enc.embed(&data.batch(&fit.indices)?)?;
    let protos = prototypes(&zf, &local_labels(&data.labels(&fit.indices), classes)?, classes.len())?;
    let zv = enc.embed(&data.batch(&val.indices)?)?;
    let pred = argmax_rows(&infer(&[], &[&protos, &zv], |_, x| proto_logits(&x[0], &x[1]))?);
    balanced_accuracy_of(&local_labels(&data.labels(&val.indices), classes)?, &pred, classes.len())
}

/// Contrastive pre-training of `spec` plus a projection head over the classes
/// of `fit`. Checkpoints are ranked by nearest-centroid balanced accuracy on
/// `val`. The published model carries the encoder only.
pub fn train_contrastive(
    data: &Dataset,
    fit: &Split,
    val: &Split,
    spec: EncoderSpec,
    opts: ContrastiveOptions,
    cfg: &TrainConfig,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if fit.len() < 2 {
        return Err(Error::data("contrastive training needs at least two samples"));
    }
    let classes = fit.classes.clone();
    let mut enc = Encoder::init(spec, cfg.seed)?;
    let d = enc.latent();
    let mut extra = HeadSpec::new(HeadKind::Projection, 0).init(d, cfg.seed)?;
    let n_proj = extra.len();
    if opts.class_embedding {
        let seed = rng::derive_seed(cfg.seed, &[stream::HEAD_INIT, 1]);
        extra.extend(HeadSpec::new(HeadKind::ClassEmbedding, classes.len()).init(d, seed)?);
    }
    let mut opt = cfg.optimizer(cfg.learning_rate, cfg.lr_schedule)?;
    let labels = local_labels(&data.labels(&fit.indices), &classes)?;
    let direction = data.profile.direction_channel();
    let mut best = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.start_epoch(epoch);
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, b) in batches(fit.len(), cfg.batch_size, cfg.seed, epoch).into_iter().enumerate() {
            let mut first = Vec::with_capacity(b.len());
            let mut second = Vec::with_capacity(b.len());
            for (i, &k) in b.iter().enumerate() {
                let mut r = rng::rng_for(cfg.seed, &[stream::AUGMENT, epoch as u64, bi as u64, i as u64]);
                let x = data.features(fit.indices[k]);
                first.push(random_view(x, &cfg.augment, direction, &mut r));
                second.push(random_view(x, &cfg.augment, direction, &mut r));
            }
            let views: Vec<&Tensor> = first.iter().chain(&second).collect();
            let x = Tensor::stack(&views)?;
            let y: Vec<usize> = b.iter().chain(&b).map(|&k| labels[k]).collect();
            let loss = train_step(&mut enc, &mut extra, &mut opt, &x, |z, e| {
                let p = projection(&e[..n_proj], z)?;
                let mut loss = if opts.supervised { supcon_loss(&p, &y, cfg.temperature)? } else { simclr_loss(&p, cfg.temperature)? };
                if opts.class_embedding {
                    loss = loss.add(&head_logits(HeadKind::ClassEmbedding, &e[n_proj..], z)?.cross_entropy(&y)?)?;
                }
                Ok(loss)
            })?;
            if !loss.is_finite() {
                return Err(Error::Numeric { op: "contrastive", detail: format!("loss {loss} at epoch {epoch}") });
            }
            total += loss;
            count += 1;
        }
        let score = if val.is_empty() { None } else { Some(nearest_centroid_accuracy(&enc, data, fit, val, &classes)?) };
        metrics.push(EpochMetrics {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_balanced_accuracy: score,
            learning_rate: opt.learning_rate,
        });
        keep_best(&mut best, cfg.selection, &enc, &[], score);
    }
    let best = best.expect("at least one epoch");
    let name = match (opts.supervised, opts.class_embedding) {
        (false, false) => "simclr",
        (true, false) => "supcon",
        (false, true) => "simclr_classemb",
        (true, true) => "supcon_classemb",
    };
    Ok((
        SourceModel {
            method: name.into(),
            config_hash: super::config_hash(&(cfg, name)),
            encoder: best.encoder,
            head: None,
            relation: None,
            norm: None,
            train_classes: classes,
            class_ids: data.class_ids.clone(),
            skipped_episodes: 0,
        },
        metrics,
    ))
}
