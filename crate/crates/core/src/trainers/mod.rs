//! Training and fine-tuning procedures for every method.
//!
//! All trainers are sequential and deterministic given `TrainConfig::seed`.
//! They expect datasets that are already normalized.

mod contrastive;
mod meta;
mod methods;
mod monolithic;
mod transfer;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentPolicy;
use crate::dataio::NormStats;
use crate::error::{Error, Result};
use crate::nets::{Encoder, HeadKind};
use crate::numerics::{LrSchedule, OptimizerKind, OptimizerState, Tape, Tensor, Var};

pub use contrastive::{simclr_loss, supcon_loss, train_contrastive, ContrastiveOptions};
pub use meta::{maml_adapt_and_score, maml_outer_grad, meta_train_maml, meta_train_protonet, meta_train_relationnet};
pub use methods::{train_source, Method, SourceKind};
pub use monolithic::{distill, kd_loss, soft_kl, train_monolithic};
pub use transfer::{
    evaluate_episode, finetune_episode, fit_gradient_head, score_task, transfer_plain, EmbeddingCache, TargetTask,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

/// Which parameters a trainer publishes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Epoch with the best validation balanced accuracy.
    BestValidation,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerName,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub selection: Selection,

    /// Episodic training geometry.
    pub episodes_per_epoch: usize,
    pub train_ways: usize,
    pub train_shots: usize,
    pub train_queries: usize,
    /// Meta-validation episodes per epoch.
    pub val_episodes: usize,
    pub protonet_halving_epochs: usize,

    pub maml_inner_steps: usize,
    pub maml_inner_lr: f64,
    pub maml_outer_lr: f64,

    pub temperature: f64,
    pub augment: AugmentPolicy,

    pub distill_alpha: f64,
    pub distill_temperature: f64,

    /// Full-batch steps for gradient heads fitted on a support set.
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    /// Mini-batch epochs for plain transfer heads.
    pub transfer_epochs: usize,
    /// Head used to score contrastive encoders downstream.
    pub contrastive_eval_head: HeadKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerName::Adam,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            selection: Selection::BestValidation,
            episodes_per_epoch: 100,
            train_ways: 4,
            train_shots: 5,
            train_queries: 15,
            val_episodes: 100,
            protonet_halving_epochs: 10,
            maml_inner_steps: 5,
            maml_inner_lr: 0.01,
            maml_outer_lr: 1e-4,
            temperature: 0.1,
            augment: AugmentPolicy::default(),
            distill_alpha: 0.5,
            distill_temperature: 4.0,
            finetune_steps: 100,
            finetune_lr: 0.01,
            transfer_epochs: 100,
            contrastive_eval_head: HeadKind::NearestNeighbor,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.distill_temperature >= 1.0) {
            return bad("distill_temperature must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.distill_alpha) {
            return bad("distill_alpha must lie in [0,1]");
        }
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("maml_outer_lr", self.maml_outer_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.maml_inner_lr >= 0.0) {
            return bad("maml_inner_lr must be non-negative");
        }
        if self.train_ways < 2 || self.train_shots == 0 || self.train_queries == 0 {
            return bad("episodes need at least 2 ways, 1 shot and 1 query");
        }
        self.augment.validate()
    }

    fn optimizer(&self, lr: f64, schedule: LrSchedule) -> Result<OptimizerState> {
        let kind = match self.optimizer {
            OptimizerName::Adam => OptimizerKind::adam(),
            OptimizerName::Sgd => OptimizerKind::Sgd,
        };
        OptimizerState::new(kind, lr, schedule)
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// A trained trunk plus whatever head state its method needs downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub method: String,
    pub config_hash: String,
    pub encoder: Encoder,
    /// Source classifier `(kind, params)` over the training classes.
    pub head: Option<(HeadKind, Vec<Tensor>)>,
    /// Learned relation module (RelationNet only).
    pub relation: Option<Vec<Tensor>>,
    pub norm: Option<NormStats>,
    /// Dataset labels of the training classes, in head column order.
    pub train_classes: Vec<usize>,
    /// Original class ids of the whole dataset.
    pub class_ids: Vec<i64>,
    /// Episodes skipped because the inner loop diverged (MAML).
    pub skipped_episodes: usize,
}

impl SourceModel {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::nets::write_checkpoint(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::nets::read_checkpoint(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_accuracy: Option<f64>,
    pub learning_rate: f64,
}

/// One optimizer update of `encoder` together with `extra` parameters.
///
/// `loss_fn` receives the training-mode embeddings of `x` and the extra
/// parameters as tape variables. Running batch-norm statistics are updated.
pub(crate) fn train_step<F>(
    encoder: &mut Encoder,
    extra: &mut Vec<Tensor>,
    opt: &mut OptimizerState,
    x: &Tensor,
    loss_fn: F,
) -> Result<f64>
where
    F: FnOnce(&Var, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let p: Vec<Var> = encoder.params.iter().map(|t| tape.param(t.clone())).collect();
    let e: Vec<Var> = extra.iter().map(|t| tape.param(t.clone())).collect();
    let xv = tape.constant(x.clone());
    let (z, stats) = encoder.spec.forward(&p, &encoder.running, &xv, true)?;
    let loss = loss_fn(&z, &e)?;
    let all: Vec<Var> = p.iter().chain(&e).cloned().collect();
    let grads: Vec<Tensor> = tape.grad(&loss, &all, false)?.iter().map(|g| g.value().clone()).collect();
    let n_enc = encoder.params.len();
    let mut params: Vec<Tensor> = std::mem::take(&mut encoder.params);
    params.append(extra);
    let res = opt.step(&mut params, &grads);
    *extra = params.split_off(n_enc);
    encoder.params = params;
    res?;
    encoder.update_running(&stats);
    Ok(loss.item())
}

/// Dense local labels for `labels` under `classes` (sorted dataset labels).
pub(crate) fn local_labels(labels: &[usize], classes: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes.binary_search(l).map_err(|_| Error::contract(format!("label {l} is not among the split's classes")))
        })
        .collect()
}
