//! The method catalogue and the source model each method is scored with.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    distill, meta_train_maml, meta_train_protonet, meta_train_relationnet, train_contrastive, train_monolithic,
    ContrastiveOptions, EpochMetrics, SourceModel, TrainConfig,
};
use crate::dataio::{monolithic_split, ClassPartition, Dataset, SplitId};
use crate::error::{Error, Result};
use crate::nets::{EncoderSpec, HeadKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Monolithic,
    Baseline,
    BaselineClassemb,
    BaselineLr,
    BaselineNn,
    RfsDistillLr,
    RfsDistillNn,
    BaselineTl,
    BaselineClassembTl,
    Protonet,
    Relationnet,
    Maml,
    Simclr,
    Supcon,
    SimclrClassemb,
    SupconClassemb,
}

/// How a source model is produced. Several methods share one source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Linear,
    ClassEmbedding,
    Distilled,
    Protonet,
    Relationnet,
    Maml,
    Contrastive { supervised: bool, class_embedding: bool },
}

impl Method {
    pub const ALL: [Method; 16] = [
        Method::Monolithic,
        Method::Baseline,
        Method::BaselineClassemb,
        Method::BaselineLr,
        Method::BaselineNn,
        Method::RfsDistillLr,
        Method::RfsDistillNn,
        Method::BaselineTl,
        Method::BaselineClassembTl,
        Method::Protonet,
        Method::Relationnet,
        Method::Maml,
        Method::Simclr,
        Method::Supcon,
        Method::SimclrClassemb,
        Method::SupconClassemb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Monolithic => "monolithic",
            Method::Baseline => "baseline",
            Method::BaselineClassemb => "baseline_classemb",
            Method::BaselineLr => "baseline_lr",
            Method::BaselineNn => "baseline_nn",
            Method::RfsDistillLr => "rfs_distill_lr",
            Method::RfsDistillNn => "rfs_distill_nn",
            Method::BaselineTl => "baseline_tl",
            Method::BaselineClassembTl => "baseline_classemb_tl",
            Method::Protonet => "protonet",
            Method::Relationnet => "relationnet",
            Method::Maml => "maml",
            Method::Simclr => "simclr",
            Method::Supcon => "supcon",
            Method::SimclrClassemb => "simclr_classemb",
            Method::SupconClassemb => "supcon_classemb",
        }
    }

    pub fn source(self) -> SourceKind {
        match self {
            Method::Monolithic | Method::Baseline | Method::BaselineLr | Method::BaselineNn | Method::BaselineTl => {
                SourceKind::Linear
            }
            Method::BaselineClassemb | Method::BaselineClassembTl => SourceKind::ClassEmbedding,
            Method::RfsDistillLr | Method::RfsDistillNn => SourceKind::Distilled,
            Method::Protonet => SourceKind::Protonet,
            Method::Relationnet => SourceKind::Relationnet,
            Method::Maml => SourceKind::Maml,
            Method::Simclr => SourceKind::Contrastive { supervised: false, class_embedding: false },
            Method::Supcon => SourceKind::Contrastive { supervised: true, class_embedding: false },
            Method::SimclrClassemb => SourceKind::Contrastive { supervised: false, class_embedding: true },
            Method::SupconClassemb => SourceKind::Contrastive { supervised: true, class_embedding: true },
        }
    }

    /// Head fitted on target samples and whether it is trained as plain
    /// transfer. `None` for methods that do not use a frozen trunk.
    pub fn downstream_head(self, cfg: &TrainConfig) -> Option<(HeadKind, bool)> {
        Some(match self {
            Method::Monolithic | Method::Maml => return None,
            Method::Baseline => (HeadKind::Linear, false),
            Method::BaselineClassemb => (HeadKind::ClassEmbedding, false),
            Method::BaselineLr | Method::RfsDistillLr => (HeadKind::Logistic, false),
            Method::BaselineNn | Method::RfsDistillNn => (HeadKind::NearestNeighbor, false),
            Method::BaselineTl => (HeadKind::Linear, true),
            Method::BaselineClassembTl => (HeadKind::ClassEmbedding, true),
            Method::Protonet => (HeadKind::Prototype, false),
            Method::Relationnet => (HeadKind::Relation, false),
            Method::Simclr | Method::Supcon | Method::SimclrClassemb | Method::SupconClassemb => {
                (cfg.contrastive_eval_head, false)
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

/// Train the source model of `kind` on the partition's training classes.
///
/// Non-episodic sources fit on a 9:1 sample split of the training classes;
/// meta-learners draw validation episodes from the validation classes. A
/// distilled source uses `teacher` when given, or trains the linear source
/// first.
pub fn train_source(
    kind: SourceKind,
    data: &Dataset,
    partition: &ClassPartition,
    spec: EncoderSpec,
    cfg: &TrainConfig,
    teacher: Option<&SourceModel>,
) -> Result<(SourceModel, Vec<EpochMetrics>)> {
    let train = partition.split(SplitId::Train);
    if train.is_empty() {
        return Err(Error::data("the training split is empty"));
    }
    let val = partition.split(SplitId::Val);
    match kind {
        SourceKind::Protonet => meta_train_protonet(data, train, val, spec, cfg),
        SourceKind::Relationnet => meta_train_relationnet(data, train, val, spec, cfg),
        SourceKind::Maml => meta_train_maml(data, train, val, spec, cfg),
        _ => {
            let (fit, val) = monolithic_split(data, train, cfg.seed)?;
            match kind {
                SourceKind::Linear => train_monolithic(data, &fit, &val, spec, HeadKind::Linear, cfg),
                SourceKind::ClassEmbedding => train_monolithic(data, &fit, &val, spec, HeadKind::ClassEmbedding, cfg),
                SourceKind::Distilled => {
                    let owned;
                    let t = match teacher {
                        Some(t) => t,
                        None => {
                            owned = train_monolithic(data, &fit, &val, spec, HeadKind::Linear, cfg)?.0;
                            &owned
                        }
                    };
                    distill(t, data, &fit, &val, cfg)
                }
                SourceKind::Contrastive { supervised, class_embedding } => {
                    train_contrastive(data, &fit, &val, spec, ContrastiveOptions { supervised, class_embedding }, cfg)
                }
                _ => unreachable!("episodic sources handled above"),
            }
        }
    }
}
