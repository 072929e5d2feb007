//! Flow samples, datasets, on-disk format, partitioning, normalization and the
//! synthetic generator.

mod format;
mod norm;
mod partition;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use format::{load_dataset, meta_path, read_meta, save_dataset, DatasetMeta};
pub use norm::{normalize_apply, normalize_fit, NormStats};
pub use partition::{imbalance_rho, monolithic_split, partition_by_popularity, ClassPartition, Split, SplitId};
pub use synth::{synth_generate, SynthConfig};

/// Per-packet feature names, in the order packets store them.
pub const PACKET_SIZE: &str = "packet_size";
pub const DIRECTION: &str = "direction";
pub const INTER_ARRIVAL: &str = "inter_arrival_time";
pub const WINDOW_SIZE: &str = "tcp_window_size";

/// Shape of one flow sample: the first `packets` packets, `features` values each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub packets: usize,
    pub features: usize,
    pub feature_names: Vec<String>,
}

impl Profile {
    /// Generic profile; feature names follow size, direction, IAT, window and
    /// fall back to `f<j>` beyond that.
    pub fn new(packets: usize, features: usize) -> Result<Self> {
        if packets == 0 || features == 0 {
            return Err(Error::config("profile needs at least one packet and one feature"));
        }
        let known = [PACKET_SIZE, DIRECTION, INTER_ARRIVAL, WINDOW_SIZE];
        let feature_names = (0..features)
            .map(|j| known.get(j).map(|s| s.to_string()).unwrap_or_else(|| format!("f{j}")))
            .collect();
        Ok(Profile { packets, features, feature_names })
    }

    /// 10 packets x (size, direction, inter-arrival time, TCP window).
    pub fn mirage_like() -> Self {
        Self::new(10, 4).expect("static profile")
    }

    /// 20 packets x (size, direction).
    pub fn appclassnet_like() -> Self {
        Self::new(20, 2).expect("static profile")
    }

    pub fn flat_len(&self) -> usize {
        self.packets * self.features
    }

    pub fn direction_channel(&self) -> Option<usize> {
        self.feature_names.iter().position(|n| n == DIRECTION)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    /// `[packets, features]`, tail zero-padded for short flows.
    pub features: Tensor,
    pub label: usize,
    pub flow_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub profile: Profile,
    pub samples: Vec<FlowSample>,
    pub class_counts: BTreeMap<usize, usize>,
    /// Original class id for each dense label.
    pub class_ids: Vec<i64>,
}

impl Dataset {
    /// Validate shapes and dense labels, computing the class counts.
    pub fn new(profile: Profile, samples: Vec<FlowSample>, class_ids: Vec<i64>) -> Result<Self> {
        let shape = [profile.packets, profile.features];
        let mut class_counts = BTreeMap::new();
        for s in &samples {
            if s.features.shape() != shape {
                return Err(Error::data(format!(
                    "flow {} has shape {:?}, profile expects {shape:?}",
                    s.flow_id,
                    s.features.shape()
                )));
            }
            if s.label >= class_ids.len() {
                return Err(Error::data(format!("flow {} has label {} outside 0..{}", s.flow_id, s.label, class_ids.len())));
            }
            *class_counts.entry(s.label).or_insert(0) += 1;
        }
        Ok(Dataset { profile, samples, class_counts, class_ids })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn label(&self, idx: usize) -> usize {
        self.samples[idx].label
    }

    pub fn features(&self, idx: usize) -> &Tensor {
        &self.samples[idx].features
    }

    /// Sample indices grouped by class, in ascending index order.
    pub fn by_class(&self, indices: &[usize]) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in indices {
            map.entry(self.samples[i].label).or_default().push(i);
        }
        map
    }

    /// Stack the samples at `indices` into `[n, packets, features]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].features).collect();
        Tensor::stack(&items)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    /// Flattened packet-major feature rows, as fed to tree models.
    pub fn flat_rows(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.samples[i].features.data().to_vec()).collect()
    }

    /// A copy with every sample normalized by `stats`.
    pub fn normalized(&self, stats: &NormStats) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(FlowSample { features: normalize_apply(stats, &s.features)?, label: s.label, flow_id: s.flow_id.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { profile: self.profile.clone(), samples, class_counts: self.class_counts.clone(), class_ids: self.class_ids.clone() })
    }

    pub fn rho(&self) -> Result<f64> {
        imbalance_rho(self.class_counts.values().copied())
    }
}
