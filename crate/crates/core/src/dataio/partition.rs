//! Class-disjoint partitioning by popularity, the stratified 9:1 split used by
//! monolithic training, and the imbalance ratio.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitId {
    Train,
    Val,
    Test,
}

impl SplitId {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitId::Train => "train",
            SplitId::Val => "val",
            SplitId::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitId::Train),
            "val" => Ok(SplitId::Val),
            "test" => Ok(SplitId::Test),
            other => Err(Error::config(format!("unknown split `{other}` (train|val|test)"))),
        }
    }
}

/// A set of classes and the dataset indices belonging to them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub classes: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Split {
    /// Every sample whose label is in `classes`.
    pub fn of_classes(data: &Dataset, classes: &[usize]) -> Split {
        let set: BTreeSet<usize> = classes.iter().copied().collect();
        Split {
            classes: set.iter().copied().collect(),
            indices: (0..data.len()).filter(|&i| set.contains(&data.label(i))).collect(),
        }
    }

    pub fn all(data: &Dataset) -> Split {
        Split::of_classes(data, &(0..data.num_classes()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl ClassPartition {
    pub fn split(&self, id: SplitId) -> &Split {
        match id {
            SplitId::Train => &self.train,
            SplitId::Val => &self.val,
            SplitId::Test => &self.test,
        }
    }

    /// Classes outside the training split (the "unpopular" pool).
    pub fn unpopular_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.val.classes.iter().chain(&self.test.classes).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Most popular `n_train` classes to train, the next `n_val` to validation and
/// the rest to test. Ties in popularity go to the lower class id first.
pub fn partition_by_popularity(data: &Dataset, n_train: usize, n_val: usize, n_test: usize) -> Result<ClassPartition> {
    let c = data.num_classes();
    if n_train + n_val + n_test != c {
        return Err(Error::config(format!(
            "partition counts {n_train}+{n_val}+{n_test} do not add up to {c} classes"
        )));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by_key(|&k| (std::cmp::Reverse(data.class_counts.get(&k).copied().unwrap_or(0)), k));
    let train = Split::of_classes(data, &order[..n_train]);
    let val = Split::of_classes(data, &order[n_train..n_train + n_val]);
    let test = Split::of_classes(data, &order[n_train + n_val..]);
    Ok(ClassPartition { train, val, test })
}

/// Per-class stratified split of `split` into (fit, validation), with
/// `ceil(n/10)` validation samples per class.
pub fn monolithic_split(data: &Dataset, split: &Split, seed: u64) -> Result<(Split, Split)> {
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (class, mut idx) in data.by_class(&split.indices) {
        if idx.len() < 2 {
            return Err(Error::data(format!("class {class} has {} sample(s); a 9:1 split needs at least 2", idx.len())));
        }
        idx.shuffle(&mut rng::rng_for(seed, &[stream::SPLIT, class as u64]));
        let n_val = idx.len().div_ceil(10);
        val.extend_from_slice(&idx[..n_val]);
        fit.extend_from_slice(&idx[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    Ok((
        Split { classes: split.classes.clone(), indices: fit },
        Split { classes: split.classes.clone(), indices: val },
    ))
}

/// Max class count over min class count.
pub fn imbalance_rho(counts: impl IntoIterator<Item = usize>) -> Result<f64> {
    let counts: Vec<usize> = counts.into_iter().collect();
    let max = counts.iter().copied().max().ok_or_else(|| Error::data("imbalance ratio of zero classes"))?;
    let min = counts.iter().copied().min().expect("non-empty");
    if min == 0 {
        return Err(Error::data("imbalance ratio with an empty class"));
    }
    Ok(max as f64 / min as f64)
}
