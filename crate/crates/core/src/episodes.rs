//! Class-balanced (N-way, S-shot, Q-query) episodes.
//!
//! Episodes refer to samples by their dataset index. The random stream for an
//! episode is addressed by `(seed, domain, epoch, index)`, so the same test
//! episodes come back for every method evaluated under one seed.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Split, SplitId};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Position of the episode in its stream or batch.
    pub id: u64,
    pub split: SplitId,
    /// `classes[local]` is the dataset label mapped to local label `local`.
    pub classes: Vec<usize>,
    /// `(dataset index, local label)`, S per way, grouped by way.
    pub support: Vec<(usize, usize)>,
    /// `(dataset index, local label)`, Q per way, grouped by way.
    pub query: Vec<(usize, usize)>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.classes.len()
    }

    pub fn shots(&self) -> usize {
        self.support.len() / self.ways().max(1)
    }

    pub fn queries(&self) -> usize {
        self.query.len() / self.ways().max(1)
    }

    pub fn support_indices(&self) -> Vec<usize> {
        self.support.iter().map(|p| p.0).collect()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|p| p.1).collect()
    }

    pub fn query_indices(&self) -> Vec<usize> {
        self.query.iter().map(|p| p.0).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|p| p.1).collect()
    }

    pub fn local_label(&self, global: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == global)
    }
}

fn check_split(data: &Dataset, split: &Split, ways: usize, need: usize) -> Result<BTreeMap<usize, Vec<usize>>> {
    if ways == 0 {
        return Err(Error::Episode("an episode needs at least one way".into()));
    }
    let by_class = data.by_class(&split.indices);
    let mut pool: BTreeMap<usize, Vec<usize>> = split.classes.iter().map(|&c| (c, Vec::new())).collect();
    for (c, idx) in by_class {
        pool.insert(c, idx);
    }
    if pool.len() < ways {
        return Err(Error::Episode(format!("{ways}-way episode requested from a split with {} classes", pool.len())));
    }
    for (c, idx) in &pool {
        if idx.len() < need {
            return Err(Error::Episode(format!(
                "class {c} has {} samples, an episode needs {need} per class",
                idx.len()
            )));
        }
    }
    Ok(pool)
}

fn draw(pool: &BTreeMap<usize, Vec<usize>>, id: u64, split: SplitId, n: usize, s: usize, q: usize, rng: &mut Rng) -> Episode {
    let classes_all: Vec<usize> = pool.keys().copied().collect();
    let mut chosen: Vec<usize> = index::sample(rng, classes_all.len(), n).into_iter().map(|i| classes_all[i]).collect();
    chosen.sort_unstable();
    let mut support = Vec::with_capacity(n * s);
    let mut query = Vec::with_capacity(n * q);
    for (local, c) in chosen.iter().enumerate() {
        let members = &pool[c];
        let picks = index::sample(rng, members.len(), s + q).into_vec();
        support.extend(picks[..s].iter().map(|&k| (members[k], local)));
        query.extend(picks[s..].iter().map(|&k| (members[k], local)));
    }
    Episode { id, split, classes: chosen, support, query }
}

/// One episode: N classes without replacement, then S+Q distinct samples per
/// class (first S to the support set).
///
/// Every class of the split must hold at least S+Q samples.
pub fn sample_episode(
    data: &Dataset,
    split: &Split,
    split_id: SplitId,
    (ways, shots, queries): (usize, usize, usize),
    rng: &mut Rng,
) -> Result<Episode> {
    let pool = check_split(data, split, ways, shots + queries)?;
    Ok(draw(&pool, 0, split_id, ways, shots, queries, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStream {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub seed: u64,
}

impl EpisodeStream {
    pub fn len(&self) -> usize {
        self.epochs * self.episodes_per_epoch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Episodes in order, epoch-major. Validates the split once up front.
    pub fn iter<'a>(
        &'a self,
        data: &'a Dataset,
        split: &'a Split,
        split_id: SplitId,
    ) -> Result<impl Iterator<Item = (usize, Episode)> + 'a> {
        let pool = if self.is_empty() {
            BTreeMap::new()
        } else {
            check_split(data, split, self.ways, self.shots + self.queries)?
        };
        let tag = domain(split_id);
        Ok((0..self.epochs).flat_map(move |epoch| (0..self.episodes_per_epoch).map(move |i| (epoch, i))).map(
            move |(epoch, i)| {
                let mut rng = rng::rng_for(self.seed, &[tag, epoch as u64, i as u64]);
                let id = (epoch * self.episodes_per_epoch + i) as u64;
                (epoch, draw(&pool, id, split_id, self.ways, self.shots, self.queries, &mut rng))
            },
        ))
    }
}

fn domain(split: SplitId) -> u64 {
    match split {
        SplitId::Train => stream::EPISODE_TRAIN,
        SplitId::Val => stream::EPISODE_VAL,
        SplitId::Test => stream::EPISODE_TEST,
    }
}

/// `count` independent evaluation episodes; episode `i` depends only on
/// `(seed, split, i)` and the episode geometry.
pub fn test_episode_batch(
    data: &Dataset,
    split: &Split,
    split_id: SplitId,
    (ways, shots, queries): (usize, usize, usize),
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let pool = check_split(data, split, ways, shots + queries)?;
    let tag = domain(split_id);
    Ok((0..count)
        .map(|i| {
            let mut rng = rng::rng_for(seed, &[tag, 0, i as u64]);
            draw(&pool, i as u64, split_id, ways, shots, queries, &mut rng)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{FlowSample, Profile};
    use crate::numerics::Tensor;

    fn data(counts: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for k in 0..n {
                samples.push(FlowSample { features: Tensor::zeros(&[1, 1]), label: c, flow_id: format!("{c}/{k}") });
            }
        }
        Dataset::new(Profile::new(1, 1).unwrap(), samples, (0..counts.len() as i64).collect()).unwrap()
    }

    #[test]
    fn sizes_and_boundary() {
        let d = data(&[3, 3, 3]);
        let split = Split::all(&d);
        let e = sample_episode(&d, &split, SplitId::Test, (2, 1, 2), &mut rng::rng_for(0, &[])).unwrap();
        assert_eq!((e.support.len(), e.query.len()), (2, 4));
        let mut all: Vec<usize> = e.support_indices().into_iter().chain(e.query_indices()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6);
        let err = sample_episode(&d, &split, SplitId::Test, (2, 2, 2), &mut rng::rng_for(0, &[])).unwrap_err();
        assert!(matches!(err, Error::Episode(ref m) if m.contains("class 0")));
    }

    #[test]
    fn streams_are_sized_and_repeatable() {
        let d = data(&[5, 5, 5, 5]);
        let split = Split::all(&d);
        let cfg = EpisodeStream { epochs: 3, episodes_per_epoch: 4, ways: 2, shots: 2, queries: 1, seed: 11 };
        let a: Vec<_> = cfg.iter(&d, &split, SplitId::Train).unwrap().collect();
        let b: Vec<_> = cfg.iter(&d, &split, SplitId::Train).unwrap().collect();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        assert_eq!(a[11].0, 2);
        let empty = EpisodeStream { epochs: 0, ..cfg };
        assert_eq!(empty.iter(&d, &split, SplitId::Train).unwrap().count(), 0);
    }

    #[test]
    fn full_way_batches_use_every_class() {
        let d = data(&[4, 4, 4]);
        let split = Split::all(&d);
        let eps = test_episode_batch(&d, &split, SplitId::Test, (3, 1, 1), 20, 2).unwrap();
        assert!(eps.iter().all(|e| e.classes == vec![0, 1, 2]));
        assert!(test_episode_batch(&d, &split, SplitId::Test, (3, 1, 1), 0, 2).unwrap().is_empty());
    }
}
