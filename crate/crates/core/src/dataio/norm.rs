//! Per-channel standardization fitted on the training split.
//!
//! A packet row whose entries are all zero is padding: it is excluded from the
//! statistics and stays all-zero after the transform. Applying the transform
//! twice is not the identity of applying it once.

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance channels get 1.
    pub std: Vec<f64>,
}

fn is_padding(row: &[f64]) -> bool {
    row.iter().all(|&v| v == 0.0)
}

pub fn normalize_fit(data: &Dataset, train: &Split) -> Result<NormStats> {
    if train.len() < 2 {
        return Err(Error::data("normalization needs at least two training samples"));
    }
    let f = data.profile.features;
    let mut sum = vec![0.0; f];
    let mut n = 0usize;
    for &i in &train.indices {
        for row in data.features(i).data().chunks(f).filter(|r| !is_padding(r)) {
            n += 1;
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    if n == 0 {
        return Ok(NormStats { mean: vec![0.0; f], std: vec![1.0; f] });
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; f];
    for &i in &train.indices {
        for row in data.features(i).data().chunks(f).filter(|r| !is_padding(r)) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

pub fn normalize_apply(stats: &NormStats, sample: &Tensor) -> Result<Tensor> {
    let f = stats.mean.len();
    if sample.shape().len() != 2 || sample.shape()[1] != f {
        return Err(Error::contract(format!("sample {:?} does not have {f} feature channels", sample.shape())));
    }
    let mut out = sample.data().to_vec();
    for row in out.chunks_mut(f) {
        if is_padding(row) {
            continue;
        }
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    Tensor::new(sample.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{FlowSample, Profile};

    fn data(rows: &[[f64; 2]]) -> Dataset {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, r)| FlowSample {
                features: Tensor::new(vec![1, 2], r.to_vec()).unwrap(),
                label: 0,
                flow_id: i.to_string(),
            })
            .collect();
        Dataset::new(Profile::new(1, 2).unwrap(), samples, vec![0]).unwrap()
    }

    #[test]
    fn hand_computed_stats() {
        let d = data(&[[1.0, 5.0], [3.0, 5.0]]);
        let s = normalize_fit(&d, &Split::all(&d)).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let out = normalize_apply(&s, d.features(1)).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
    }

    #[test]
    fn padding_is_excluded_and_preserved() {
        let d = data(&[[1.0, 1.0], [3.0, -1.0], [0.0, 0.0]]);
        let s = normalize_fit(&d, &Split::all(&d)).unwrap();
        assert_eq!(s.mean, vec![2.0, 0.0]);
        assert_eq!(normalize_apply(&s, d.features(2)).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn not_idempotent() {
        let d = data(&[[1.0, 2.0], [5.0, 4.0]]);
        let s = normalize_fit(&d, &Split::all(&d)).unwrap();
        let once = normalize_apply(&s, d.features(1)).unwrap();
        let twice = normalize_apply(&s, &once).unwrap();
        assert_ne!(once, twice);
    }
}
