//! Seeded synthetic flow datasets with controllable class separability and
//! imbalance. Not a model of real traffic; a desk-scale stand-in with the same
//! sample shape.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FlowSample, Profile};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, stream};

/// Share of flows cut short and tail-padded with zeros.
const TRUNCATED_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub samples_per_class_max: usize,
    /// Ratio between the largest and the smallest class.
    pub imbalance_rho: f64,
    /// Scale of the class mean templates in units of the per-entry jitter.
    pub separability: f64,
    pub packets: usize,
    pub features: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 32,
            samples_per_class_max: 300,
            imbalance_rho: 1.5,
            separability: 5.0,
            packets: 10,
            features: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if !(self.imbalance_rho >= 1.0) || !self.imbalance_rho.is_finite() {
            return Err(Error::config(format!("imbalance_rho must be >= 1, got {}", self.imbalance_rho)));
        }
        if !(self.separability >= 0.0) || !self.separability.is_finite() {
            return Err(Error::config("separability must be a finite non-negative number"));
        }
        if self.samples_per_class_max == 0 {
            return Err(Error::config("samples_per_class_max must be positive"));
        }
        Profile::new(self.packets, self.features).map(|_| ())
    }

    /// Class `c` holds `round(max * rho^(-c/(C-1)))` samples (at least one).
    pub fn class_sizes(&self) -> Vec<usize> {
        let c = self.n_classes;
        (0..c)
            .map(|i| {
                let r = self.imbalance_rho.powf(-(i as f64) / (c - 1) as f64);
                ((self.samples_per_class_max as f64 * r).round() as usize).max(1)
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let profile = Profile::new(cfg.packets, cfg.features)?;
    let (p, f) = (cfg.packets, cfg.features);
    let dir = profile.direction_channel();
    let mut samples = Vec::new();
    for (class, n) in cfg.class_sizes().into_iter().enumerate() {
        let mut trng = rng::rng_for(cfg.seed, &[stream::SYNTH, 0, class as u64]);
        // Continuous channels: mean template. Direction: P(+1) per packet.
        let template: Vec<f64> = (0..p * f)
            .map(|k| {
                let z: f64 = StandardNormal.sample(&mut trng);
                if Some(k % f) == dir {
                    sigmoid(cfg.separability * z)
                } else {
                    cfg.separability * z
                }
            })
            .collect();
        let mut srng = rng::rng_for(cfg.seed, &[stream::SYNTH, 1, class as u64]);
        for k in 0..n {
            let mut x: Vec<f64> = template
                .iter()
                .enumerate()
                .map(|(e, &t)| {
                    if Some(e % f) == dir {
                        if srng.gen::<f64>() < t {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        let z: f64 = StandardNormal.sample(&mut srng);
                        t + z
                    }
                })
                .collect();
            if p > 1 && srng.gen::<f64>() < TRUNCATED_FRACTION {
                let len = srng.gen_range(1..p);
                x[len * f..].iter_mut().for_each(|v| *v = 0.0);
            }
            samples.push(FlowSample {
                features: Tensor::new(vec![p, f], x)?,
                label: class,
                flow_id: format!("c{class}-{k}"),
            });
        }
    }
    Dataset::new(profile, samples, (0..cfg.n_classes as i64).collect())
}
