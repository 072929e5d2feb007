//! Stochastic packet-series views for contrastive training.
//!
//! Inputs are `[packets, features]` matrices. Every transform preserves shape
//! and leaves labels alone; randomness always comes from an explicit rng.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

fn dims(x: &Tensor) -> (usize, usize) {
    let s = x.shape();
    debug_assert_eq!(s.len(), 2, "augmentations expect [packets, features]");
    (s[0], s[1])
}

/// Reverse packet order.
pub fn hflip(x: &Tensor) -> Tensor {
    let (p, f) = dims(x);
    let mut out = Vec::with_capacity(p * f);
    for row in x.data().chunks(f).rev() {
        out.extend_from_slice(row);
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Reorder packets by a uniformly drawn permutation.
pub fn shuffle(x: &Tensor, rng: &mut Rng) -> Tensor {
    let (p, f) = dims(x);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(p * f);
    for &i in &order {
        out.extend_from_slice(&x.data()[i * f..(i + 1) * f]);
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Zero the last `floor(P/2)` packets.
pub fn tail_occlude(x: &Tensor) -> Tensor {
    let (p, f) = dims(x);
    let keep = p - p / 2;
    let mut out = x.data().to_vec();
    out[keep * f..].iter_mut().for_each(|v| *v = 0.0);
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Add an independent N(0,1) draw to every entry, padding included.
pub fn gauss_noise(x: &Tensor, rng: &mut Rng) -> Tensor {
    let mut out = x.data().to_vec();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += z;
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

fn gauss_noise_except(x: &Tensor, skip: usize, rng: &mut Rng) -> Tensor {
    let f = dims(x).1;
    let mut out = x.data().to_vec();
    for (k, v) in out.iter_mut().enumerate() {
        if k % f != skip {
            let z: f64 = StandardNormal.sample(rng);
            *v += z;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub hflip: bool,
    pub shuffle: bool,
    pub tail_occlude: bool,
    pub gauss_noise: bool,
    /// Probability that each enabled transform fires, independently.
    pub p: f64,
    /// Whether noise also perturbs the direction channel.
    pub noise_on_direction: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy { hflip: true, shuffle: true, tail_occlude: true, gauss_noise: true, p: 0.5, noise_on_direction: true }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config(format!("augmentation probability must lie in [0,1], got {}", self.p)));
        }
        Ok(())
    }

    pub fn identity() -> Self {
        AugmentPolicy { p: 0.0, ..Default::default() }
    }
}

fn fires(enabled: bool, p: f64, rng: &mut Rng) -> bool {
    enabled && p > 0.0 && rng.gen::<f64>() < p
}

/// One random view: hflip, shuffle, tail occlusion, then noise, each enabled
/// transform firing with probability `policy.p`.
///
/// `direction` names the direction channel; it only matters when
/// `noise_on_direction` is off.
pub fn random_view(x: &Tensor, policy: &AugmentPolicy, direction: Option<usize>, rng: &mut Rng) -> Tensor {
    let p = policy.p;
    let mut out = x.clone();
    if fires(policy.hflip, p, rng) {
        out = hflip(&out);
    }
    if fires(policy.shuffle, p, rng) {
        out = shuffle(&out, rng);
    }
    if fires(policy.tail_occlude, p, rng) {
        out = tail_occlude(&out);
    }
    if fires(policy.gauss_noise, p, rng) {
        out = match direction.filter(|_| !policy.noise_on_direction) {
            Some(d) => gauss_noise_except(&out, d, rng),
            None => gauss_noise(&out, rng),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn m(p: usize, f: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![p, f], v.to_vec()).unwrap()
    }

    #[test]
    fn flip_examples() {
        let x = m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(hflip(&x).data(), &[5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
        assert_eq!(hflip(&hflip(&x)), x);
        let one = m(1, 3, &[1.0, 2.0, 3.0]);
        assert_eq!(hflip(&one), one);
    }

    #[test]
    fn occlusion_keeps_the_first_half() {
        assert_eq!(tail_occlude(&m(4, 1, &[1.0, 2.0, 3.0, 4.0])).data(), &[1.0, 2.0, 0.0, 0.0]);
        let five = tail_occlude(&m(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(five.data(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(tail_occlude(&five), five);
    }

    #[test]
    fn noise_skips_direction_when_asked() {
        let x = m(4, 2, &[0.0; 8]);
        let policy = AugmentPolicy { p: 1.0, noise_on_direction: false, ..AugmentPolicy::identity() };
        let policy = AugmentPolicy { gauss_noise: true, hflip: false, shuffle: false, tail_occlude: false, ..policy };
        let y = random_view(&x, &policy, Some(1), &mut rng_for(0, &[1]));
        for row in y.data().chunks(2) {
            assert_eq!(row[1], 0.0);
            assert_ne!(row[0], 0.0);
        }
    }

    #[test]
    fn probability_zero_is_identity() {
        let x = m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(random_view(&x, &AugmentPolicy::identity(), None, &mut rng_for(1, &[])), x);
        assert!(AugmentPolicy { p: 1.5, ..Default::default() }.validate().is_err());
    }
}
