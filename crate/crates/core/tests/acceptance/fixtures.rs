//! Small hand-built datasets and models shared by the criteria.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcbench::dataio::{Dataset, FlowSample, Profile};
use tcbench::nets::{Encoder, EncoderSpec, HeadKind, HeadSpec, Variant};
use tcbench::numerics::Tensor;
use tcbench::trainers::SourceModel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `counts[c]` samples of class `c`, features drawn around a class-specific offset.
pub fn dataset(counts: &[usize], packets: usize, features: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for k in 0..n {
            let data = (0..packets * features).map(|j| ((c * 7 + j) % 5) as f64 + r.gen_range(-0.5..0.5)).collect();
            samples.push(FlowSample {
                features: Tensor::new(vec![packets, features], data).unwrap(),
                label: c,
                flow_id: format!("{c}-{k}"),
            });
        }
    }
    Dataset::new(Profile::new(packets, features).unwrap(), samples, (0..counts.len() as i64).collect()).unwrap()
}

/// A reduced CNN-2 layout for fast exact checks.
pub fn tiny_spec(packets: usize, features: usize) -> EncoderSpec {
    EncoderSpec { variant: Variant::Cnn2, packets, features, filters: vec![2, 3], latent: 5, kernel: [3, 2] }
}

/// Untrained source model with a linear head over `classes` training classes.
pub fn source(spec: EncoderSpec, classes: usize, seed: u64) -> SourceModel {
    let encoder = Encoder::init(spec, seed).unwrap();
    let head = HeadSpec::new(HeadKind::Linear, classes).init(encoder.latent(), seed + 1).unwrap();
    let class_ids = (0..classes as i64).collect();
    SourceModel {
        method: "baseline".into(),
        config_hash: "fixture".into(),
        encoder,
        head: Some((HeadKind::Linear, head)),
        relation: None,
        norm: None,
        train_classes: (0..classes).collect(),
        class_ids,
        skipped_episodes: 0,
    }
}

/// `|a - n| / max(|a|, |n|, floor)`, maximized over entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)).fold(0.0, f64::max)
}
