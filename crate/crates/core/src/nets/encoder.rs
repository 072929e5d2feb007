use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Profile;
use crate::error::{Error, Result};
use crate::numerics::{batch_norm_eval, batch_norm_train, conv2d, BatchStats, Tape, Tensor, Var};
use crate::rng::{self, stream};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Rows embedded per inference chunk.
const EMBED_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cnn2,
    Cnn4,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn2" | "cnn-2" => Ok(Variant::Cnn2),
            "cnn4" | "cnn-4" => Ok(Variant::Cnn4),
            other => Err(Error::config(format!("unknown encoder variant `{other}` (cnn2|cnn4)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub variant: Variant,
    pub packets: usize,
    pub features: usize,
    /// Output channels of each conv block.
    pub filters: Vec<usize>,
    /// Width of the final fully connected layer.
    pub latent: usize,
    /// Kernel extent over (packets, features); stride 1, "same" zero padding.
    pub kernel: [usize; 2],
}

impl EncoderSpec {
    pub fn new(variant: Variant, profile: &Profile) -> Self {
        let (filters, latent) = match variant {
            Variant::Cnn2 => (vec![32, 64], 200),
            Variant::Cnn4 => (vec![32, 64, 64, 64], 500),
        };
        EncoderSpec { variant, packets: profile.packets, features: profile.features, filters, latent, kernel: [3, 2] }
    }

    pub fn cnn2(profile: &Profile) -> Self {
        Self::new(Variant::Cnn2, profile)
    }

    pub fn cnn4(profile: &Profile) -> Self {
        Self::new(Variant::Cnn4, profile)
    }

    /// Parameter shapes: `[W, b, gamma, beta]` per conv block, then FC `[W, b]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let [kh, kw] = self.kernel;
        let mut shapes = Vec::new();
        let mut cin = 1;
        for &c in &self.filters {
            shapes.push(vec![kh * kw * cin, c]);
            shapes.push(vec![c]);
            shapes.push(vec![c]);
            shapes.push(vec![c]);
            cin = c;
        }
        shapes.push(vec![self.packets * self.features * cin, self.latent]);
        shapes.push(vec![self.latent]);
        shapes
    }

    pub fn trunk_params(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.filters.contains(&0) || self.latent == 0 {
            return Err(Error::config("encoder needs at least one conv block and non-zero widths"));
        }
        if self.kernel.contains(&0) || self.packets == 0 || self.features == 0 {
            return Err(Error::config("encoder kernel and input extents must be positive"));
        }
        Ok(())
    }

    /// Forward pass with parameters supplied as tape variables.
    ///
    /// `x` is `[n, packets, features]`. In training mode batch statistics are
    /// used and returned; in evaluation mode `running` supplies them.
    pub fn forward(&self, params: &[Var], running: &[RunningStats], x: &Var, train: bool) -> Result<(Var, Vec<BatchStats>)> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.packets || s[2] != self.features {
            return Err(Error::contract(format!(
                "encoder expects [n, {}, {}], got {s:?}",
                self.packets, self.features
            )));
        }
        if params.len() != 4 * self.filters.len() + 2 {
            return Err(Error::contract("encoder parameter list has the wrong length"));
        }
        let (n, p, f) = (s[0], s[1], s[2]);
        let kernel = (self.kernel[0], self.kernel[1]);
        let mut h = x.reshape(&[n, p, f, 1])?;
        let mut stats = Vec::new();
        for (b, &c) in self.filters.iter().enumerate() {
            let w = &params[4 * b..4 * b + 4];
            let conv = conv2d(&h, &w[0], &w[1], kernel)?;
            let normed = if train {
                let (y, st) = batch_norm_train(&conv, &w[2], &w[3], BN_EPS)?;
                stats.push(st);
                y
            } else {
                let r = running.get(b).ok_or_else(|| Error::contract("missing running statistics"))?;
                batch_norm_eval(&conv, &w[2], &w[3], &r.mean, &r.var, BN_EPS)?
            };
            h = normed.relu()?.reshape(&[n, p, f, c])?;
        }
        let k = params.len();
        let flat = h.reshape(&[n, p * f * self.filters.last().copied().unwrap_or(1)])?;
        let z = flat.matmul(&params[k - 2])?.add(&params[k - 1])?.relu()?;
        Ok((z, stats))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Tensor,
    /// Unbiased running variance.
    pub var: Tensor,
}

/// He-style uniform init: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut rng::Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Trunk parameters `theta` plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub params: Vec<Tensor>,
    pub running: Vec<RunningStats>,
}

impl Encoder {
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::rng_for(seed, &[stream::INIT]);
        let mut params = Vec::new();
        for shape in spec.param_shapes() {
            let t = if shape.len() == 2 {
                he_uniform(&shape, shape[0], &mut rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.push(t);
        }
        // Batch-norm scales start at one.
        for b in 0..spec.filters.len() {
            params[4 * b + 2] = Tensor::ones(&[spec.filters[b]]);
        }
        let running = spec
            .filters
            .iter()
            .map(|&c| RunningStats { mean: Tensor::zeros(&[c]), var: Tensor::ones(&[c]) })
            .collect();
        Ok(Encoder { spec, params, running })
    }

    pub fn latent(&self) -> usize {
        self.spec.latent
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[BatchStats]) {
        for (r, s) in self.running.iter_mut().zip(stats) {
            let n = s.count as f64;
            let unbias = if s.count > 1 { n / (n - 1.0) } else { 1.0 };
            for (rm, &m) in r.mean.data_mut().iter_mut().zip(s.mean.data()) {
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
            }
            for (rv, &v) in r.var.data_mut().iter_mut().zip(s.var.data()) {
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v * unbias;
            }
        }
    }

    /// Evaluation-mode embeddings `[n, latent]` of `x` `[n, packets, features]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let per = x.numel() / n.max(1);
        let rows = self.spec.packets * self.spec.features;
        if per != rows {
            return Err(Error::contract(format!("embed: sample size {per} does not match the encoder input {rows}")));
        }
        let chunks: Vec<Result<Vec<f64>>> = x
            .data()
            .par_chunks(EMBED_CHUNK * per)
            .map(|chunk| {
                let m = chunk.len() / per;
                let tape = Tape::no_grad();
                let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
                let xin = tape.constant(Tensor::new(vec![m, self.spec.packets, self.spec.features], chunk.to_vec())?);
                let (z, _) = self.spec.forward(&params, &self.running, &xin, false)?;
                Ok(z.value().data().to_vec())
            })
            .collect();
        let mut data = Vec::with_capacity(n * self.latent());
        for c in chunks {
            data.extend(c?);
        }
        Tensor::new(vec![n, self.latent()], data)
    }
}
