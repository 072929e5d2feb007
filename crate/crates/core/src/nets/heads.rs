//! Classification and projection heads.
//!
//! Gradient-trained heads take their parameters as tape variables so that the
//! same code serves training, fine-tuning and MAML adaptation. Closed-form
//! heads (nearest neighbour, prototypes) work on plain tensors.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encoder::he_uniform;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{self, stream};

pub const COSINE_SCALE: f64 = 10.0;
pub const RELATION_HIDDEN: usize = 64;
pub const PROJECTION_DIM: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    ClassEmbedding,
    Logistic,
    NearestNeighbor,
    Prototype,
    Relation,
    Projection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    /// Number of classes (ignored by projection and closed-form heads).
    pub classes: usize,
    pub relation_hidden: usize,
    pub projection_dim: usize,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, classes: usize) -> Self {
        HeadSpec { kind, classes, relation_hidden: RELATION_HIDDEN, projection_dim: PROJECTION_DIM }
    }

    /// Parameter shapes for latent width `d`.
    pub fn param_shapes(&self, d: usize) -> Result<Vec<Vec<usize>>> {
        let c = self.classes;
        let needs_classes = matches!(self.kind, HeadKind::Linear | HeadKind::ClassEmbedding | HeadKind::Logistic);
        if needs_classes && c < 2 {
            return Err(Error::config(format!("{:?} head needs at least 2 classes, got {c}", self.kind)));
        }
        let h = self.relation_hidden;
        let p = self.projection_dim;
        Ok(match self.kind {
            HeadKind::Linear | HeadKind::Logistic => vec![vec![d, c], vec![c]],
            HeadKind::ClassEmbedding => vec![vec![d, c]],
            HeadKind::NearestNeighbor | HeadKind::Prototype => vec![],
            HeadKind::Relation => vec![vec![2 * d, h], vec![h], vec![h, 1], vec![1]],
            HeadKind::Projection => vec![vec![d, d], vec![d], vec![d, p], vec![p]],
        })
    }

    pub fn param_count(&self, d: usize) -> Result<usize> {
        Ok(self.param_shapes(d)?.iter().map(|s| s.iter().product::<usize>()).sum())
    }

    /// Fresh parameters: weights He-uniform, biases zero.
    pub fn init(&self, d: usize, seed: u64) -> Result<Vec<Tensor>> {
        let mut rng = rng::rng_for(seed, &[stream::HEAD_INIT]);
        Ok(self
            .param_shapes(d)?
            .into_iter()
            .map(|s| if s.len() == 2 { he_uniform(&s, s[0], &mut rng) } else { Tensor::zeros(&s) })
            .collect())
    }
}

/// Parameters of a linear head: `d*c + c`.
pub fn head_params(d: usize, c: usize) -> usize {
    d * c + c
}

/// `(trunk, head)` parameter counts.
pub fn param_count(encoder: &super::EncoderSpec, head: &HeadSpec) -> Result<(usize, usize)> {
    Ok((encoder.trunk_params(), head.param_count(encoder.latent)?))
}

pub fn linear_logits(w: &Var, b: &Var, z: &Var) -> Result<Var> {
    z.matmul(w)?.add(b)
}

/// `scale * cos(w_k, z)` for every class column `w_k` of `w` `[d, c]`.
pub fn cosine_logits(w: &Var, z: &Var, scale: f64) -> Result<Var> {
    let wn = w.t()?.l2_normalize()?.t()?;
    z.l2_normalize()?.matmul(&wn)?.scale(scale)
}

/// Per-class sigmoid of affine scores.
pub fn logistic_probs(w: &Var, b: &Var, z: &Var) -> Result<Var> {
    linear_logits(w, b, z)?.sigmoid()
}

/// Logits of a gradient head (`Linear`, `ClassEmbedding` or `Logistic`).
pub fn head_logits(kind: HeadKind, params: &[Var], z: &Var) -> Result<Var> {
    match kind {
        HeadKind::Linear | HeadKind::Logistic => linear_logits(&params[0], &params[1], z),
        HeadKind::ClassEmbedding => cosine_logits(&params[0], z, COSINE_SCALE),
        other => Err(Error::contract(format!("{other:?} is not a logit head"))),
    }
}

/// Row-wise L2 normalization of a plain tensor; zero rows stay zero.
pub fn normalize_rows(x: &Tensor) -> Tensor {
    let d = x.row_len();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Label of the nearest support row after L2 normalization; ties go to the
/// lowest label.
pub fn nn_predict(support: &Tensor, labels: &[usize], query: &[f64]) -> Result<usize> {
    if support.rows() == 0 || support.rows() != labels.len() {
        return Err(Error::contract("nn_predict needs one label per support row and at least one support"));
    }
    let s = normalize_rows(support);
    let q = normalize_rows(&Tensor::vector(query.to_vec()).reshaped(&[1, query.len()])?);
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, &l) in labels.iter().enumerate() {
        let dist = sq(s.row(i), q.row(0));
        if dist < best.0 || (dist == best.0 && l < best.1) {
            best = (dist, l);
        }
    }
    Ok(best.1)
}

/// Class means `[ways, d]` of rows of `z` grouped by local label.
pub fn prototypes(z: &Tensor, labels: &[usize], ways: usize) -> Result<Tensor> {
    let d = z.row_len();
    let mut sums = vec![0.0; ways * d];
    let mut counts = vec![0usize; ways];
    for (i, &l) in labels.iter().enumerate() {
        if l >= ways {
            return Err(Error::contract(format!("label {l} outside 0..{ways}")));
        }
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!("class {k} has no support embedding")));
    }
    for (k, &c) in counts.iter().enumerate() {
        sums[k * d..(k + 1) * d].iter_mut().for_each(|s| *s /= c as f64);
    }
    Tensor::new(vec![ways, d], sums)
}

/// Differentiable class means: `A z` with a constant averaging matrix.
pub fn prototypes_var(z: &Var, labels: &[usize], ways: usize) -> Result<Var> {
    let mut counts = vec![0usize; ways];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| Error::contract("prototype label out of range"))? += 1;
    }
    let n = labels.len();
    let mut a = vec![0.0; ways * n];
    for (i, &l) in labels.iter().enumerate() {
        a[l * n + i] = 1.0 / counts[l] as f64;
    }
    z.tape().constant(Tensor::new(vec![ways, n], a)?).matmul(z)
}

/// Negative squared distances to each prototype.
pub fn proto_logits(protos: &Var, z: &Var) -> Result<Var> {
    z.sq_dist(protos)?.neg()
}

/// Relation scores `[q, ways]` in `[0, 1]`: a 2-layer module over the
/// concatenation of each class prototype with the query embedding.
pub fn relation_scores(params: &[Var], protos: &Var, queries: &Var) -> Result<Var> {
    if params.len() != 4 {
        return Err(Error::contract("relation module expects [W1, b1, W2, b2]"));
    }
    let (ways, q) = (protos.shape()[0], queries.shape()[0]);
    let proto_idx: Vec<usize> = (0..q).flat_map(|_| 0..ways).collect();
    let query_idx: Vec<usize> = (0..q).flat_map(|i| std::iter::repeat_n(i, ways)).collect();
    let pairs = Var::concat(&[protos.select_rows(&proto_idx)?, queries.select_rows(&query_idx)?], 1)?;
    let hidden = pairs.matmul(&params[0])?.add(&params[1])?.relu()?;
    let out = hidden.matmul(&params[2])?.add(&params[3])?.sigmoid()?;
    out.reshape(&[q, ways])
}

/// 2-layer MLP followed by L2 normalization.
pub fn projection(params: &[Var], z: &Var) -> Result<Var> {
    if params.len() != 4 {
        return Err(Error::contract("projection head expects [W1, b1, W2, b2]"));
    }
    let h = z.matmul(&params[0])?.add(&params[1])?.relu()?;
    h.matmul(&params[2])?.add(&params[3])?.l2_normalize()
}

/// Gradient-descent settings for the logistic head.
pub const LOGISTIC_MAX_ITERS: usize = 1000;
pub const LOGISTIC_TOL: f64 = 1e-6;
pub const LOGISTIC_LR: f64 = 1.0;

/// One-vs-rest logistic regression on L2-normalized embeddings with an L2
/// penalty of strength `1 / (C n)` (C = 1), fitted by full-batch gradient
/// descent. Returns `[W, b]`.
pub fn fit_logistic(z: &Tensor, labels: &[usize], classes: usize) -> Result<Vec<Tensor>> {
    let zn = normalize_rows(z);
    let (n, d) = (zn.rows(), zn.row_len());
    if n == 0 || n != labels.len() {
        return Err(Error::contract("fit_logistic needs one label per embedding"));
    }
    let lambda = 1.0 / n as f64;
    let mut w = vec![0.0; d * classes];
    let mut b = vec![0.0; classes];
    for _ in 0..LOGISTIC_MAX_ITERS {
        let mut gw = vec![0.0; d * classes];
        let mut gb = vec![0.0; classes];
        for i in 0..n {
            let x = zn.row(i);
            for c in 0..classes {
                let s: f64 = b[c] + (0..d).map(|j| x[j] * w[j * classes + c]).sum::<f64>();
                let p = 1.0 / (1.0 + (-s).exp());
                let r = (p - if labels[i] == c { 1.0 } else { 0.0 }) / n as f64;
                gb[c] += r;
                for j in 0..d {
                    gw[j * classes + c] += r * x[j];
                }
            }
        }
        for (g, wv) in gw.iter_mut().zip(&w) {
            *g += lambda * wv;
        }
        let norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if norm < LOGISTIC_TOL {
            break;
        }
        w.iter_mut().zip(&gw).for_each(|(wv, g)| *wv -= LOGISTIC_LR * g);
        b.iter_mut().zip(&gb).for_each(|(bv, g)| *bv -= LOGISTIC_LR * g);
    }
    if w.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric { op: "fit_logistic", detail: "weights diverged".into() });
    }
    Ok(vec![Tensor::new(vec![d, classes], w)?, Tensor::vector(b)])
}

/// Argmax of each row; ties go to the lower index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let c = scores.row_len();
    scores
        .data()
        .chunks(c)
        .map(|r| {
            let mut best = 0;
            for k in 1..c {
                if r[k] > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Evaluate a closure over parameter constants on a throwaway inference tape.
pub fn infer<F>(params: &[Tensor], inputs: &[&Tensor], f: F) -> Result<Tensor>
where
    F: FnOnce(&[Var], &[Var]) -> Result<Var>,
{
    let tape = Tape::no_grad();
    let p: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let x: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    Ok(f(&p, &x)?.value().clone())
}

/// Random index permutation helper shared by trainers.
pub fn shuffled(n: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    v
}
