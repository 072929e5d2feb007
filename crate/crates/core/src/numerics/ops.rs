//! Differentiable ops on [`Var`].
//!
//! Every backward rule is expressed through other ops in this file, which is
//! what makes second-order gradients work.

use std::rc::Rc;

use super::tape::{BackwardFn, Var};
use super::tensor::{self, Tensor, PAD_INDEX};
use crate::error::{Error, Result};

fn rule(f: impl Fn(&Var, &[Var], &Var) -> Result<Vec<Option<Var>>> + 'static) -> BackwardFn {
    Rc::new(f)
}

/// Binary elementwise op over equal shapes; broadcasting is handled by callers.
fn same_shape(a: &Var, b: &Var) -> Result<(Var, Var)> {
    if a.shape() == b.shape() {
        return Ok((a.clone(), b.clone()));
    }
    let shape = tensor::broadcast_shape(a.shape(), b.shape())?;
    let a = if a.shape() == shape.as_slice() { a.clone() } else { a.broadcast_to(&shape)? };
    let b = if b.shape() == shape.as_slice() { b.clone() } else { b.broadcast_to(&shape)? };
    Ok((a, b))
}

fn axis_of(v: &Var, axis: isize) -> Result<usize> {
    let n = v.shape().len() as isize;
    let a = if axis < 0 { n + axis } else { axis };
    if a < 0 || a >= n {
        return Err(Error::contract(format!("axis {axis} out of range for shape {:?}", v.shape())));
    }
    Ok(a as usize)
}

impl Var {
    // ---- elementwise arithmetic --------------------------------------------

    pub fn add(&self, other: &Var) -> Result<Var> {
        let (a, b) = same_shape(self, other)?;
        let value = a.value().zip(b.value(), |x, y| x + y)?;
        a.tape().record("add", &[&a, &b], value, rule(|g, _, _| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let (a, b) = same_shape(self, other)?;
        let value = a.value().zip(b.value(), |x, y| x - y)?;
        a.tape().record("sub", &[&a, &b], value, rule(|g, _, _| Ok(vec![Some(g.clone()), Some(g.neg()?)])))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let (a, b) = same_shape(self, other)?;
        let value = a.value().zip(b.value(), |x, y| x * y)?;
        a.tape().record(
            "mul",
            &[&a, &b],
            value,
            rule(|g, ins, _| Ok(vec![Some(g.mul(&ins[1])?), Some(g.mul(&ins[0])?)])),
        )
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        let (a, b) = same_shape(self, other)?;
        let value = a.value().zip(b.value(), |x, y| x / y)?;
        a.tape().record(
            "div",
            &[&a, &b],
            value,
            rule(|g, ins, out| {
                let ga = g.div(&ins[1])?;
                let gb = g.mul(out)?.div(&ins[1])?.neg()?;
                Ok(vec![Some(ga), Some(gb)])
            }),
        )
    }

    pub fn neg(&self) -> Result<Var> {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Result<Var> {
        let value = self.value().map(|x| k * x);
        self.tape().record("scale", &[self], value, rule(move |g, _, _| Ok(vec![Some(g.scale(k)?)])))
    }

    pub fn add_scalar(&self, k: f64) -> Result<Var> {
        let value = self.value().map(|x| x + k);
        self.tape().record("add_scalar", &[self], value, rule(|g, _, _| Ok(vec![Some(g.clone())])))
    }

    pub fn square(&self) -> Result<Var> {
        self.mul(self)
    }

    pub fn exp(&self) -> Result<Var> {
        let value = self.value().map(f64::exp);
        self.tape().record("exp", &[self], value, rule(|g, _, out| Ok(vec![Some(g.mul(out)?)])))
    }

    pub fn ln(&self) -> Result<Var> {
        let value = self.value().map(f64::ln);
        self.tape().record("ln", &[self], value, rule(|g, ins, _| Ok(vec![Some(g.div(&ins[0])?)])))
    }

    pub fn sqrt(&self) -> Result<Var> {
        let value = self.value().map(f64::sqrt);
        self.tape().record("sqrt", &[self], value, rule(|g, _, out| Ok(vec![Some(g.div(&out.scale(2.0)?)?)])))
    }

    pub fn relu(&self) -> Result<Var> {
        let value = self.value().map(|x| x.max(0.0));
        self.tape().record(
            "relu",
            &[self],
            value,
            rule(|g, ins, _| {
                let mask = ins[0].value().map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                Ok(vec![Some(g.mul(&g.tape().constant(mask))?)])
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Var> {
        let value = self.value().map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.tape().record(
            "sigmoid",
            &[self],
            value,
            rule(|g, _, out| {
                let one_minus = out.neg()?.add_scalar(1.0)?;
                Ok(vec![Some(g.mul(&out.mul(&one_minus)?)?)])
            }),
        )
    }

    // ---- linear algebra and shape ------------------------------------------

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let value = tensor::matmul(self.value(), other.value())?;
        self.tape().record(
            "matmul",
            &[self, other],
            value,
            rule(|g, ins, _| {
                let ga = g.matmul(&ins[1].t()?)?;
                let gb = ins[0].t()?.matmul(g)?;
                Ok(vec![Some(ga), Some(gb)])
            }),
        )
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Var> {
        let value = tensor::transpose2(self.value())?;
        self.tape().record("transpose", &[self], value, rule(|g, _, _| Ok(vec![Some(g.t()?)])))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().reshaped(shape)?;
        let orig = self.shape().to_vec();
        self.tape().record("reshape", &[self], value, rule(move |g, _, _| Ok(vec![Some(g.reshape(&orig)?)])))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var> {
        let value = tensor::broadcast_to(self.value(), shape)?;
        let orig = self.shape().to_vec();
        self.tape().record("broadcast_to", &[self], value, rule(move |g, _, _| Ok(vec![Some(g.sum_to(&orig)?)])))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Result<Var> {
        let value = tensor::sum_to(self.value(), shape)?;
        let orig = self.shape().to_vec();
        self.tape().record("sum_to", &[self], value, rule(move |g, _, _| Ok(vec![Some(g.broadcast_to(&orig)?)])))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&self) -> Result<Var> {
        self.sum_to(&[1])
    }

    pub fn mean(&self) -> Result<Var> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1. Negative axes count from the end.
    pub fn sum_axis(&self, axis: isize) -> Result<Var> {
        let a = axis_of(self, axis)?;
        let value = tensor::sum_axis(self.value(), a)?;
        let orig = self.shape().to_vec();
        self.tape().record("sum_axis", &[self], value, rule(move |g, _, _| Ok(vec![Some(g.broadcast_to(&orig)?)])))
    }

    pub fn mean_axis(&self, axis: isize) -> Result<Var> {
        let a = axis_of(self, axis)?;
        let n = self.shape()[a] as f64;
        self.sum_axis(axis)?.scale(1.0 / n)
    }

    /// `out[i] = self.flat[idx[i]]`, or 0 where `idx[i] == PAD_INDEX`.
    pub fn gather(&self, idx: Rc<[u32]>, shape: &[usize]) -> Result<Var> {
        if idx.iter().any(|&i| i != PAD_INDEX && i as usize >= self.value().numel()) {
            return Err(Error::contract("gather index out of range"));
        }
        let value = tensor::gather(self.value(), &idx, shape)?;
        let orig = self.shape().to_vec();
        self.tape().record(
            "gather",
            &[self],
            value,
            rule(move |g, _, _| Ok(vec![Some(g.scatter_add(idx.clone(), &orig)?)])),
        )
    }

    /// Adjoint of [`Var::gather`]: `out.flat[idx[i]] += self.flat[i]`.
    pub fn scatter_add(&self, idx: Rc<[u32]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if idx.iter().any(|&i| i != PAD_INDEX && i as usize >= n) {
            return Err(Error::contract("scatter index out of range"));
        }
        let value = tensor::scatter_add(self.value(), &idx, shape)?;
        let orig = self.shape().to_vec();
        self.tape().record(
            "scatter_add",
            &[self],
            value,
            rule(move |g, _, _| Ok(vec![Some(g.gather(idx.clone(), &orig)?)])),
        )
    }

    /// Rows `idx` of a tensor (first axis).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Var> {
        let w = self.value().row_len();
        let rows = self.shape()[0];
        if idx.iter().any(|&i| i >= rows) {
            return Err(Error::contract("row index out of range"));
        }
        let map: Rc<[u32]> = idx.iter().flat_map(|&r| (0..w).map(move |j| (r * w + j) as u32)).collect();
        let mut shape = self.shape().to_vec();
        shape[0] = idx.len();
        self.gather(map, &shape)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::contract(format!("narrow({axis}, {start}, {len}) out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for l in start..start + len {
                let base = (o * shape[axis] + l) * inner;
                map.extend((base..base + inner).map(|i| i as u32));
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(map.into(), &out_shape)
    }

    /// Concatenate along `axis`.
    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero vars"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::contract("concat axis out of range"));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != rank || (0..rank).any(|d| d != axis && s[d] != first.shape()[d]) {
                return Err(Error::contract(format!("concat shapes disagree: {:?} vs {:?}", s, first.shape())));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.value().data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let refs: Vec<&Var> = parts.iter().collect();
        first.tape().record(
            "concat",
            &refs,
            value,
            rule(move |g, _, _| {
                let mut start = 0;
                let mut out = Vec::with_capacity(lens.len());
                for &l in &lens {
                    out.push(Some(g.narrow(axis, start, l)?));
                    start += l;
                }
                Ok(out)
            }),
        )
    }

    // ---- softmax family ----------------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var> {
        let value = tensor::softmax_last(self.value());
        self.tape().record(
            "softmax",
            &[self],
            value,
            rule(|g, _, s| {
                let inner = g.mul(s)?.sum_axis(-1)?;
                Ok(vec![Some(s.mul(&g.sub(&inner)?)?)])
            }),
        )
    }

    /// Log-softmax over the last axis, via a max-shifted log-sum-exp.
    pub fn log_softmax(&self) -> Result<Var> {
        let value = tensor::log_softmax_last(self.value());
        self.tape().record(
            "log_softmax",
            &[self],
            value,
            rule(|g, _, out| {
                let gsum = g.sum_axis(-1)?;
                Ok(vec![Some(g.sub(&out.exp()?.mul(&gsum)?)?)])
            }),
        )
    }

    /// Mean cross-entropy of row logits `[n, c]` against integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::contract(format!("cross_entropy: logits {:?} vs {} labels", shape, labels.len())));
        }
        let onehot = one_hot(labels, shape[1])?;
        let picked = self.log_softmax()?.mul(&self.tape().constant(onehot))?;
        picked.sum()?.scale(-1.0 / labels.len() as f64)
    }

    /// Mean squared error against a same-shaped target.
    pub fn mse(&self, target: &Var) -> Result<Var> {
        if self.shape() != target.shape() {
            return Err(Error::contract("mse operands must share a shape"));
        }
        self.sub(target)?.square()?.mean()
    }

    // ---- geometry ----------------------------------------------------------

    /// L2-normalize along the last axis; all-zero rows map to zero rows.
    pub fn l2_normalize(&self) -> Result<Var> {
        let sumsq = self.square()?.sum_axis(-1)?;
        let guard = sumsq.value().map(|v| if v == 0.0 { 1.0 } else { 0.0 });
        let norm = sumsq.add(&self.tape().constant(guard))?.sqrt()?;
        self.div(&norm)
    }

    /// Pairwise squared euclidean distances between rows of `self` `[n,d]` and `other` `[m,d]`.
    pub fn sq_dist(&self, other: &Var) -> Result<Var> {
        let value = tensor::sq_dist(self.value(), other.value())?;
        self.tape().record(
            "sq_dist",
            &[self, other],
            value,
            rule(|g, ins, _| {
                let (a, b) = (&ins[0], &ins[1]);
                let ga = a.mul(&g.sum_axis(1)?)?.sub(&g.matmul(b)?)?.scale(2.0)?;
                let gb = b.mul(&g.sum_axis(0)?.t()?)?.sub(&g.t()?.matmul(a)?)?.scale(2.0)?;
                Ok(vec![Some(ga), Some(gb)])
            }),
        )
    }

    /// Cosine similarity between rows of `self` and rows of `other`.
    pub fn cosine_similarity(&self, other: &Var) -> Result<Var> {
        self.l2_normalize()?.matmul(&other.l2_normalize()?.t()?)
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::contract(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len().max(1), classes], data)
}

/// Batch statistics produced by [`batch_norm_train`].
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Biased (population) variance used for the normalization itself.
    pub var: Tensor,
    pub count: usize,
}

/// Batch normalization over the rows of `x` `[n, c]` using batch statistics.
pub fn batch_norm_train(x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<(Var, BatchStats)> {
    if x.shape().len() != 2 {
        return Err(Error::contract("batch_norm expects [rows, channels]"));
    }
    let mean = x.mean_axis(0)?;
    let centered = x.sub(&mean)?;
    let var = centered.square()?.mean_axis(0)?;
    let inv = var.add_scalar(eps)?.sqrt()?;
    let y = centered.div(&inv)?.mul(gamma)?.add(beta)?;
    let stats = BatchStats { mean: mean.value().clone(), var: var.value().clone(), count: x.shape()[0] };
    Ok((y, stats))
}

/// Batch normalization with fixed (running) statistics.
pub fn batch_norm_eval(x: &Var, gamma: &Var, beta: &Var, mean: &Tensor, var: &Tensor, eps: f64) -> Result<Var> {
    let tape = x.tape();
    let denom = var.map(|v| (v + eps).sqrt());
    x.sub(&tape.constant(mean.clone()))?.div(&tape.constant(denom))?.mul(gamma)?.add(beta)
}

/// Index map turning an NHWC tensor into convolution patches `[n*h*w, kh*kw*c]`
/// with "same" zero padding and stride 1.
pub fn unfold_map(n: usize, h: usize, w: usize, c: usize, kh: usize, kw: usize) -> Rc<[u32]> {
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut map = Vec::with_capacity(n * h * w * kh * kw * c);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for di in 0..kh {
                    for dj in 0..kw {
                        let (si, sj) = ((i + di) as isize - pt as isize, (j + dj) as isize - pl as isize);
                        let inside = si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w;
                        for ch in 0..c {
                            map.push(if inside {
                                (((b * h + si as usize) * w + sj as usize) * c + ch) as u32
                            } else {
                                PAD_INDEX
                            });
                        }
                    }
                }
            }
        }
    }
    map.into()
}

/// 2-D convolution, stride 1, "same" padding, NHWC layout.
///
/// `weight` is `[kh*kw*c_in, c_out]`, `bias` is `[c_out]`. Output is
/// `[n*h*w, c_out]` (rows in NHW order) so that per-channel ops can follow
/// directly.
pub fn conv2d(x: &Var, weight: &Var, bias: &Var, kernel: (usize, usize)) -> Result<Var> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::contract(format!("conv2d expects NHWC input, got {s:?}")));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = kernel;
    if weight.shape() != [kh * kw * c, bias.shape()[0]] {
        return Err(Error::contract(format!(
            "conv2d weight {:?} does not match kernel {kernel:?} over {c} channels",
            weight.shape()
        )));
    }
    let patches = x.gather(unfold_map(n, h, w, c, kh, kw), &[n * h * w, kh * kw * c])?;
    patches.matmul(weight)?.add(bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[3.0, 7.0]);

        let z = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        for p in z.softmax().unwrap().value().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let v = tape.constant(t(&[2], &[3.0, 4.0]));
        let n = v.l2_normalize().unwrap();
        assert!((n.value().data()[0] - 0.6).abs() < 1e-15);
        assert!((n.value().data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn simple_gradients() {
        let tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let loss = w.square().unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&w).unwrap().item(), 6.0);

        let w = tape.param(t(&[2], &[-1.0, 2.0]));
        let loss = w.relu().unwrap().sum().unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&w).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let y = w.scale(2.0).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_output_names_the_op() {
        let tape = Tape::new();
        let w = tape.param(t(&[1], &[-1.0]));
        match w.ln() {
            Err(Error::Numeric { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("expected numeric error, got {other:?}"),
        }
        let x = tape.param(t(&[1], &[800.0]));
        assert!(matches!(x.exp(), Err(Error::Numeric { op: "exp", .. })));
    }

    #[test]
    fn shape_mismatch_is_a_contract_violation() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(t(&[2, 3], &[0.0; 6]));
        assert!(matches!(a.matmul(&b), Err(Error::Contract(_))));
        let c = tape.constant(t(&[3, 2], &[0.0; 6]));
        assert!(matches!(a.add(&c), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ce_nonnegative() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, -2.0, 30.0, 0.5, 0.5, -700.0]));
        let s = x.softmax().unwrap();
        for row in s.value().data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(x.cross_entropy(&[0, 2]).unwrap().item() >= 0.0);
    }

    #[test]
    fn zero_rows_normalize_to_zero() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[0.0, 0.0, 3.0, 4.0]));
        let y = x.l2_normalize().unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 0.6, 0.8]);
        let g = tape.backward(&y.sum().unwrap()).unwrap();
        assert!(g.get(&x).unwrap().is_finite());
    }

    #[test]
    fn batch_norm_standardizes_channels() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..64).map(|i| ((i * 37 % 17) as f64) * 0.3 + (i % 2) as f64).collect();
        let x = tape.param(t(&[32, 2], &data));
        let gamma = tape.param(Tensor::ones(&[2]));
        let beta = tape.param(Tensor::zeros(&[2]));
        let (y, _) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..32).map(|r| y.value().at2(r, c)).collect();
            let m = col.iter().sum::<f64>() / 32.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 32.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let tape = Tape::new();
        let (n, h, w, c, o) = (2, 4, 3, 2, 3);
        let xs: Vec<f64> = (0..n * h * w * c).map(|i| (i as f64 * 0.37).sin()).collect();
        let ws: Vec<f64> = (0..3 * 2 * c * o).map(|i| (i as f64 * 0.11).cos()).collect();
        let x = tape.constant(t(&[n, h, w, c], &xs));
        let wt = tape.constant(t(&[3 * 2 * c, o], &ws));
        let b = tape.constant(t(&[o], &[0.1, 0.2, 0.3]));
        let y = conv2d(&x, &wt, &b, (3, 2)).unwrap();
        for bi in 0..n {
            for i in 0..h {
                for j in 0..w {
                    for oc in 0..o {
                        let mut acc = [0.1, 0.2, 0.3][oc];
                        for di in 0..3 {
                            for dj in 0..2 {
                                let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize);
                                if si < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    let xv = xs[((bi * h + si as usize) * w + sj as usize) * c + ch];
                                    acc += xv * ws[((di * 2 + dj) * c + ch) * o + oc];
                                }
                            }
                        }
                        let got = y.value().at2((bi * h + i) * w + j, oc);
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn no_grad_tape_refuses_gradients() {
        let tape = Tape::no_grad();
        let w = tape.param(Tensor::scalar(2.0));
        let y = w.square().unwrap();
        assert!(!y.requires_grad());
        assert!(matches!(tape.grad(&y, &[w], true), Err(Error::Contract(_))));
    }
}
