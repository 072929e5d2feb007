//! Dense row-major `f64` tensors and the forward kernels behind the tape ops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel in gather/scatter index maps meaning "no source element" (reads as 0).
pub const PAD_INDEX: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(format!("tensor shape {shape:?} must be non-empty with positive extents")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {} values but {} were given",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        let n = v.len().max(1);
        if v.is_empty() {
            return Tensor::zeros(&[n]);
        }
        Tensor { shape: vec![n], data: v }
    }

    /// Build a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::contract("ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions but the first.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::contract(format!("elementwise shapes differ: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Select rows of a tensor (first axis), preserving the trailing shape.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::contract("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(items.len() * first.numel());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::contract("stacked tensors must share a shape"));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

// ---------------------------------------------------------------------------
// kernels

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::contract(format!("matmul shapes {:?} x {:?} do not conform", a.shape, b.shape)));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    // SAFETY: dimensions and row-major strides match the three buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

pub(crate) fn transpose2(a: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 {
        return Err(Error::contract(format!("transpose needs a matrix, got {:?}", a.shape)));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor { shape: vec![c, r], data: out })
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::contract(format!("shapes {a:?} and {b:?} do not broadcast"))),
        };
    }
    Ok(out)
}

/// Source offset (into a tensor of `src` shape) for each element of the
/// broadcast `dst` shape.
fn broadcast_map(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let n = dst.len();
    let off = n - src.len();
    let mut src_strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        src_strides[i + off] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let total = numel(dst);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for d in (0..n).rev() {
            idx[d] += 1;
            pos += src_strides[d];
            if idx[d] < dst[d] {
                break;
            }
            pos -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn broadcast_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if broadcast_shape(&a.shape, shape)? != shape {
        return Err(Error::contract(format!("cannot broadcast {:?} to {shape:?}", a.shape)));
    }
    let map = broadcast_map(&a.shape, shape);
    Ok(Tensor { shape: shape.to_vec(), data: map.into_iter().map(|i| a.data[i]).collect() })
}

/// Adjoint of `broadcast_to`: sum a broadcast tensor back down to `shape`.
pub(crate) fn sum_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if broadcast_shape(shape, &a.shape)? != a.shape {
        return Err(Error::contract(format!("cannot reduce {:?} to {shape:?}", a.shape)));
    }
    let map = broadcast_map(shape, &a.shape);
    let mut out = vec![0.0; numel(shape)];
    for (v, i) in a.data.iter().zip(map) {
        out[i] += v;
    }
    Ok(Tensor { shape: shape.to_vec(), data: out })
}

/// (outer, axis length, inner) decomposition around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sum_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.shape.len() {
        return Err(Error::contract(format!("axis {axis} out of range for {:?}", a.shape)));
    }
    let (outer, len, inner) = axis_split(&a.shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += a.data[base + i];
            }
        }
    }
    let mut shape = a.shape.clone();
    shape[axis] = 1;
    Ok(Tensor { shape, data: out })
}

/// Row-wise (last axis) log-sum-exp helper returning `x - lse(x)`.
pub(crate) fn log_softmax_last(a: &Tensor) -> Tensor {
    let w = *a.shape.last().expect("non-empty shape");
    let mut out = a.data.clone();
    for row in out.chunks_mut(w) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor { shape: a.shape.clone(), data: out }
}

pub(crate) fn softmax_last(a: &Tensor) -> Tensor {
    let w = *a.shape.last().expect("non-empty shape");
    let mut out = a.data.clone();
    for row in out.chunks_mut(w) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor { shape: a.shape.clone(), data: out }
}

pub(crate) fn gather(a: &Tensor, idx: &[u32], shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != idx.len() {
        return Err(Error::contract("gather index map does not match output shape"));
    }
    let data = idx
        .iter()
        .map(|&i| if i == PAD_INDEX { 0.0 } else { a.data[i as usize] })
        .collect();
    Ok(Tensor { shape: shape.to_vec(), data })
}

pub(crate) fn scatter_add(a: &Tensor, idx: &[u32], shape: &[usize]) -> Result<Tensor> {
    if a.numel() != idx.len() {
        return Err(Error::contract("scatter index map does not match input size"));
    }
    let mut out = vec![0.0; numel(shape)];
    for (&i, &v) in idx.iter().zip(&a.data) {
        if i != PAD_INDEX {
            out[i as usize] += v;
        }
    }
    Ok(Tensor { shape: shape.to_vec(), data: out })
}

/// Pairwise squared euclidean distances between the rows of `a` and `b`.
pub(crate) fn sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[1] {
        return Err(Error::contract(format!("sq_dist shapes {:?} and {:?} do not conform", a.shape, b.shape)));
    }
    let (n, m) = (a.shape[0], b.shape[0]);
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ra = a.row(i);
        for j in 0..m {
            out.push(ra.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum());
        }
    }
    Ok(Tensor { shape: vec![n, m], data: out })
}
