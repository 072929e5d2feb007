//! Second-order meta-gradients against finite differences of the full
//! adapt-then-evaluate objective, plus the scalar closed form.

use rand::Rng;

use tcbench::nets::{Encoder, HeadKind, HeadSpec};
use tcbench::numerics::{higher_order_grad, Tape, Tensor};
use tcbench::trainers::maml_outer_grad;

use crate::fixtures::{max_rel_err, random_tensor, rng, tiny_spec};

const TOL: f64 = 1e-3;
const H: f64 = 1e-6;

/// Scalar model `w`, inner step `w' = w - 0.5 * d/dw (w*xs - ys)^2`, outer loss `(w'*xq - yq)^2`.
fn scalar_example() -> Result<String, String> {
    let tape = Tape::new();
    let w = tape.param(Tensor::scalar(0.0));
    let (xs, ys, xq, yq) = (1.0, 1.0, 1.0, 1.0);
    let mut adapted = 0.0;
    let mut outer = f64::NAN;
    let g = higher_order_grad(&tape, &[w], |p| {
        let inner = p[0].scale(xs)?.add_scalar(-ys)?.square()?.sum()?;
        let gw = tape.grad(&inner, p, true)?;
        let w1 = p[0].sub(&gw[0].scale(0.5)?)?;
        adapted = w1.value().data()[0];
        let l = w1.scale(xq)?.add_scalar(-yq)?.square()?.sum()?;
        outer = l.item();
        Ok(l)
    })
    .map_err(|e| e.to_string())?;
    let gv = g[0].data()[0];
    if adapted == 1.0 && outer == 0.0 && gv == 0.0 {
        Ok(format!("scalar example w'={adapted}, loss={outer}, grad={gv}"))
    } else {
        Err(format!("scalar example gave w'={adapted}, loss={outer}, grad={gv}"))
    }
}

/// One tiny episodic problem; returns (max rel err, entries, first-order gap).
fn tiny_case(seed: u64) -> Result<(f64, usize, f64), String> {
    let (packets, features, ways, shots, queries) = (3, 2, 2, 2, 2);
    let spec = tiny_spec(packets, features);
    let enc = Encoder::init(spec.clone(), seed).map_err(|e| e.to_string())?;
    let head = HeadSpec::new(HeadKind::Linear, ways).init(enc.latent(), seed + 7).map_err(|e| e.to_string())?;
    let params: Vec<Tensor> = enc.params.iter().cloned().chain(head).collect();
    let mut r = rng(seed);
    let xs = random_tensor(&[ways * shots, packets, features], &mut r);
    let xq = random_tensor(&[ways * queries, packets, features], &mut r);
    let ys: Vec<usize> = (0..ways * shots).map(|i| i % ways).collect();
    let yq: Vec<usize> = (0..ways * queries).map(|i| i % ways).collect();
    let steps = 2;
    let inner_lr = r.gen_range(0.2..0.6);
    let objective = |p: &[Tensor]| -> Result<f64, String> {
        maml_outer_grad(&spec, p, &enc.running, &xs, &ys, &xq, &yq, steps, inner_lr).map(|v| v.0).map_err(|e| e.to_string())
    };
    let (_, grads) = maml_outer_grad(&spec, &params, &enc.running, &xs, &ys, &xq, &yq, steps, inner_lr).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let mut numeric = Vec::new();
    for k in 0..params.len() {
        for j in 0..params[k].numel() {
            let mut plus = params.clone();
            plus[k].data_mut()[j] += H;
            let mut minus = params.clone();
            minus[k].data_mut()[j] -= H;
            numeric.push((objective(&plus)? - objective(&minus)?) / (2.0 * H));
        }
    }
    // A first-order surrogate (inner gradients treated as constants) must differ,
    // otherwise the comparison would not exercise the second-order terms.
    let first_order = first_order_grad(&spec, &params, &enc.running, &xs, &ys, &xq, &yq, steps, inner_lr)?;
    let gap = max_rel_err(&first_order, &numeric, 1e-6);
    Ok((max_rel_err(&analytic, &numeric, 1e-6), analytic.len(), gap))
}

#[allow(clippy::too_many_arguments)]
fn first_order_grad(
    spec: &tcbench::nets::EncoderSpec,
    params: &[Tensor],
    running: &[tcbench::nets::RunningStats],
    xs: &Tensor,
    ys: &[usize],
    xq: &Tensor,
    yq: &[usize],
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>, String> {
    let run = || -> tcbench::Result<Vec<f64>> {
        let tape = Tape::new();
        let theta: Vec<_> = params.iter().map(|t| tape.param(t.clone())).collect();
        let (xs, xq) = (tape.constant(xs.clone()), tape.constant(xq.clone()));
        let n = theta.len() - 2;
        let mut fast = theta.clone();
        for _ in 0..steps {
            let (z, _) = spec.forward(&fast[..n], running, &xs, true)?;
            let loss = z.matmul(&fast[n])?.add(&fast[n + 1])?.cross_entropy(ys)?;
            let g = tape.grad(&loss, &fast, false)?;
            fast = fast.iter().zip(&g).map(|(f, g)| f.sub(&g.detach().scale(lr)?)).collect::<tcbench::Result<_>>()?;
        }
        let (z, _) = spec.forward(&fast[..n], running, &xq, true)?;
        let loss = z.matmul(&fast[n])?.add(&fast[n + 1])?.cross_entropy(yq)?;
        let g = tape.grad(&loss, &theta, false)?;
        Ok(g.iter().flat_map(|g| g.value().data().to_vec()).collect())
    };
    run().map_err(|e| e.to_string())
}

pub fn check() -> Result<String, String> {
    let scalar = scalar_example()?;
    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut min_gap = f64::INFINITY;
    for seed in 0..3 {
        let (err, n, gap) = tiny_case(seed)?;
        worst = worst.max(err);
        entries += n;
        min_gap = min_gap.min(gap);
    }
    let detail = format!("3 tiny nets, {entries} entries, max rel err {worst:.2e}, first-order gap {min_gap:.2e}; {scalar}");
    if worst < TOL && min_gap > TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}
