//! Random mixed-op graphs: reverse-mode gradients against central differences.

use rand::Rng;

use tcbench::numerics::{batch_norm_train, conv2d, Tape, Tensor, Var};
use tcbench::Result;

use crate::fixtures::{max_rel_err, random_tensor, rng};

const R: usize = 3;
const C: usize = 4;
const GRAPHS: u64 = 120;
const STEPS: usize = 6;
const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Relative-error denominator floor, above central-difference roundoff (eps * |f| / H).
const FLOOR: f64 = 1e-6;

/// Leaves: three `[R, C]` matrices, BN gamma/beta `[C]`, conv weight `[6, 1]`, conv bias `[1]`.
fn leaf_shapes() -> Vec<Vec<usize>> {
    vec![vec![R, C], vec![R, C], vec![R, C], vec![C], vec![C], vec![6, 1], vec![1]]
}

#[derive(Clone, Debug)]
struct Step {
    op: u32,
    a: usize,
    b: usize,
    c: usize,
}

#[derive(Clone, Debug)]
struct Program {
    steps: Vec<Step>,
    loss: u32,
    weights: Tensor,
    labels: Vec<usize>,
    perm: Vec<usize>,
}

const OPS: u32 = 21;

fn program(seed: u64) -> Program {
    let mut r = rng(seed);
    let mut steps = Vec::new();
    for k in 0..STEPS {
        let pool = 3 + k;
        steps.push(Step { op: r.gen_range(0..OPS), a: r.gen_range(0..pool), b: r.gen_range(0..pool), c: r.gen_range(0..pool) });
    }
    let mut perm: Vec<usize> = (0..R).collect();
    perm.rotate_left(r.gen_range(0..R));
    Program {
        steps,
        loss: r.gen_range(0..4),
        weights: random_tensor(&[R, C], &mut r),
        labels: (0..R).map(|_| r.gen_range(0..C)).collect(),
        perm,
    }
}

fn apply(tape: &Tape, s: &Step, pool: &[Var], leaves: &[Var], p: &Program) -> Result<Var> {
    let (a, b, c) = (&pool[s.a], &pool[s.b], &pool[s.c]);
    match s.op {
        0 => a.add(b),
        1 => a.sub(b),
        2 => a.mul(b),
        3 => a.div(&b.square()?.add_scalar(1.0)?),
        4 => a.scale(0.5)?.exp(),
        5 => a.square()?.add_scalar(1.0)?.ln(),
        6 => a.square()?.add_scalar(1.0)?.sqrt(),
        7 => a.sigmoid(),
        8 => a.softmax(),
        9 => a.log_softmax(),
        10 => a.add_scalar(0.3)?.l2_normalize(),
        11 => a.matmul(&b.t()?)?.matmul(c)?.scale(0.3),
        12 => Ok(batch_norm_train(&a.add(&b.scale(0.5)?)?, &leaves[3], &leaves[4], 1e-3)?.0),
        13 => conv2d(&a.reshape(&[1, R, C, 1])?, &leaves[5], &leaves[6], (3, 2))?.reshape(&[R, C]),
        14 => a.sum_axis(0)?.broadcast_to(&[R, C])?.mul(b),
        15 => a.mean_axis(1)?.broadcast_to(&[R, C])?.sub(b),
        16 => Var::concat(&[a.clone(), b.clone()], 1)?.narrow(1, 2, C),
        17 => a.select_rows(&p.perm)?.add(&tape.scalar(0.1).broadcast_to(&[R, C])?),
        18 => a.add_scalar(0.2)?.cosine_similarity(&b.add_scalar(-0.1)?)?.matmul(c),
        19 => a.add_scalar(0.05)?.relu()?.add(b),
        _ => a.sq_dist(b)?.scale(0.2)?.matmul(c),
    }
}

fn evaluate(p: &Program, tape: &Tape, leaves: &[Var]) -> Result<Var> {
    let mut pool: Vec<Var> = leaves[..3].to_vec();
    for s in &p.steps {
        let v = apply(tape, s, &pool, leaves, p)?;
        pool.push(v);
    }
    let out = pool.last().expect("non-empty pool");
    match p.loss {
        0 => out.mul(&tape.constant(p.weights.clone()))?.sum(),
        1 => out.cross_entropy(&p.labels),
        2 => out.mse(&pool[1]),
        _ => out.square()?.mean(),
    }
}

fn loss_at(p: &Program, values: &[Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let leaves: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
    Ok(evaluate(p, &tape, &leaves)?.item())
}

/// Max relative error of one graph and the number of checked entries.
fn check_graph(seed: u64) -> Result<(f64, usize)> {
    let p = program(seed);
    let mut r = rng(seed ^ 0x5eed);
    let values: Vec<Tensor> = leaf_shapes().iter().map(|s| random_tensor(s, &mut r)).collect();
    let tape = Tape::new();
    let leaves: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
    let loss = evaluate(&p, &tape, &leaves)?;
    let grads = tape.backward(&loss)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, leaf) in leaves.iter().enumerate() {
        analytic.extend_from_slice(grads.get_or_zero(leaf).data());
        for j in 0..values[k].numel() {
            let mut plus = values.clone();
            plus[k].data_mut()[j] += H;
            let mut minus = values.clone();
            minus[k].data_mut()[j] -= H;
            numeric.push((loss_at(&p, &plus)? - loss_at(&p, &minus)?) / (2.0 * H));
        }
    }
    Ok((max_rel_err(&analytic, &numeric, FLOOR), analytic.len()))
}

pub fn check() -> Result<String, String> {
    let mut worst = (0.0f64, 0u64);
    let mut entries = 0;
    let mut ops_seen = [false; OPS as usize];
    for seed in 0..GRAPHS {
        program(seed).steps.iter().for_each(|s| ops_seen[s.op as usize] = true);
        let (err, n) = check_graph(seed).map_err(|e| format!("graph {seed}: {e}"))?;
        entries += n;
        if err > worst.0 {
            worst = (err, seed);
        }
    }
    let detail = format!(
        "{GRAPHS} graphs, {entries} entries, {} of {OPS} op kinds, max rel err {:.2e} (graph {})",
        ops_seen.iter().filter(|s| **s).count(),
        worst.0,
        worst.1
    );
    if worst.0 < TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}
