//! Contrastive losses against a naive per-anchor evaluation.

use rand::Rng;

use tcbench::numerics::{Tape, Tensor};
use tcbench::trainers::{simclr_loss, supcon_loss};

use crate::fixtures::{random_tensor, rng};

const TOL: f64 = 1e-6;

fn naive(z: &Tensor, labels: &[usize], tau: f64) -> f64 {
    let n = z.rows();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = z.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / norm).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += sim(i, j).exp();
            }
        }
        let mut acc = 0.0;
        let mut count = 0;
        for p in 0..n {
            if p != i && labels[p] == labels[i] {
                acc += (sim(i, p).exp() / denom).ln();
                count += 1;
            }
        }
        if count > 0 {
            total += -acc / count as f64;
            anchors += 1;
        }
    }
    total / anchors as f64
}

fn loss_simclr(z: &Tensor, tau: f64) -> Result<f64, String> {
    let tape = Tape::new();
    simclr_loss(&tape.param(z.clone()), tau).map(|v| v.item()).map_err(|e| e.to_string())
}

fn loss_supcon(z: &Tensor, labels: &[usize], tau: f64) -> Result<f64, String> {
    let tape = Tape::new();
    supcon_loss(&tape.param(z.clone()), labels, tau).map(|v| v.item()).map_err(|e| e.to_string())
}

pub fn check() -> Result<String, String> {
    let mut r = rng(3);
    let (mut err_simclr, mut err_supcon, mut err_reduce) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let b = r.gen_range(1..=16);
        let d = r.gen_range(2..=8);
        // Temperatures low enough to matter but with exp(1/tau) well inside f64 range.
        let tau = r.gen_range(0.1..1.0);
        let z = random_tensor(&[2 * b, d], &mut r);
        let pairs: Vec<usize> = (0..2 * b).map(|i| i % b).collect();
        let classes = r.gen_range(1..=b.max(1));
        let mut labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..classes)).collect();
        labels.extend(labels.clone());

        let s = loss_simclr(&z, tau)?;
        err_simclr = err_simclr.max((s - naive(&z, &pairs, tau)).abs());
        let sc = loss_supcon(&z, &labels, tau)?;
        err_supcon = err_supcon.max((sc - naive(&z, &labels, tau)).abs());
        err_reduce = err_reduce.max((loss_supcon(&z, &pairs, tau)? - s).abs());
    }
    let mut err_ln = 0.0f64;
    for b in [1usize, 2, 5, 16] {
        let z = Tensor::new(vec![2 * b, 3], [0.3, -1.2, 0.5].repeat(2 * b)).unwrap();
        let expected = ((2 * b - 1) as f64).ln();
        err_ln = err_ln.max((loss_simclr(&z, 0.1)? - expected).abs());
    }
    let detail = format!(
        "100 batches: simclr err {err_simclr:.1e}, supcon err {err_supcon:.1e}, single-positive reduction err {err_reduce:.1e}, identical views vs ln(2B-1) err {err_ln:.1e}"
    );
    if err_simclr < TOL && err_supcon < TOL && err_reduce < TOL && err_ln < TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}
