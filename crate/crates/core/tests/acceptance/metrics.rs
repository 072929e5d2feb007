//! Balanced accuracy against mean per-class recall, and the interval formula.

use rand::seq::SliceRandom;
use rand::Rng;

use tcbench::bench::{balanced_accuracy, balanced_accuracy_of, mean_ci95, ConfusionMatrix};

use crate::fixtures::rng;

fn mean_recall(rows: &[Vec<u64>]) -> f64 {
    let recalls: Vec<f64> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().sum::<u64>() > 0)
        .map(|(i, r)| r[i] as f64 / r.iter().sum::<u64>() as f64)
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

pub fn check() -> Result<String, String> {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    let mut worst_perm = 0.0f64;
    for _ in 0..1000 {
        let k = r.gen_range(2..=10);
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == k - 1 && j == 0 { 1 } else { r.gen_range(0..20) }).collect())
            .collect();
        let cm = ConfusionMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let ba = balanced_accuracy(&cm);
        worst = worst.max((ba - mean_recall(&rows)).abs());

        // Relabel classes with a permutation and shuffle the sample order.
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let mut pairs = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                pairs.extend(std::iter::repeat_n((perm[i], perm[j]), n as usize));
            }
        }
        pairs.shuffle(&mut r);
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let permuted = balanced_accuracy_of(&t, &p, k).map_err(|e| e.to_string())?;
        worst_perm = worst_perm.max((permuted - ba).abs());
    }

    let cases: [(&[f64], f64, f64); 3] = [
        (&[0.5, 0.7], 0.6, 0.196),
        (&[1.0, 2.0, 3.0, 4.0], 2.5, 1.96 * (5.0f64 / 3.0).sqrt() / 2.0),
        (&[0.8, 0.8, 0.8], 0.8, 0.0),
    ];
    let mut worst_ci = 0.0f64;
    for (values, mean, half) in cases {
        let (m, h) = mean_ci95(values).map_err(|e| e.to_string())?;
        worst_ci = worst_ci.max((m - mean).abs()).max((h - half).abs());
    }
    let detail = format!("1000 matrices err {worst:.1e}, permutation err {worst_perm:.1e}, interval err {worst_ci:.1e}");
    if worst < 1e-12 && worst_perm < 1e-12 && worst_ci < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
