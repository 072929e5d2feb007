use rand::Rng;

use tcbench::forest::{fit_forest, forest_predict, forest_stats, ForestConfig, Node, Tree};

use crate::fixtures::rng;

fn walk(nodes: &[Node], i: usize, depth: usize, seen: &mut usize) -> usize {
    *seen += 1;
    match &nodes[i] {
        Node::Leaf { .. } => depth,
        Node::Split { left, right, .. } => walk(nodes, *left, depth + 1, seen).max(walk(nodes, *right, depth + 1, seen)),
    }
}

/// (reachable nodes, depth) by traversal from the root.
fn traverse(t: &Tree) -> (usize, usize) {
    let mut seen = 0;
    let d = walk(&t.nodes, 0, 0, &mut seen);
    (seen, d)
}

/// Distinct points on a grid, labelled by a nonlinear rule: no conflicts.
fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut x: Vec<Vec<f64>> = Vec::new();
    while x.len() < n {
        let p: Vec<f64> = (0..6).map(|_| r.gen_range(0..50) as f64 / 7.0).collect();
        if !x.contains(&p) {
            x.push(p);
        }
    }
    let y = x.iter().map(|p| ((p[0] * p[1]).sin() + p[2] - p[3] * 0.5).to_bits() as usize % 5).collect();
    (x, y)
}

pub fn check() -> Result<String, String> {
    let (x, y) = data(600, 10);
    let mut notes = Vec::new();
    for (max_depth, seed) in [(Some(10), 1), (Some(30), 2), (None, 3)] {
        let cfg = ForestConfig { n_estimators: 40, max_depth, seed, ..ForestConfig::default() };
        let f = fit_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let (nodes, depth) = forest_stats(&f);
        let mut count = 0;
        let mut depth_sum = 0.0;
        let mut deepest = 0;
        for t in &f.trees {
            let (n, d) = traverse(t);
            count += n;
            depth_sum += d as f64;
            deepest = deepest.max(d);
        }
        if count != nodes || (depth_sum / f.trees.len() as f64 - depth).abs() > 1e-12 {
            return Err(format!("forest_stats ({nodes}, {depth}) disagrees with traversal ({count}, {})", depth_sum / f.trees.len() as f64));
        }
        if let Some(m) = max_depth {
            if deepest > m {
                return Err(format!("tree of depth {deepest} exceeds max_depth {m}"));
            }
        } else {
            let correct = x.iter().zip(&y).filter(|(p, t)| forest_predict(&f, p) == **t).count();
            if correct != x.len() {
                return Err(format!("unbounded forest fits {correct}/{} training points", x.len()));
            }
        }
        notes.push(format!("{}: depth<={deepest}", max_depth.map_or("unbounded".into(), |m| m.to_string())));
    }
    Ok(format!("{}; unbounded forest 100% on 600 training points; stats match traversal", notes.join(", ")))
}
