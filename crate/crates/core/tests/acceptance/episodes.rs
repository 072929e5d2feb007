//! Episode balance, disjointness and relabeling over many draws.

use std::collections::HashSet;

use rand::Rng;

use tcbench::dataio::{Dataset, Split, SplitId};
use tcbench::episodes::{sample_episode, test_episode_batch, Episode, EpisodeStream};
use tcbench::rng::rng_for;
use tcbench::Error;

use crate::fixtures::{dataset, rng};

const EPISODES: usize = 10_000;

fn verify(data: &Dataset, split: &Split, ep: &Episode, (n, s, q): (usize, usize, usize)) -> Result<(), String> {
    let fail = |m: &str| Err(format!("episode {}: {m}", ep.id));
    if ep.ways() != n || ep.support.len() != n * s || ep.query.len() != n * q {
        return fail("wrong (N, S, Q) sizes");
    }
    for local in 0..n {
        if ep.support.iter().filter(|p| p.1 == local).count() != s || ep.query.iter().filter(|p| p.1 == local).count() != q {
            return fail("unbalanced class counts");
        }
    }
    let all: Vec<usize> = ep.support.iter().chain(&ep.query).map(|p| p.0).collect();
    if all.iter().collect::<HashSet<_>>().len() != all.len() {
        return fail("support and query overlap or repeat");
    }
    let classes: HashSet<usize> = ep.classes.iter().copied().collect();
    if classes.len() != n || !ep.classes.iter().all(|c| split.classes.contains(c)) {
        return fail("classes are not n distinct split classes");
    }
    for &(idx, local) in ep.support.iter().chain(&ep.query) {
        if local >= n || data.label(idx) != ep.classes[local] || ep.local_label(data.label(idx)) != Some(local) {
            return fail("relabeling is not a bijection onto 0..N");
        }
        if !split.indices.contains(&idx) {
            return fail("sample outside the split");
        }
    }
    Ok(())
}

pub fn check() -> Result<String, String> {
    let mut r = rng(4);
    let mut checked = 0;
    let mut geometries = HashSet::new();
    while checked < EPISODES {
        let classes = r.gen_range(2..=9);
        let counts: Vec<usize> = (0..classes).map(|_| r.gen_range(6..=25)).collect();
        let data = dataset(&counts, 2, 2, r.gen());
        let mut chosen: Vec<usize> = (0..classes).filter(|_| r.gen_bool(0.8)).collect();
        if chosen.len() < 2 {
            chosen = vec![0, 1];
        }
        let split = Split::of_classes(&data, &chosen);
        let n = r.gen_range(1..=chosen.len());
        let s = r.gen_range(1..=4);
        let q = r.gen_range(1..=2);
        geometries.insert((n, s, q));
        let batch = test_episode_batch(&data, &split, SplitId::Test, (n, s, q), 200, r.gen()).map_err(|e| e.to_string())?;
        for ep in &batch {
            verify(&data, &split, ep, (n, s, q))?;
        }
        checked += batch.len();
        let stream = EpisodeStream { epochs: 2, episodes_per_epoch: 25, ways: n, shots: s, queries: q, seed: r.gen() };
        for (_, ep) in stream.iter(&data, &split, SplitId::Train).map_err(|e| e.to_string())? {
            verify(&data, &split, &ep, (n, s, q))?;
            checked += 1;
        }
    }

    // A class short of S + Q samples must be rejected, by every sampler.
    let data = dataset(&[10, 10, 4], 2, 2, 9);
    let split = Split::of_classes(&data, &[0, 1, 2]);
    let mut rr = rng_for(0, &[1]);
    let single = sample_episode(&data, &split, SplitId::Test, (2, 3, 2), &mut rr);
    let batch = test_episode_batch(&data, &split, SplitId::Test, (3, 3, 2), 5, 0);
    let stream = EpisodeStream { epochs: 1, episodes_per_epoch: 3, ways: 2, shots: 4, queries: 1, seed: 0 };
    let streamed = stream.iter(&data, &split, SplitId::Train).map(|_| ());
    let too_many_ways = test_episode_batch(&data, &split, SplitId::Test, (4, 1, 1), 1, 0);
    let rejected = [single.err(), batch.err(), streamed.err(), too_many_ways.err()];
    if !rejected.iter().all(|e| matches!(e, Some(Error::Episode(_)))) {
        return Err(format!("insufficient classes were not all rejected: {rejected:?}"));
    }
    Ok(format!("{checked} episodes over {} geometries balanced, disjoint, bijective; 4 insufficient requests rejected", geometries.len()))
}
