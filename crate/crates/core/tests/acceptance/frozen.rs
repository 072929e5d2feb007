//! Downstream adaptation never writes to the source trunk.

use tcbench::dataio::{Split, SplitId};
use tcbench::episodes::test_episode_batch;
use tcbench::nets::HeadKind;
use tcbench::trainers::{evaluate_episode, finetune_episode, transfer_plain, EmbeddingCache, Method, SourceModel, TargetTask, TrainConfig};

use crate::fixtures::{dataset, source, tiny_spec};

fn fingerprint(m: &SourceModel) -> Vec<u64> {
    let enc = &m.encoder;
    enc.params
        .iter()
        .chain(enc.running.iter().flat_map(|r| [&r.mean, &r.var]))
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

pub fn check() -> Result<String, String> {
    let data = dataset(&[30, 30, 30, 30, 30, 30], 4, 2, 6);
    let test = Split::of_classes(&data, &[2, 3, 4, 5]);
    let episodes = test_episode_batch(&data, &test, SplitId::Test, (3, 5, 4), 3, 1).map_err(|e| e.to_string())?;
    let model = source(tiny_spec(4, 2), 2, 11);
    let before = fingerprint(&model);
    let cfg = TrainConfig { finetune_steps: 20, transfer_epochs: 5, maml_inner_steps: 2, ..TrainConfig::default() };
    let err = |e: tcbench::Error| e.to_string();
    let mut runs = 0;
    for ep in &episodes {
        for head in [HeadKind::Linear, HeadKind::ClassEmbedding, HeadKind::Logistic, HeadKind::NearestNeighbor, HeadKind::Prototype] {
            finetune_episode(&model, &data, ep, head, &cfg).map_err(err)?;
            runs += 1;
        }
        for head in [HeadKind::Linear, HeadKind::ClassEmbedding] {
            transfer_plain(&model, &data, &TargetTask::from(ep), head, &cfg).map_err(err)?;
            runs += 1;
        }
        let cache = EmbeddingCache::build(&model, &data, &test.indices).map_err(err)?;
        for m in [Method::Baseline, Method::BaselineTl, Method::BaselineLr, Method::Maml] {
            evaluate_episode(m, &model, &cache, &data, ep, &cfg).map_err(err)?;
            runs += 1;
        }
    }
    if fingerprint(&model) == before {
        Ok(format!("{runs} adaptation runs, {} trunk values bit-identical", before.len()))
    } else {
        Err("trunk parameters changed".into())
    }
}
