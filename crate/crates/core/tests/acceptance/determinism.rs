//! Every CLI command, run twice from scratch, must log identical records.

use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
methods = ["baseline_nn", "baseline_lr", "protonet", "relationnet", "maml", "rfs_distill_nn", "simclr", "supcon_classemb"]
encoder = "cnn2"
shots = [2, 5]
ways = 3
queries = 3
train_ways = [2, 3]
test_ways = [2, 3]
way_sweep_shots = 5
test_episodes = 4
seeds = [0, 1]
output_dir = "OUT"

[dataset.file]
path = "DATA"
packets = 4
features = 2

[partition]
train = 5
val = 2
test = 3

[train]
epochs = 1
batch_size = 32
episodes_per_epoch = 3
train_ways = 2
train_shots = 2
train_queries = 2
val_episodes = 2
maml_inner_steps = 1
finetune_steps = 5
transfer_epochs = 2

[forest]
n_estimators = 10

[scenarios]
folds = 2
selections = 2
target_classes = 3
forest_depths = [0, 4]
cnn = true
"#;

fn tcbench(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tcbench")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("tcbench {args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Record lines with the wall-clock field removed.
fn stripped(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            v.as_object_mut().ok_or("record is not an object")?.remove("wall_clock_seconds");
            Ok(v.to_string())
        })
        .collect()
}

/// All paths are relative to `dir`, so record contents cannot depend on it.
fn one_run(dir: &Path) -> Result<(Vec<String>, Vec<Vec<u8>>), String> {
    std::fs::write(dir.join("exp.toml"), CONFIG.replace("OUT", "out").replace("DATA", "flows.csv")).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| tcbench(dir, args);
    run(&[
        "gen-data", "--classes", "10", "--max-per-class", "40", "--rho", "2", "--sep", "5", "--packets", "4", "--features", "2",
        "--seed", "5", "--out", "flows.csv",
    ])?;
    run(&["partition", "--data", "flows.csv", "--packets", "4", "--features", "2", "--train", "5", "--val", "2", "--test", "3", "--out", "partition.json"])?;
    run(&["train", "--method", "protonet", "--config", "exp.toml", "--out", "protonet.json", "--seed", "3"])?;
    run(&[
        "eval-episodes", "--model", "protonet.json", "--config", "exp.toml", "--method", "protonet", "--ways", "3", "--shots", "2", "--queries",
        "3", "--episodes", "5", "--seed", "4",
    ])?;
    run(&["sweep-shots", "--config", "exp.toml"])?;
    run(&["sweep-ways", "--config", "exp.toml", "--method", "baseline_nn"])?;
    run(&["scenarios-abc", "--config", "exp.toml"])?;
    run(&["report", "--results", "out/results.jsonl", "--format", "markdown", "--out", "report"])?;
    let mut artifacts = Vec::new();
    for name in ["flows.csv", "partition.json", "protonet.json", "report/shots.md", "report/ways.md", "report/sizes.md", "report/provenance.json"] {
        artifacts.push(std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?);
    }
    Ok((stripped(&dir.join("out/results.jsonl"))?, artifacts))
}

pub fn check() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ra, fa) = one_run(a.path())?;
    let (rb, fb) = one_run(b.path())?;
    if ra.is_empty() {
        return Err("no records were written".into());
    }
    if ra != rb {
        let first = ra.iter().zip(&rb).position(|(x, y)| x != y).unwrap_or(ra.len().min(rb.len()));
        return Err(format!("{} vs {} records; first difference at line {first}", ra.len(), rb.len()));
    }
    if fa != fb {
        return Err("dataset, partition, checkpoint or report bytes differ between runs".into());
    }
    Ok(format!("8 commands twice: {} records identical excluding wall clock; data, checkpoint and reports byte-identical", ra.len()))
}
