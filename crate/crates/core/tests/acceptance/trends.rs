//! Qualitative trends on separable synthetic traffic, averaged over seeds.

use std::path::PathBuf;

use tcbench::bench::pipeline::{run_scenarios, run_sweep_shots};
use tcbench::bench::{ExperimentConfig, RunRecord};

const SLACK: f64 = 0.01;

fn config() -> Result<ExperimentConfig, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth_trend.toml");
    ExperimentConfig::load(&path).map_err(|e| e.to_string())
}

fn mean(records: &[RunRecord], keep: impl Fn(&RunRecord) -> bool) -> Result<f64, String> {
    let v: Vec<f64> = records.iter().filter(|r| keep(r)).map(|r| r.balanced_accuracy).collect();
    if v.is_empty() {
        return Err("no records for a compared cell".into());
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn check() -> Result<String, String> {
    let cfg = config()?;
    if cfg.seeds.len() < 3 {
        return Err("fewer than 3 seeds configured".into());
    }
    let shots = run_sweep_shots(&cfg).map_err(|e| e.to_string())?;
    let scen = run_scenarios(&cfg).map_err(|e| e.to_string())?;

    let nn = |s: usize| mean(&shots, |r| r.method == "baseline_nn" && r.shots == s);
    let (b5, b15, b50) = (nn(5)?, nn(15)?, nn(50)?);
    let ok_i = b15 >= b5 - SLACK && b50 >= b15 - SLACK;

    let simclr = mean(&shots, |r| r.method == "simclr" && r.shots == 200)?;
    let supcon = mean(&shots, |r| r.method == "supcon" && r.shots == 200)?;
    let ok_ii = supcon >= simclr;

    let cell = |m: &str, s: &str| mean(&scen, |r| r.method == m && r.scenario == s);
    let (rf_c, cnn_c) = (cell("rf_unbounded", "c")?, cell("monolithic", "c")?);
    let ok_iii = rf_c >= cnn_c;

    let mut iv = Vec::new();
    let mut ok_iv = true;
    for m in ["monolithic", "rf_unbounded"] {
        let (a, b) = (cell(m, "a")?, cell(m, "b")?);
        ok_iv &= b <= a;
        iv.push(format!("{m} b {b:.4} <= a {a:.4}"));
    }

    let verdict = |ok: bool| if ok { "ok" } else { "VIOLATED" };
    let detail = format!(
        "(i) baseline_nn S=5/15/50: {b5:.4}/{b15:.4}/{b50:.4} {}; (ii) supcon {supcon:.4} >= simclr {simclr:.4} {}; (iii) rf c {rf_c:.4} >= cnn c {cnn_c:.4} {}; (iv) {} {}; {} seeds",
        verdict(ok_i),
        verdict(ok_ii),
        verdict(ok_iii),
        iv.join(", "),
        verdict(ok_iv),
        cfg.seeds.len()
    );
    if ok_i && ok_ii && ok_iii && ok_iv {
        Ok(detail)
    } else {
        Err(detail)
    }
}
