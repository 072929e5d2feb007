use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One evaluation outcome: an episode, a fold, or a fold restricted to a
/// class selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    /// Digest of every field except `record_id` and `wall_clock_seconds`.
    pub record_id: String,
    pub method: String,
    /// `a`, `b`, `c`, `shots`, `ways` or `episodes`.
    pub scenario: String,
    pub dataset_id: String,
    pub seed: u64,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    /// Train ways of the source model (way sweep only).
    pub train_ways: Option<usize>,
    /// Episode id, or `fold * 1_000_000 + selection` for scenario runs.
    pub unit_id: u64,
    pub balanced_accuracy: f64,
    pub trunk_params: Option<usize>,
    pub head_params: Option<usize>,
    pub forest_nodes: Option<usize>,
    pub forest_avg_depth: Option<f64>,
    pub config_hash: String,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    /// Record with an empty id; call [`RunRecord::seal`] once all fields are set.
    pub fn new(method: &str, scenario: &str, dataset_id: &str, seed: u64, config_hash: &str) -> Self {
        RunRecord {
            record_id: String::new(),
            method: method.to_string(),
            scenario: scenario.to_string(),
            dataset_id: dataset_id.to_string(),
            seed,
            ways: 0,
            shots: 0,
            queries: 0,
            train_ways: None,
            unit_id: 0,
            balanced_accuracy: 0.0,
            trunk_params: None,
            head_params: None,
            forest_nodes: None,
            forest_avg_depth: None,
            config_hash: config_hash.to_string(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn key(&self) -> String {
        let mut keyed = self.clone();
        keyed.record_id = String::new();
        keyed.wall_clock_seconds = 0.0;
        let digest = Sha256::digest(serde_json::to_vec(&keyed).expect("records serialize"));
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }

    pub fn seal(mut self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.balanced_accuracy) {
            return Err(Error::Numeric {
                op: "balanced_accuracy",
                detail: format!("{} outside [0,1] for {}", self.balanced_accuracy, self.method),
            });
        }
        self.record_id = self.key();
        Ok(self)
    }
}

/// Deterministic order: by scenario, method, train ways, ways, shots, seed, unit.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (&a.scenario, &a.method, a.train_ways, a.ways, a.shots, a.seed, a.unit_id, &a.record_id).cmp(&(
            &b.scenario,
            &b.method,
            b.train_ways,
            b.ways,
            b.shots,
            b.seed,
            b.unit_id,
            &b.record_id,
        ))
    });
}

/// Append-only JSON-lines sink.
pub struct ResultsLog {
    path: PathBuf,
}

impl ResultsLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ResultsLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, records: &[RunRecord]) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(&self.path)?);
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(&self) -> Result<Vec<RunRecord>> {
        read_records(&self.path)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i as u64 + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_ignore_wall_clock() {
        let mut a = RunRecord::new("baseline_nn", "shots", "synth", 1, "h");
        a.balanced_accuracy = 0.5;
        let mut b = a.clone();
        b.wall_clock_seconds = 3.0;
        assert_eq!(a.clone().seal().unwrap().record_id, b.seal().unwrap().record_id);
        a.balanced_accuracy = 1.5;
        assert!(a.seal().is_err());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = ResultsLog::new(dir.path().join("r.jsonl"));
        let r = RunRecord::new("rf", "c", "d", 0, "h").seal().unwrap();
        log.append(std::slice::from_ref(&r)).unwrap();
        log.append(std::slice::from_ref(&r)).unwrap();
        assert_eq!(log.read().unwrap(), vec![r.clone(), r]);
    }
}
