use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{load_dataset, partition_by_popularity, read_meta, synth_generate, ClassPartition, Dataset, Profile, SynthConfig};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::nets::{EncoderSpec, Variant};
use crate::trainers::{Method, TrainConfig};

/// Where samples come from: a CSV file (with optional metadata sidecar) or
/// the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    File { path: PathBuf, packets: usize, features: usize },
    Synth(SynthConfig),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synth(cfg) => synth_generate(cfg),
            DatasetSource::File { path, packets, features } => {
                let profile = match read_meta(path)? {
                    Some(m) => Profile { packets: m.packets, features: m.features, feature_names: m.feature_names },
                    None => Profile::new(*packets, *features)?,
                };
                load_dataset(path, &profile)
            }
        }
    }

    /// Stable identifier written into every record.
    pub fn id(&self) -> String {
        match self {
            DatasetSource::File { path, .. } => path.display().to_string(),
            DatasetSource::Synth(cfg) => format!("synth-{}", crate::trainers::config_hash(cfg)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub folds: usize,
    /// Random class selections per fold (scenario b) or per run (scenario c).
    pub selections: usize,
    /// Classes per selection.
    pub target_classes: usize,
    /// Forest depth bounds to compare; `0` stands for unbounded.
    pub forest_depths: Vec<usize>,
    /// Include the CNN classifier.
    pub cnn: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig { folds: 5, selections: 30, target_classes: 4, forest_depths: vec![0, 10, 30], cnn: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub partition: PartitionCounts,
    pub methods: Vec<String>,
    pub encoder: Variant,
    pub shots: Vec<usize>,
    pub ways: usize,
    pub queries: usize,
    pub train_ways: Vec<usize>,
    pub test_ways: Vec<usize>,
    /// Shots used by the way sweep.
    pub way_sweep_shots: usize,
    pub test_episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub scenarios: ScenarioConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synth(SynthConfig::default()),
            partition: PartitionCounts { train: 24, val: 0, test: 8 },
            methods: vec!["baseline_nn".into(), "protonet".into()],
            encoder: Variant::Cnn2,
            shots: vec![5, 15, 50, 100, 200],
            ways: 4,
            queries: 15,
            train_ways: vec![2, 4, 8],
            test_ways: vec![2, 4, 8],
            way_sweep_shots: 200,
            test_episodes: 1000,
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("results"),
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            scenarios: ScenarioConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn method_list(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, n: usize| if n == 0 { Err(Error::config(format!("`{name}` must not be empty"))) } else { Ok(()) };
        empty("methods", self.methods.len())?;
        empty("shots", self.shots.len())?;
        empty("train_ways", self.train_ways.len())?;
        empty("test_ways", self.test_ways.len())?;
        empty("seeds", self.seeds.len())?;
        self.method_list()?;
        if self.shots.contains(&0) || self.queries == 0 || self.ways < 2 {
            return Err(Error::config("episodes need at least 2 ways, 1 shot and 1 query"));
        }
        if self.train_ways.iter().chain(&self.test_ways).any(|&w| w < 2) {
            return Err(Error::config("way grids need values of at least 2"));
        }
        if self.scenarios.folds < 2 || self.scenarios.target_classes < 2 {
            return Err(Error::config("scenarios need at least 2 folds and 2 target classes"));
        }
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate()?;
        }
        self.train.validate()?;
        self.forest.validate()
    }

    pub fn encoder_spec(&self, profile: &Profile) -> EncoderSpec {
        EncoderSpec::new(self.encoder, profile)
    }

    pub fn load_partitioned(&self) -> Result<(Dataset, ClassPartition)> {
        let data = self.dataset.load()?;
        let p = self.partition;
        let part = partition_by_popularity(&data, p.train, p.val, p.test)?;
        Ok((data, part))
    }
}
