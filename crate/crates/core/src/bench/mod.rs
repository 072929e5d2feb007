//! Metrics, experiment orchestration, result records and reports.

pub mod cli;
mod config;
mod metrics;
pub mod pipeline;
mod records;
mod report;
mod scenarios;
mod sweeps;

pub use config::{DatasetSource, ExperimentConfig, PartitionCounts, ScenarioConfig};
pub use metrics::{balanced_accuracy, balanced_accuracy_of, mean_ci95, ConfusionMatrix};
pub use records::{read_records, sort_records, ResultsLog, RunRecord};
pub use report::{report, shots_table, size_table, ways_heatmap, Format, Table, CI_NOTE};
pub use scenarios::{class_selections, run_scenarios_abc, stratified_folds, ScenarioInputs, ScenarioModel, UNIT_STRIDE};
pub use sweeps::{eval_episodes, forest_reference, sweep_shots, sweep_ways, EpisodeSweep};
