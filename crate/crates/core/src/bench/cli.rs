use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{DatasetSource, ExperimentConfig};
use super::pipeline::{prepare, run_scenarios, run_sweep_shots, run_sweep_ways, train_sources};
use super::records::{read_records, ResultsLog, RunRecord};
use super::report::{report, Format};
use super::sweeps::{eval_episodes, EpisodeSweep};
use crate::dataio::{normalize_apply, partition_by_popularity, save_dataset, synth_generate, Dataset, FlowSample, SplitId, SynthConfig};
use crate::episodes::test_episode_batch;
use crate::error::{Error, Result};
use crate::trainers::{Method, SourceModel, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "tcbench", version, about = "Few-shot traffic classification workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long, default_value_t = 32)]
        classes: usize,
        #[arg(long, default_value_t = 300)]
        max_per_class: usize,
        #[arg(long, default_value_t = 1.5)]
        rho: f64,
        #[arg(long, default_value_t = 5.0)]
        sep: f64,
        #[arg(long, default_value_t = 10)]
        packets: usize,
        #[arg(long, default_value_t = 4)]
        features: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset's classes by popularity and write the partition as JSON.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        packets: usize,
        #[arg(long, default_value_t = 4)]
        features: usize,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        val: usize,
        #[arg(long)]
        test: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the source model of one method.
    Train {
        #[arg(long)]
        method: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trained model on fresh episodes and append the records.
    EvalEpisodes {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Method used to score the model; defaults to the configured first method.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 4)]
        ways: usize,
        #[arg(long, default_value_t = 5)]
        shots: usize,
        #[arg(long, default_value_t = 15)]
        queries: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    SweepShots {
        #[arg(long)]
        config: PathBuf,
    },
    SweepWays {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "protonet")]
        method: String,
    },
    ScenariosAbc {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a results log into tables.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn log_for(cfg: &ExperimentConfig) -> ResultsLog {
    ResultsLog::new(cfg.output_dir.join("results.jsonl"))
}

fn append(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<()> {
    let log = log_for(cfg);
    log.append(records)?;
    println!("{} records -> {}", records.len(), log.path().display());
    Ok(())
}

fn parse_split(s: &str) -> Result<SplitId> {
    match s {
        "train" => Ok(SplitId::Train),
        "val" => Ok(SplitId::Val),
        "test" => Ok(SplitId::Test),
        other => Err(Error::config(format!("unknown split `{other}`"))),
    }
}

fn renormalize(raw: &Dataset, model: &SourceModel) -> Result<Dataset> {
    let Some(stats) = &model.norm else { return Ok(raw.clone()) };
    let samples = raw
        .samples
        .iter()
        .map(|s| Ok(FlowSample { features: normalize_apply(stats, &s.features)?, ..s.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(raw.profile.clone(), samples, raw.class_ids.clone())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { classes, max_per_class, rho, sep, packets, features, seed, out } => {
            let cfg = SynthConfig {
                n_classes: classes,
                samples_per_class_max: max_per_class,
                imbalance_rho: rho,
                separability: sep,
                packets,
                features,
                seed,
            };
            let data = synth_generate(&cfg)?;
            save_dataset(&data, &out)?;
            println!("{} flows in {} classes -> {}", data.len(), data.num_classes(), out.display());
        }
        Command::Partition { data, packets, features, train, val, test, out } => {
            let raw = DatasetSource::File { path: data, packets, features }.load()?;
            let part = partition_by_popularity(&raw, train, val, test)?;
            std::fs::write(&out, serde_json::to_string_pretty(&part)? + "\n")?;
            println!("train {} / val {} / test {} classes -> {}", part.train.classes.len(), part.val.classes.len(), part.test.classes.len(), out.display());
        }
        Command::Train { method, config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let method: Method = method.parse()?;
            let prep = prepare(&cfg)?;
            let train = TrainConfig { seed: seed.unwrap_or(cfg.train.seed), ..cfg.train.clone() };
            let mut sources = train_sources(&[method], &prep, &cfg, &train)?;
            let model = sources.remove(&method.source()).ok_or_else(|| Error::config(format!("{method} trains no source model")))?;
            model.save(&out)?;
            println!("{method} source ({}) -> {}", model.config_hash, out.display());
        }
        Command::EvalEpisodes { model, config, method, split, ways, shots, queries, episodes, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let source = SourceModel::load(&model)?;
            let method: Method = match method {
                Some(m) => m.parse()?,
                None => cfg.method_list()?[0],
            };
            let (raw, part) = cfg.load_partitioned()?;
            let data = renormalize(&raw, &source)?;
            let sid = parse_split(&split)?;
            let sp = part.split(sid);
            let eps = test_episode_batch(&data, sp, sid, (ways, shots, queries), episodes, seed)?;
            let sweep = EpisodeSweep { ways, queries, episodes, seed, dataset_id: cfg.dataset.id() };
            let train = TrainConfig { seed, ..cfg.train.clone() };
            append(&cfg, &eval_episodes(method, &source, &data, sp, &eps, &train, &sweep)?)?;
        }
        Command::SweepShots { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            append(&cfg, &run_sweep_shots(&cfg)?)?;
        }
        Command::SweepWays { config, method } => {
            let cfg = ExperimentConfig::load(&config)?;
            append(&cfg, &run_sweep_ways(&cfg, method.parse()?)?)?;
        }
        Command::ScenariosAbc { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            append(&cfg, &run_scenarios(&cfg)?)?;
        }
        Command::Report { results, format, out } => {
            let format: Format = format.parse()?;
            let records = if results.exists() { read_records(&results)? } else { Vec::new() };
            for p in report(&records, format, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
