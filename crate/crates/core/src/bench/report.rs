//! Summary tables built from run records: a method-by-shots matrix, a way
//! heatmap and a size/accuracy table, each with a provenance sidecar mapping
//! every cell to the record ids it aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::metrics::mean_ci95;
use super::records::RunRecord;
use crate::error::{Error, Result};

pub const CI_NOTE: &str = "mean ± 1.96·sd/√n over per-episode (sweeps) or per-fold/selection (scenarios) balanced accuracies; sample sd";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Tsv => "tsv",
            Format::Markdown => "md",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(Error::config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Record ids behind each cell, keyed `"row,col"`.
    pub provenance: BTreeMap<String, Vec<String>>,
}

impl Table {
    fn new(name: &str, header: Vec<String>) -> Self {
        Table { name: name.into(), header, ..Default::default() }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv | Format::Tsv => {
                let delim = if format == Format::Csv { b',' } else { b'\t' };
                let mut w = csv::WriterBuilder::new().delimiter(delim).from_writer(Vec::new());
                let err = |e: csv::Error| Error::data(e.to_string());
                w.write_record(&self.header).map_err(err)?;
                for r in &self.rows {
                    w.write_record(r).map_err(err)?;
                }
                let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
                String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
            }
            Format::Markdown => {
                let mut s = String::new();
                let _ = writeln!(s, "| {} |", self.header.join(" | "));
                let _ = writeln!(s, "|{}|", vec!["---"; self.header.len()].join("|"));
                for r in &self.rows {
                    let _ = writeln!(s, "| {} |", r.join(" | "));
                }
                let _ = writeln!(s, "\n_{CI_NOTE}._");
                Ok(s)
            }
        }
    }
}

fn cell(records: &[&RunRecord]) -> Result<(String, Vec<String>)> {
    if records.is_empty() {
        return Ok((String::new(), Vec::new()));
    }
    let accs: Vec<f64> = records.iter().map(|r| r.balanced_accuracy).collect();
    let (m, h) = mean_ci95(&accs)?;
    let mut ids: Vec<String> = records.iter().map(|r| r.record_id.clone()).collect();
    ids.sort();
    Ok((format!("{m:.4}±{h:.4}"), ids))
}

/// Method × shots matrix over scenario `shots` records.
pub fn shots_table(records: &[RunRecord]) -> Result<Table> {
    let recs: Vec<&RunRecord> = records.iter().filter(|r| r.scenario == "shots").collect();
    let shots: BTreeSet<usize> = recs.iter().map(|r| r.shots).collect();
    let methods: BTreeSet<&str> = recs.iter().map(|r| r.method.as_str()).collect();
    let mut t = Table::new("shots", std::iter::once("method".to_string()).chain(shots.iter().map(|s| format!("S={s}"))).collect());
    for (i, m) in methods.iter().enumerate() {
        let mut row = vec![m.to_string()];
        for (j, s) in shots.iter().enumerate() {
            let sel: Vec<&RunRecord> = recs.iter().copied().filter(|r| r.method == *m && r.shots == *s).collect();
            let (text, ids) = cell(&sel)?;
            row.push(text);
            t.provenance.insert(format!("{i},{}", j + 1), ids);
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Mean accuracy per (method, train ways) row and test-ways column.
pub fn ways_heatmap(records: &[RunRecord]) -> Result<Table> {
    let recs: Vec<&RunRecord> = records.iter().filter(|r| r.scenario == "ways").collect();
    let test: BTreeSet<usize> = recs.iter().map(|r| r.ways).collect();
    let rows: BTreeSet<(&str, Option<usize>)> = recs.iter().map(|r| (r.method.as_str(), r.train_ways)).collect();
    let header = ["method".to_string(), "train_ways".to_string()].into_iter().chain(test.iter().map(|w| format!("test_ways={w}"))).collect();
    let mut t = Table::new("ways", header);
    for (i, (m, tw)) in rows.iter().enumerate() {
        let mut row = vec![m.to_string(), tw.map_or("-".into(), |v| v.to_string())];
        for (j, w) in test.iter().enumerate() {
            let sel: Vec<&RunRecord> = recs.iter().copied().filter(|r| r.method == *m && r.train_ways == *tw && r.ways == *w).collect();
            let text = if sel.is_empty() {
                String::new()
            } else {
                format!("{:.4}", mean_ci95(&sel.iter().map(|r| r.balanced_accuracy).collect::<Vec<_>>())?.0)
            };
            row.push(text);
            let mut ids: Vec<String> = sel.iter().map(|r| r.record_id.clone()).collect();
            ids.sort();
            t.provenance.insert(format!("{i},{}", j + 2), ids);
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Scenario rows (a/b/c) with accuracy and model size.
pub fn size_table(records: &[RunRecord]) -> Result<Table> {
    let recs: Vec<&RunRecord> = records.iter().filter(|r| matches!(r.scenario.as_str(), "a" | "b" | "c")).collect();
    let keys: BTreeSet<(&str, &str)> = recs.iter().map(|r| (r.method.as_str(), r.scenario.as_str())).collect();
    let header = ["method", "scenario", "balanced_accuracy", "trunk+head params", "nodes/avg depth"].map(String::from).to_vec();
    let mut t = Table::new("sizes", header);
    for (i, (m, s)) in keys.iter().enumerate() {
        let sel: Vec<&RunRecord> = recs.iter().copied().filter(|r| r.method == *m && r.scenario == *s).collect();
        let (text, ids) = cell(&sel)?;
        let mean_of = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = sel.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let params = mean_of(&|r| Some((r.trunk_params? + r.head_params?) as f64)).map_or("-".into(), |p| format!("{p:.0}"));
        let forest = match (mean_of(&|r| r.forest_nodes.map(|n| n as f64)), mean_of(&|r| r.forest_avg_depth)) {
            (Some(n), Some(d)) => format!("{n:.0}/{d:.1}"),
            _ => "-".into(),
        };
        t.rows.push(vec![m.to_string(), s.to_string(), text, params, forest]);
        t.provenance.insert(format!("{i},2"), ids);
    }
    Ok(t)
}

/// Write all tables plus `provenance.json` into `dir`; returns the paths.
pub fn report(records: &[RunRecord], format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let tables = [shots_table(records)?, ways_heatmap(records)?, size_table(records)?];
    let mut paths = Vec::new();
    for t in &tables {
        let p = dir.join(format!("{}.{}", t.name, format.extension()));
        std::fs::write(&p, t.render(format)?)?;
        paths.push(p);
    }
    #[derive(Serialize)]
    struct Sidecar<'a> {
        note: &'a str,
        tables: BTreeMap<&'a str, &'a BTreeMap<String, Vec<String>>>,
    }
    let side = Sidecar { note: CI_NOTE, tables: tables.iter().map(|t| (t.name.as_str(), &t.provenance)).collect() };
    let p = dir.join("provenance.json");
    std::fs::write(&p, serde_json::to_string_pretty(&side)? + "\n")?;
    paths.push(p);
    Ok(paths)
}
