//! CSV dataset files and their `.meta.json` sidecar.
//!
//! Layout: header `flow_id,label,f_0_0,...,f_{P-1}_{F-1}` (packet-major), one
//! flow per row. Reals are written with 17 significant digits so that a
//! save/load cycle is bit-exact.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, FlowSample, Profile};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub packets: usize,
    pub features: usize,
    pub feature_names: Vec<String>,
    /// Original class id of each dense label.
    pub class_ids: Vec<i64>,
}

/// `data/flows.csv` -> `data/flows.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn read_meta(path: &Path) -> Result<Option<DatasetMeta>> {
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let meta: DatasetMeta = serde_json::from_reader(File::open(&mp)?)
        .map_err(|e| Error::data(format!("{}: {e}", mp.display())))?;
    Ok(Some(meta))
}

fn header(profile: &Profile) -> Vec<String> {
    let mut h = vec!["flow_id".to_string(), "label".to_string()];
    for p in 0..profile.packets {
        for f in 0..profile.features {
            h.push(format!("f_{p}_{f}"));
        }
    }
    h
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(File::create(path)?));
    let csv_err = |e: csv::Error| Error::data(format!("writing {}: {e}", path.display()));
    w.write_record(header(&data.profile)).map_err(csv_err)?;
    for s in &data.samples {
        let mut row = Vec::with_capacity(2 + data.profile.flat_len());
        row.push(s.flow_id.clone());
        row.push(s.label.to_string());
        row.extend(s.features.data().iter().map(|&v| fmt_real(v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    let meta = DatasetMeta {
        packets: data.profile.packets,
        features: data.profile.features,
        feature_names: data.profile.feature_names.clone(),
        class_ids: data.class_ids.clone(),
    };
    let mut mw = BufWriter::new(File::create(meta_path(path))?);
    serde_json::to_writer_pretty(&mut mw, &meta)?;
    mw.write_all(b"\n")?;
    mw.flush()?;
    Ok(())
}

/// Load a dataset, validating it against `profile` and re-indexing labels
/// densely as `0..C`. The mapping back to the file's labels is kept in
/// [`Dataset::class_ids`].
pub fn load_dataset(path: &Path, profile: &Profile) -> Result<Dataset> {
    let meta = read_meta(path)?;
    let mut profile = profile.clone();
    if let Some(m) = &meta {
        if (m.packets, m.features) != (profile.packets, profile.features) {
            return Err(Error::data(format!(
                "{} describes {}x{} samples but profile expects {}x{}",
                meta_path(path).display(),
                m.packets,
                m.features,
                profile.packets,
                profile.features
            )));
        }
        profile.feature_names = m.feature_names.clone();
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?);
    let expected = header(&profile);
    let mut records = rdr.records();
    let head = records.next().ok_or_else(|| Error::Parse { line: 1, msg: "missing header".into() })?;
    let head = head.map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if head.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header does not match a {}x{} profile", profile.packets, profile.features),
        });
    }

    let mut raw = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", expected.len(), rec.len()) });
        }
        let label: i64 =
            rec[1].trim().parse().map_err(|_| Error::Parse { line, msg: format!("label `{}` is not an integer", &rec[1]) })?;
        let values = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(k, v)| {
                let x: f64 = v.trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("feature `{}` is not numeric: `{v}`", expected[k + 2]),
                })?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::Parse { line, msg: format!("feature `{}` is not finite", expected[k + 2]) })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        raw.push((rec[0].to_string(), label, values));
    }

    let labels: BTreeSet<i64> = raw.iter().map(|r| r.1).collect();
    let dense: Vec<i64> = labels.into_iter().collect();
    let class_ids = dense
        .iter()
        .map(|&l| match &meta {
            Some(m) if l >= 0 && (l as usize) < m.class_ids.len() => m.class_ids[l as usize],
            _ => l,
        })
        .collect();
    let samples = raw
        .into_iter()
        .map(|(flow_id, label, values)| {
            Ok(FlowSample {
                features: Tensor::new(vec![profile.packets, profile.features], values)?,
                label: dense.binary_search(&label).expect("label collected above"),
                flow_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(profile, samples, class_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let p = Profile::new(2, 2).unwrap();
        let samples = (0..3)
            .map(|i| FlowSample {
                features: Tensor::new(vec![2, 2], vec![0.1 * i as f64, -1.0 / 3.0, 1e-300, 12345.678]).unwrap(),
                label: i % 2,
                flow_id: format!("flow-{i}"),
            })
            .collect();
        Dataset::new(p, samples, vec![10, 20]).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = tiny();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path, &Profile::new(2, 2).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.len(), 3);
        assert_eq!(back.samples[0].features.shape(), &[2, 2]);
    }

    #[test]
    fn relabels_densely() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "flow_id,label,f_0_0,f_1_0\na,7,1,2\nb,-3,3,4\nc,7,5,6\n").unwrap();
        let d = load_dataset(&path, &Profile::new(2, 1).unwrap()).unwrap();
        assert_eq!(d.class_ids, vec![-3, 7]);
        assert_eq!(d.labels(&[0, 1, 2]), vec![1, 0, 1]);
    }

    #[test]
    fn short_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "flow_id,label,f_0_0,f_0_1,f_1_0,f_1_1\na,0,1,2,3,4\nb,1,1,2,3\n").unwrap();
        match load_dataset(&path, &Profile::new(2, 2).unwrap()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_feature_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "flow_id,label,f_0_0\na,0,abc\n").unwrap();
        assert!(matches!(load_dataset(&path, &Profile::new(1, 1).unwrap()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn header_must_match_profile() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "flow_id,label,f_0_0\na,0,1\n").unwrap();
        assert!(matches!(load_dataset(&path, &Profile::new(2, 1).unwrap()), Err(Error::Parse { line: 1, .. })));
    }
}
