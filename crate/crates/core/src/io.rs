//! On-disk formats: snapshot CSV with a JSON sidecar, and JSON helpers for the
//! dictionary, model and report documents.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{KcfError, Result};
use crate::predictor::CoordinateStatistics;
use crate::regression::{SnapshotDataset, Split};
use crate::systems::{ControlSystem, ExperimentProtocol};

pub const DATA_CSV: &str = "data.csv";
pub const DATA_JSON: &str = "data.json";
pub const DICT_JSON: &str = "dict.json";
pub const MODEL_JSON: &str = "model.json";
pub const REPORT_JSON: &str = "report.json";
pub const STATS_CSV: &str = "stats.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Dimensions, split labels and provenance of a `data.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub snapshots: usize,
    pub train: usize,
    pub test: usize,
    pub split: Vec<Split>,
    #[serde(default)]
    pub system: Option<ControlSystem>,
    #[serde(default)]
    pub protocol: Option<ExperimentProtocol>,
    #[serde(default)]
    pub integrator: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KcfError + '_ {
    move |source| KcfError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_header(n: usize, m: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=m).map(|i| format!("u{i}")))
        .chain((1..=n).map(|i| format!("xplus{i}")))
        .collect()
}

/// Writes `data.csv` and `data.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    data: &SnapshotDataset,
    system: Option<&ControlSystem>,
    protocol: Option<&ExperimentProtocol>,
) -> Result<()> {
    ensure_dir(dir)?;
    let (n, m) = (data.n(), data.m());
    let csv_path = dir.join(DATA_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(csv_header(n, m))?;
    let mut row = Vec::with_capacity(2 * n + m);
    for j in 0..data.len() {
        row.clear();
        row.extend(data.x.column(j).iter().map(f64::to_string));
        row.extend(data.u.column(j).iter().map(f64::to_string));
        row.extend(data.x_plus.column(j).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&csv_path))?;

    let sidecar = DatasetSidecar {
        n,
        m,
        snapshots: data.len(),
        train: data.indices_of(Split::Train).len(),
        test: data.indices_of(Split::Test).len(),
        split: data.split.clone(),
        system: system.cloned(),
        protocol: protocol.cloned(),
        integrator: system
            .filter(|s| s.is_continuous())
            .map(|_| "rk4".to_string()),
    };
    write_json(&dir.join(DATA_JSON), &sidecar)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(SnapshotDataset, DatasetSidecar)> {
    let sidecar: DatasetSidecar = read_json(&dir.join(DATA_JSON))?;
    let (n, m) = (sidecar.n, sidecar.m);
    let csv_path = dir.join(DATA_CSV);
    let mut r = csv::Reader::from_path(&csv_path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != csv_header(n, m) {
        return Err(KcfError::invalid(
            "data.csv header",
            format!(
                "expected {} columns x1..,u1..,xplus1.. for n = {n}, m = {m}",
                2 * n + m
            ),
        ));
    }
    let mut x = Vec::new();
    let mut u = Vec::new();
    let mut xp = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 * n + m {
            return Err(KcfError::dim("data.csv row width", 2 * n + m, rec.len()));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                KcfError::invalid(
                    "data.csv",
                    format!("row {}: cannot parse {field:?}", line + 1),
                )
            })?;
            if k < n {
                x.push(v);
            } else if k < n + m {
                u.push(v);
            } else {
                xp.push(v);
            }
        }
    }
    let count = x.len() / n.max(1);
    if count != sidecar.snapshots {
        return Err(KcfError::dim(
            "data.csv row count",
            sidecar.snapshots,
            count,
        ));
    }
    let data = SnapshotDataset::with_split(
        DMatrix::from_vec(n, count, x),
        DMatrix::from_vec(n, count, xp),
        DMatrix::from_vec(m, count, u),
        sidecar.split.clone(),
    )?;
    Ok((data, sidecar))
}

/// Long-format statistics: one row per (label, step, coordinate).
pub fn write_statistics_csv(
    path: &Path,
    groups: &[(String, Vec<CoordinateStatistics>)],
    dt: Option<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "step",
        "time",
        "coordinate",
        "median",
        "q25",
        "q75",
    ])?;
    for (label, stats) in groups {
        for s in stats {
            for t in 0..s.median.len() {
                let time = dt.map(|h| (h * t as f64).to_string()).unwrap_or_default();
                w.write_record([
                    label.clone(),
                    t.to_string(),
                    time,
                    (s.coordinate + 1).to_string(),
                    s.median[t].to_string(),
                    s.q25[t].to_string(),
                    s.q75[t].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn require_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(KcfError::Io {
            path: p.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing artifact"),
        })
    }
}
