//! Output files. JSON outputs carry a `seed` field; CSV outputs start with
//! a `# seed=N` comment line.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::TaskKind;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.csv";

/// The summary every training run writes. `wall_seconds` is always null
/// here so that equal runs give byte-identical files; the timing is in
/// `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub task: TaskKind,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
    pub wall_seconds: Option<f64>,
}

pub fn create_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `header` and `rows` after the seed comment line.
pub fn write_csv<I, R>(path: &Path, seed: u64, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |e| Error::Csv {
        path: path.into(),
        source: e,
    };
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# seed={seed}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest exact decimal, switching to exponent form for very small or
/// large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
