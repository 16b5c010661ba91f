//! Per-epoch run logs, their CSV/JSON serialisation and plot-series export.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{ExperimentConfig, PretrainSummary};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::metrics::MetricsReport;

/// One evaluated epoch. Column order of the CSV follows field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub comm_rate_top1: f64,
    pub comm_rate_top5: f64,
    /// Mean count of target-class images among the top five.
    pub target_class_in_top5: f64,
    pub target_class_mean_rank: f64,
    pub message_length_mean: f64,
    pub message_length_std: f64,
    pub rotation_accuracy: Option<f64>,
    pub wall_time: Option<f64>,
    pub seed: u64,
}

pub const LOG_COLUMNS: [&str; 11] = [
    "epoch",
    "train_loss",
    "comm_rate_top1",
    "comm_rate_top5",
    "target_class_in_top5",
    "target_class_mean_rank",
    "message_length_mean",
    "message_length_std",
    "rotation_accuracy",
    "wall_time",
    "seed",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    /// Identifies the run in plot series; defaults to the index.
    pub label: String,
    pub rows: Vec<RunLogRow>,
    pub report: Option<MetricsReport>,
    pub config: Option<ExperimentConfig>,
    pub pretrain: Option<PretrainSummary>,
}

/// The JSON document written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub epochs_logged: usize,
    pub report: Option<MetricsReport>,
    pub config: Option<ExperimentConfig>,
    pub pretrain: Option<PretrainSummary>,
}

impl RunLog {
    pub fn validate(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::input(format!(
                    "log epochs must increase strictly ({} after {})",
                    w[1].epoch, w[0].epoch
                )));
            }
        }
        for r in &self.rows {
            let rates = [Some(r.comm_rate_top1), Some(r.comm_rate_top5), r.rotation_accuracy];
            if rates.into_iter().flatten().any(|x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::input(format!("epoch {}: rate outside [0, 1]", r.epoch)));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            label: self.label.clone(),
            epochs_logged: self.rows.len(),
            report: self.report.clone(),
            config: self.config.clone(),
            pretrain: self.pretrain.clone(),
        }
    }
}

/// `metrics.csv` -> `metrics.json`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn log_to_csv(log: &RunLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if log.rows.is_empty() {
        w.write_record(LOG_COLUMNS)?;
    }
    for r in &log.rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::input(e.to_string()))
}

/// Write the CSV to `path` and the JSON summary to [`summary_path`], both
/// atomically.
pub fn write_metrics_log(log: &RunLog, path: &Path) -> Result<()> {
    log.validate()?;
    write_atomic(path, &log_to_csv(log)?)?;
    let mut json = serde_json::to_vec_pretty(&log.summary())?;
    json.push(b'\n');
    write_atomic(&summary_path(path), &json)
}

/// Read a log CSV (and its summary, when present) back.
pub fn read_metrics_log(path: &Path) -> Result<RunLog> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != LOG_COLUMNS {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("unexpected header {header:?}"),
        });
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<RunLogRow>, _>>()?;
    let mut log = RunLog {
        rows,
        ..RunLog::default()
    };
    let sp = summary_path(path);
    if sp.exists() {
        let s = read_summary(&sp)?;
        log.label = s.label;
        log.report = s.report;
        log.config = s.config;
        log.pretrain = s.pretrain;
    }
    log.validate()?;
    Ok(log)
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub type Column = fn(&RunLogRow) -> f64;

/// The four plotted series: file stem and the column it carries.
pub const PLOT_SERIES: [(&str, Column); 4] = [
    ("loss", |r| r.train_loss),
    ("top1", |r| r.comm_rate_top1),
    ("target_class_top5", |r| r.target_class_in_top5),
    ("mean_rank", |r| r.target_class_mean_rank),
];

#[derive(Serialize)]
struct Point<'a> {
    epoch: usize,
    value: f64,
    run_id: &'a str,
}

/// One `<series>.csv` per plotted metric with columns `epoch,value,run_id`.
/// Runs without a label are named by their position in `logs`.
pub fn emit_plot_data(logs: &[RunLog], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if logs.is_empty() {
        return Err(Error::input("plot data needs at least one log"));
    }
    let ids: Vec<String> = logs
        .iter()
        .enumerate()
        .map(|(i, l)| if l.label.is_empty() { i.to_string() } else { l.label.clone() })
        .collect();
    let mut written = Vec::with_capacity(PLOT_SERIES.len());
    for (stem, get) in PLOT_SERIES {
        let mut w = csv::Writer::from_writer(Vec::new());
        if logs.iter().all(|l| l.rows.is_empty()) {
            w.write_record(["epoch", "value", "run_id"])?;
        }
        for (log, id) in logs.iter().zip(&ids) {
            for r in &log.rows {
                w.serialize(Point {
                    epoch: r.epoch,
                    value: get(r),
                    run_id: id,
                })?;
            }
        }
        let path = out_dir.join(format!("{stem}.csv"));
        write_atomic(&path, &w.into_inner().map_err(|e| Error::input(e.to_string()))?)?;
        written.push(path);
    }
    Ok(written)
}
