use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    /// Seconds spent in this epoch. Written to `timings.csv` only, so that
    /// `metrics.csv` and `report.json` are byte-identical across reruns.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_val_acc: f64,
    pub final_val_acc: f64,
    /// `None` when no epoch ran.
    pub first_epoch_val_acc: Option<f64>,
    /// Sample variance of validation accuracy over the trailing window;
    /// `None` with fewer than two epochs.
    pub val_acc_variance: Option<f64>,
    pub variance_window: usize,
}

impl RunSummary {
    pub fn from_records(records: &[EpochRecord], initial_val_acc: f64, window: usize) -> Self {
        let accs: Vec<f64> = records.iter().map(|r| r.val_acc).collect();
        let tail = &accs[accs.len().saturating_sub(window.max(1))..];
        Self {
            best_val_acc: accs.iter().copied().fold(initial_val_acc, f64::max),
            final_val_acc: accs.last().copied().unwrap_or(initial_val_acc),
            first_epoch_val_acc: accs.first().copied(),
            val_acc_variance: sample_variance(tail),
            variance_window: window,
        }
    }
}

pub(crate) fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some(xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub loss: String,
    pub param_count: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub initial_val_loss: f64,
    pub initial_val_acc: f64,
    pub records: Vec<EpochRecord>,
    pub summary: RunSummary,
    /// SHA-256 of the initial parameters (little-endian f64).
    pub init_hash: String,
    /// SHA-256 of every epoch's sample order.
    pub data_order_hash: String,
    /// SHA-256 of the final parameters.
    pub final_params_hash: String,
    pub flags: Vec<String>,
}

#[derive(Serialize)]
struct MetricsRow {
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    val_loss: f64,
    val_acc: f64,
    lr: f64,
}

impl RunReport {
    /// Writes `metrics.csv`, `report.json` and `timings.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        self.write_metrics(&out_dir.join("metrics.csv"))?;
        self.write_timings(&out_dir.join("timings.csv"))?;
        write_json(&out_dir.join("report.json"), self)
    }

    pub fn write_timings(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["epoch", "wall_time"]).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            w.write_record([r.epoch.to_string(), r.wall_time.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        if self.records.is_empty() {
            w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"])
                .map_err(|e| csv_err(path, e))?;
        }
        for r in &self.records {
            w.serialize(MetricsRow {
                epoch: r.epoch,
                train_loss: r.train_loss,
                train_acc: r.train_acc,
                val_loss: r.val_loss,
                val_acc: r.val_acc,
                lr: r.lr,
            })
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.records.iter_mut().for_each(|e| e.wall_time = 0.0);
            r
        };
        strip(self) == strip(other)
    }
}

/// Summary over seeded repetitions of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRun {
    pub loss: String,
    pub seeds: Vec<u64>,
    pub final_val_acc_mean: f64,
    pub final_val_acc_std: Option<f64>,
    pub best_val_acc_mean: f64,
    pub first_epoch_val_acc_mean: Option<f64>,
    pub val_acc_variance_mean: Option<f64>,
    pub runs: Vec<RunReport>,
}

impl RepeatedRun {
    pub fn from_runs(runs: Vec<RunReport>) -> Self {
        let finals: Vec<f64> = runs.iter().map(|r| r.summary.final_val_acc).collect();
        let bests: Vec<f64> = runs.iter().map(|r| r.summary.best_val_acc).collect();
        let firsts: Option<Vec<f64>> = runs.iter().map(|r| r.summary.first_epoch_val_acc).collect();
        let vars: Option<Vec<f64>> = runs.iter().map(|r| r.summary.val_acc_variance).collect();
        Self {
            loss: runs.first().map(|r| r.loss.clone()).unwrap_or_default(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_val_acc_mean: mean(&finals),
            final_val_acc_std: sample_variance(&finals).map(f64::sqrt),
            best_val_acc_mean: mean(&bests),
            first_epoch_val_acc_mean: firsts.map(|v| mean(&v)),
            val_acc_variance_mean: vars.map(|v| mean(&v)),
            runs,
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    }
}
