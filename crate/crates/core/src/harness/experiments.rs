use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{csv_err, write_json, RepeatedRun};
use super::train::train_on;
use super::{io_err, HarnessError, Result, TrainConfig};
use crate::data::split;
use crate::losses::{AdmaParams, LossFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub loss: String,
    pub result: Option<RepeatedRun>,
    /// Set when this loss failed; the other losses still run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub config_hash: String,
    pub entries: Vec<CompareEntry>,
}

/// Repeated runs of `config` under each loss. Every loss sees the same
/// splits, initial weights and batch orders for a given seed.
fn run_losses(config: &TrainConfig, losses: &[LossFunction]) -> Result<Vec<std::result::Result<RepeatedRun, String>>> {
    config.validate()?;
    let (pool, explicit_val) = config.dataset.load()?;
    let mut outcomes: Vec<Vec<Result<_>>> = losses.iter().map(|_| Vec::new()).collect();
    for rep in 0..config.repetitions as u64 {
        let mut c = config.clone();
        c.seed = config.seed + rep;
        let (train_set, val_set) = match &explicit_val {
            Some(v) => (pool.clone(), v.clone()),
            None => split(&pool, &c.split_spec())?,
        };
        for (slot, loss) in outcomes.iter_mut().zip(losses) {
            c.loss = *loss;
            slot.push(train_on(&c, &train_set, &val_set).map(|(r, _)| r));
        }
    }
    Ok(outcomes
        .into_iter()
        .map(|runs| {
            runs.into_iter()
                .collect::<Result<Vec<_>>>()
                .map(RepeatedRun::from_runs)
                .map_err(|e| e.to_string())
        })
        .collect())
}

/// Trains `config` under each loss. Needs at least two losses.
pub fn compare(config: &TrainConfig, losses: &[LossFunction]) -> Result<Comparison> {
    if losses.len() < 2 {
        return Err(HarnessError::InvalidRequest(format!(
            "compare needs at least two losses, got {}",
            losses.len()
        )));
    }
    let entries = run_losses(config, losses)?
        .into_iter()
        .zip(losses)
        .map(|(outcome, loss)| match outcome {
            Ok(r) => CompareEntry {
                loss: loss.to_string(),
                result: Some(r),
                error: None,
            },
            Err(e) => CompareEntry {
                loss: loss.to_string(),
                result: None,
                error: Some(e),
            },
        })
        .collect();
    Ok(Comparison {
        config_hash: config.hash(),
        entries,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>9} {:>10} {:>10} {:>12}",
            "loss", "final_acc", "std", "best_acc", "epoch1_acc", "acc_var"
        );
        for e in &self.entries {
            match (&e.result, &e.error) {
                (Some(r), _) => {
                    let _ = writeln!(
                        out,
                        "{:<16} {:>10.4} {:>9} {:>10.4} {:>10} {:>12}",
                        e.loss,
                        r.final_val_acc_mean,
                        fmt_opt(r.final_val_acc_std, 4),
                        r.best_val_acc_mean,
                        fmt_opt(r.first_epoch_val_acc_mean, 4),
                        r.val_acc_variance_mean.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}")),
                    );
                }
                (None, err) => {
                    let _ = writeln!(out, "{:<16} error: {}", e.loss, err.as_deref().unwrap_or("unknown"));
                }
            }
        }
        out
    }

    /// `compare.csv`, `compare.json`, and each run's `metrics.csv` /
    /// `report.json` under `<loss>/seed-<n>/`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join("compare.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record([
            "loss",
            "final_val_acc_mean",
            "final_val_acc_std",
            "best_val_acc_mean",
            "first_epoch_val_acc_mean",
            "val_acc_variance_mean",
            "error",
        ])
        .map_err(|e| csv_err(&path, e))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            let row = match &e.result {
                Some(r) => [
                    e.loss.clone(),
                    r.final_val_acc_mean.to_string(),
                    opt(r.final_val_acc_std),
                    r.best_val_acc_mean.to_string(),
                    opt(r.first_epoch_val_acc_mean),
                    opt(r.val_acc_variance_mean),
                    String::new(),
                ],
                None => [
                    e.loss.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.error.clone().unwrap_or_default(),
                ],
            };
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
            if let Some(r) = &e.result {
                for run in &r.runs {
                    run.write(&out_dir.join(&e.loss).join(format!("seed-{}", run.seed)))?;
                }
            }
        }
        w.flush().map_err(io_err(&path))?;
        write_json(&out_dir.join("compare.json"), self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    /// Mean final validation accuracy over repetitions.
    pub val_acc: Option<f64>,
    pub exceeds_recommended: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
    pub best_a: f64,
    pub best_val_acc: f64,
}

/// Trains Adma at each `a` (other settings from `config`) and picks the `a`
/// with the highest final validation accuracy, the smallest `a` on ties.
pub fn sweep_a(config: &TrainConfig, a_values: &[f64]) -> Result<Sweep> {
    if a_values.is_empty() {
        return Err(HarnessError::InvalidRequest("sweep needs at least one value of a".into()));
    }
    let params = a_values
        .iter()
        .map(|&a| AdmaParams::new(a))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let losses = params
        .iter()
        .map(|p| LossFunction::adma(p.a())?.with_epsilon(config.loss.epsilon))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let outcomes = run_losses(config, &losses)?;
    let rows: Vec<SweepRow> = outcomes
        .into_iter()
        .zip(&params)
        .map(|(o, p)| SweepRow {
            a: p.a(),
            val_acc: o.as_ref().ok().map(|r| r.final_val_acc_mean),
            exceeds_recommended: p.exceeds_recommended(),
            error: o.err(),
        })
        .collect();
    let (best_a, best_val_acc) = rows
        .iter()
        .filter_map(|r| r.val_acc.map(|acc| (r.a, acc)))
        .fold(None, |best: Option<(f64, f64)>, (a, acc)| match best {
            Some((ba, bacc)) if bacc > acc || (bacc == acc && ba <= a) => Some((ba, bacc)),
            _ => Some((a, acc)),
        })
        .ok_or_else(|| HarnessError::InvalidRequest("every sweep run failed".into()))?;
    Ok(Sweep {
        config_hash: config.hash(),
        rows,
        best_a,
        best_val_acc,
    })
}

impl Sweep {
    pub fn table(&self) -> String {
        let mut out = format!("{:>8} {:>10}  note\n", "a", "val_acc");
        for r in &self.rows {
            let note = match (&r.error, r.exceeds_recommended) {
                (Some(e), _) => format!("error: {e}"),
                (None, true) => "a > 0.5, loss is not convex".to_string(),
                (None, false) => String::new(),
            };
            let _ = writeln!(out, "{:>8} {:>10}  {}", r.a, fmt_opt(r.val_acc, 4), note);
        }
        let _ = writeln!(out, "best a = {} (val_acc {:.4})", self.best_a, self.best_val_acc);
        out
    }

    /// `sweep.csv` and `sweep.json`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(io_err(&path))?;
        write_json(&out_dir.join("sweep.json"), self)
    }
}
