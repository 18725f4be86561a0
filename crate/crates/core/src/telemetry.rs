//! CSV and JSON-lines writers for training logs and experiment tables.
//!
//! | file | columns |
//! |------|---------|
//! | epochs | `epoch,clean_rmse,noisy_rmse,val_rmse,mean_weight` |
//! | truth curve | `epoch,noisy_truth_rmse,train_loss,warnings` |
//! | EMA trace | `batch_index,epoch,worker,mu,sigma,batch_mean` |
//! | merges | `epoch,worker,mu,var` (`worker` is `mean` for the merged value) |
//! | weights | `sample_id,loss,z_score,weight` |
//! | snapshots | JSON lines of `{sample_id,epoch,loss,z_score,weight}` |
//!
//! Missing values are empty fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::SweepRow;
use crate::refine::ErrorRow;
use crate::trainer::{SampleScore, TrainingLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub clean_rmse: Option<f64>,
    pub noisy_rmse: Option<f64>,
    pub val_rmse: Option<f64>,
    pub mean_weight: f64,
}

#[derive(Serialize)]
struct TruthRow {
    epoch: usize,
    noisy_truth_rmse: Option<f64>,
    train_loss: f64,
    warnings: usize,
}

#[derive(Serialize)]
struct MergeRow<'a> {
    epoch: usize,
    worker: &'a str,
    mu: f64,
    var: f64,
}

#[derive(Serialize)]
struct WeightRow {
    sample_id: u64,
    loss: f64,
    z_score: Option<f64>,
    weight: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn epoch_rows(log: &TrainingLog) -> Vec<EpochRow> {
    log.epochs
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            clean_rmse: e.metrics.train_rmse_clean_subset,
            noisy_rmse: e.metrics.train_rmse_noisy_subset,
            val_rmse: e.metrics.validation_rmse,
            mean_weight: e.mean_weight,
        })
        .collect()
}

pub fn write_epochs(path: impl AsRef<Path>, log: &TrainingLog) -> Result<()> {
    write_rows(path.as_ref(), epoch_rows(log))
}

pub fn read_epochs(path: impl AsRef<Path>) -> Result<Vec<EpochRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_truth_curve(path: impl AsRef<Path>, log: &TrainingLog) -> Result<()> {
    write_rows(
        path.as_ref(),
        log.epochs.iter().map(|e| TruthRow {
            epoch: e.epoch,
            noisy_truth_rmse: e.metrics.noisy_truth_rmse,
            train_loss: e.train_loss,
            warnings: e.warnings,
        }),
    )
}

pub fn write_ema_trace(path: impl AsRef<Path>, log: &TrainingLog) -> Result<()> {
    write_rows(path.as_ref(), &log.ema_trace)
}

pub fn write_merges(path: impl AsRef<Path>, log: &TrainingLog) -> Result<()> {
    let mut rows = Vec::new();
    let names: Vec<String> = (0..log.merges.first().map_or(0, |m| m.worker_mu.len())).map(|w| w.to_string()).collect();
    for m in &log.merges {
        for (w, (mu, var)) in m.worker_mu.iter().zip(&m.worker_var).enumerate() {
            rows.push(MergeRow { epoch: m.epoch, worker: names.get(w).map_or("?", String::as_str), mu: *mu, var: *var });
        }
        rows.push(MergeRow { epoch: m.epoch, worker: "mean", mu: m.mu, var: m.var });
    }
    write_rows(path.as_ref(), rows)
}

pub fn write_weights(path: impl AsRef<Path>, scores: &[SampleScore]) -> Result<()> {
    write_rows(
        path.as_ref(),
        scores.iter().map(|s| WeightRow { sample_id: s.sample_id, loss: s.loss, z_score: s.z_score, weight: s.weight }),
    )
}

pub fn write_snapshots(path: impl AsRef<Path>, scores: &[SampleScore]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scores {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_refinement_table(path: impl AsRef<Path>, rows: &[ErrorRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn write_sweep(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}
