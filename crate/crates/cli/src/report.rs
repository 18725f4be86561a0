//! Joins the epoch curves of several run directories into one table.
//!
//! `comparison.csv` has `epoch` followed by `<run>_clean_rmse,<run>_noisy_rmse,<run>_val_rmse`
//! per run and, when exactly one run is vanilla, `ratio_<vanilla>_over_<run>` for every
//! bootstrapped run (vanilla validation error divided by bootstrapped). `summary.csv` has one
//! row per run: `run,bootstrapped,val_rmse,median,iqr_low,iqr_high`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use nrt::experiment::ErrorSummary;
use nrt::telemetry::{read_epochs, EpochRow};

use crate::jobs::SUMMARY;

const EPOCHS: &str = "epochs.csv";

#[derive(Deserialize)]
struct Summary {
    bootstrapped: bool,
    validation: ErrorSummary,
}

struct Run {
    name: String,
    rows: Vec<EpochRow>,
    summary: Summary,
}

pub fn inputs(runs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for dir in runs {
        for f in [EPOCHS, SUMMARY] {
            let p = dir.join(f);
            if !p.is_file() {
                bail!("run dir {}: missing {f}", dir.display());
            }
            out.push(p);
        }
    }
    Ok(out)
}

fn name_of(dir: &Path, taken: &[Run]) -> String {
    let base: String = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let mut name = base.clone();
    let mut k = 2;
    while taken.iter().any(|r| r.name == name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

fn load(dir: &Path, taken: &[Run]) -> Result<Run> {
    inputs(&[dir.to_path_buf()])?;
    let rows = read_epochs(dir.join(EPOCHS)).with_context(|| format!("run dir {}: reading {EPOCHS}", dir.display()))?;
    let text = fs::read_to_string(dir.join(SUMMARY))?;
    let summary = serde_json::from_str(&text).with_context(|| format!("run dir {}: parsing {SUMMARY}", dir.display()))?;
    Ok(Run { name: name_of(dir, taken), rows, summary })
}

fn grid(run: &Run) -> Vec<(usize, bool)> {
    run.rows.iter().map(|r| (r.epoch, r.val_rmse.is_some())).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report(dirs: &[PathBuf], out: &Path) -> Result<Vec<String>> {
    if dirs.is_empty() {
        bail!("report needs at least one run dir");
    }
    let mut runs: Vec<Run> = Vec::new();
    for d in dirs {
        let run = load(d, &runs)?;
        runs.push(run);
    }
    let reference = grid(&runs[0]);
    for (d, r) in dirs.iter().zip(&runs).skip(1) {
        if grid(r) != reference {
            bail!(
                "run dir {} has an epoch grid incompatible with {} ({} vs {} rows, or different evaluated epochs)",
                d.display(),
                dirs[0].display(),
                r.rows.len(),
                reference.len()
            );
        }
    }

    let vanilla: Vec<usize> = (0..runs.len()).filter(|&i| !runs[i].summary.bootstrapped).collect();
    let ratios: Vec<(usize, usize)> = match vanilla[..] {
        [v] => (0..runs.len()).filter(|&i| i != v).map(|i| (v, i)).collect(),
        _ => vec![],
    };

    let mut w = csv::Writer::from_path(out.join("comparison.csv"))?;
    let mut header = vec!["epoch".to_string()];
    for r in &runs {
        for col in ["clean_rmse", "noisy_rmse", "val_rmse"] {
            header.push(format!("{}_{col}", r.name));
        }
    }
    for &(v, b) in &ratios {
        header.push(format!("ratio_{}_over_{}", runs[v].name, runs[b].name));
    }
    w.write_record(&header)?;
    for (k, &(epoch, _)) in reference.iter().enumerate() {
        let mut rec = vec![epoch.to_string()];
        for r in &runs {
            let row = &r.rows[k];
            rec.extend([cell(row.clean_rmse), cell(row.noisy_rmse), cell(row.val_rmse)]);
        }
        for &(v, b) in &ratios {
            let ratio = runs[v].rows[k].val_rmse.zip(runs[b].rows[k].val_rmse).map(|(a, c)| a / c);
            rec.push(cell(ratio));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut s = csv::Writer::from_path(out.join("summary.csv"))?;
    s.write_record(["run", "bootstrapped", "val_rmse", "median", "iqr_low", "iqr_high"])?;
    for r in &runs {
        let v = &r.summary.validation;
        s.write_record([
            r.name.clone(),
            r.summary.bootstrapped.to_string(),
            v.rmse.to_string(),
            v.median.to_string(),
            v.iqr_low.to_string(),
            v.iqr_high.to_string(),
        ])?;
    }
    s.flush()?;
    Ok(vec!["comparison.csv".into(), "summary.csv".into()])
}
