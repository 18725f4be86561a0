//! Resolved, serialisable commands and their execution.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use nrt::config::RunConfig;
use nrt::dataset::{load_dataset, save_dataset, Dataset, DatasetMeta};
use nrt::datagen::{corrupt, generate_clean, GeneratorConfig, NoiseSpec};
use nrt::experiment::{summarize, threshold_sweep, ErrorSummary, Split, TruthEvaluator};
use nrt::refine::{refine_observed, RefinementPlan};
use nrt::rng::SeedTree;
use nrt::telemetry;
use nrt::trainer::{train, EpochEvaluator};

use crate::report;

pub const DATASET: &str = "dataset.jsonl";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub generator: GeneratorConfig,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub run: RunConfig,
    /// Truth-curve evaluation stride in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { run: RunConfig::default(), eval_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub plan: RefinementPlan,
    pub eval_every: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        let plan = RefinementPlan {
            cycles: 2,
            z_threshold: nrt::weighting::DEFAULT_Z_THRESHOLD,
            early_stop_epoch: None,
            inner_config: run,
        };
        Self { plan, eval_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub run: RunConfig,
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { run: RunConfig::default(), grid: vec![0.5, 1.0, 1.28, 1.5, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Generate { config: GenerateConfig },
    Train { data: PathBuf, config: TrainConfig },
    Refine { data: PathBuf, config: RefineConfig },
    SweepThreshold { data: PathBuf, config: SweepConfig },
    Report { runs: Vec<PathBuf> },
}

impl Job {
    pub fn inputs(&self) -> Result<Vec<PathBuf>> {
        Ok(match self {
            Job::Generate { .. } => vec![],
            Job::Train { data, .. } | Job::Refine { data, .. } | Job::SweepThreshold { data, .. } => vec![data.clone()],
            Job::Report { runs } => report::inputs(runs)?,
        })
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Generate { config } => Some(config.generator.seed),
            Job::Train { config, .. } => Some(config.run.seed),
            Job::Refine { config, .. } => Some(config.plan.inner_config.seed),
            Job::SweepThreshold { config, .. } => Some(config.run.seed),
            Job::Report { .. } => None,
        }
    }

    pub fn validate(&self) -> nrt::Result<()> {
        match self {
            Job::Generate { config } => config.noise.validate(),
            Job::Train { config, .. } => config.run.validate(),
            Job::Refine { config, .. } => config.plan.validate(),
            Job::SweepThreshold { config, .. } => {
                config.run.validate()?;
                nrt::experiment::dedup_grid(&config.grid).map(|_| ())
            }
            Job::Report { .. } => Ok(()),
        }
    }

    /// Runs the job into `out` and returns the written file names.
    pub fn execute(&self, out: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        match self {
            Job::Generate { config } => generate(config, out),
            Job::Train { data, config } => train_run(data, config, out),
            Job::Refine { data, config } => refine_run(data, config, out),
            Job::SweepThreshold { data, config } => sweep(data, config, out),
            Job::Report { runs } => report::report(runs, out),
        }
    }
}

fn load(data: &Path) -> Result<Vec<nrt::sample::LabeledSample>> {
    if !data.exists() {
        anyhow::bail!("dataset {} does not exist", data.display());
    }
    load_dataset(data).with_context(|| format!("loading {}", data.display()))
}

fn generate(config: &GenerateConfig, out: &Path) -> Result<Vec<String>> {
    let clean = generate_clean(&config.generator)?;
    let samples = corrupt(&clean, &config.noise, config.generator.seed)?;
    let mut meta = DatasetMeta::default();
    meta.extra.insert("generator".into(), serde_json::to_value(config)?);
    save_dataset(out.join(DATASET), &Dataset { meta: Some(meta), samples })?;
    Ok(vec![DATASET.into()])
}

fn write_summary(out: &Path, summary: &ErrorSummary, bootstrapped: bool) -> Result<()> {
    let value = serde_json::json!({ "bootstrapped": bootstrapped, "validation": summary });
    fs::write(out.join(SUMMARY), serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

fn ensure_finite(summary: &ErrorSummary) -> Result<()> {
    let v = [summary.rmse, summary.median, summary.iqr_low, summary.iqr_high];
    anyhow::ensure!(v.iter().all(|x| x.is_finite()), "non-finite validation summary {summary:?}");
    Ok(())
}

fn evaluator(split: &Split, epochs: usize, every: usize) -> TruthEvaluator {
    let mut ev = TruthEvaluator::new(split, epochs);
    ev.every = every;
    ev
}

fn train_run(data: &Path, config: &TrainConfig, out: &Path) -> Result<Vec<String>> {
    let run = &config.run;
    let split = Split::new(&load(data)?, run.validation_fraction, run.seed)?;
    let model = run.model.build(&SeedTree::new(run.seed))?;
    let trained = train(model, &split.train_views(), run, &mut evaluator(&split, run.epochs, config.eval_every))?;
    let summary = summarize(&trained.model, &split.validation_truth())?;
    ensure_finite(&summary)?;

    let log = &trained.log;
    trained.model.save(out.join("checkpoint.json"))?;
    telemetry::write_epochs(out.join("epochs.csv"), log)?;
    telemetry::write_truth_curve(out.join("truth.csv"), log)?;
    telemetry::write_ema_trace(out.join("ema.csv"), log)?;
    telemetry::write_merges(out.join("merges.csv"), log)?;
    telemetry::write_weights(out.join("weights.csv"), &log.final_scores)?;
    telemetry::write_snapshots(out.join("snapshots.jsonl"), &log.snapshots)?;
    write_summary(out, &summary, run.bootstrapping())?;
    let mut files: Vec<String> =
        ["checkpoint.json", "epochs.csv", "truth.csv", "ema.csv", "merges.csv", "weights.csv", "snapshots.jsonl", SUMMARY]
            .map(String::from)
            .to_vec();
    if run.record_trajectory {
        let mut text = String::new();
        for params in &log.trajectory {
            text += &serde_json::to_string(params)?;
            text.push('\n');
        }
        fs::write(out.join("trajectory.jsonl"), text)?;
        files.push("trajectory.jsonl".into());
    }
    Ok(files)
}

fn refine_run(data: &Path, config: &RefineConfig, out: &Path) -> Result<Vec<String>> {
    let plan = &config.plan;
    let run = &plan.inner_config;
    let split = Split::new(&load(data)?, run.validation_fraction, run.seed)?;
    let result = refine_observed(&split.train_views(), &split.validation_truth(), plan, &mut |epochs| {
        Box::new(evaluator(&split, epochs, config.eval_every)) as Box<dyn EpochEvaluator>
    })?;
    let variant = if run.bootstrapping() { "bootstrapped" } else { "vanilla" };
    let last = result.last();
    ensure_finite(&last.validation)?;
    telemetry::write_refinement_table(out.join("refinement.csv"), &result.table(variant))?;
    last.model.save(out.join("checkpoint.json"))?;
    telemetry::write_epochs(out.join("epochs.csv"), &last.log)?;
    write_summary(out, &last.validation, run.bootstrapping())?;
    Ok(["refinement.csv", "checkpoint.json", "epochs.csv", SUMMARY].map(String::from).to_vec())
}

fn sweep(data: &Path, config: &SweepConfig, out: &Path) -> Result<Vec<String>> {
    let run = &config.run;
    let split = Split::new(&load(data)?, run.validation_fraction, run.seed)?;
    let model = run.model.build(&SeedTree::new(run.seed))?;
    let rows = threshold_sweep(&model, &split.train_views(), &split.validation_truth(), run, &config.grid)?;
    anyhow::ensure!(rows.iter().all(|r| r.median_val_rmse.is_finite()), "non-finite sweep result");
    telemetry::write_sweep(out.join("sweep.csv"), &rows)?;
    Ok(vec!["sweep.csv".into()])
}
