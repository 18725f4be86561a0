//! Evaluation against hidden truth and the standard corrupted-cluster task.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::split_train_validation;
use crate::datagen::{corrupt, generate_clean, injected_force_rms, GeneratorConfig, NoiseSpec};
use crate::error::{Error, Result};
use crate::loss::{CompositeLossSpec, LossChannel};
use crate::models::{AnyModel, Model};
use crate::optim::{LrSchedule, OptimizerKind};
use crate::rng::SeedTree;
use crate::sample::{training_views, LabeledSample, Provenance, TrainSample};
use crate::trainer::{evaluate, force_rmse, train, EpochEvaluator, EpochMetrics, Trained};
use crate::weighting::WeightPolicy;

/// Lower quartile, median and upper quartile (linear interpolation).
pub fn quartiles(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::Contract("quartiles of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
    };
    Ok((q(0.25), q(0.5), q(0.75)))
}

/// Training and validation samples with provenance still attached.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
}

impl Split {
    pub fn new(samples: &[LabeledSample], fraction: f64, seed: u64) -> Result<Self> {
        let (train, validation) = split_train_validation(samples, fraction, seed)?;
        Ok(Self { train, validation })
    }

    pub fn train_views(&self) -> Vec<TrainSample> {
        training_views(&self.train)
    }

    /// Validation inputs paired with true labels.
    pub fn validation_truth(&self) -> Vec<TrainSample> {
        self.validation.iter().map(LabeledSample::truth_view).collect()
    }

    pub fn corrupted_train(&self) -> impl Iterator<Item = &LabeledSample> {
        self.train.iter().filter(|s| s.provenance() == Provenance::Corrupted)
    }
}

/// Force RMSE per subset, using provenance and hidden truth.
pub struct TruthEvaluator {
    clean: Vec<TrainSample>,
    noisy: Vec<TrainSample>,
    noisy_truth: Vec<TrainSample>,
    validation: Vec<TrainSample>,
    /// Evaluate every `every` epochs and at the last; other epochs report nothing.
    pub every: usize,
    pub total_epochs: usize,
}

impl TruthEvaluator {
    pub fn new(split: &Split, total_epochs: usize) -> Self {
        let pick = |p: Provenance| -> Vec<&LabeledSample> { split.train.iter().filter(|s| s.provenance() == p).collect() };
        Self {
            clean: pick(Provenance::Clean).into_iter().map(LabeledSample::training_view).collect(),
            noisy: pick(Provenance::Corrupted).into_iter().map(LabeledSample::training_view).collect(),
            noisy_truth: pick(Provenance::Corrupted).into_iter().map(LabeledSample::truth_view).collect(),
            validation: split.validation_truth(),
            every: 1,
            total_epochs,
        }
    }

    pub fn metrics(&self, model: &AnyModel) -> Result<EpochMetrics> {
        let opt = |s: &[TrainSample]| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                force_rmse(model, s).map(Some)
            }
        };
        Ok(EpochMetrics {
            train_rmse_clean_subset: opt(&self.clean)?,
            train_rmse_noisy_subset: opt(&self.noisy)?,
            noisy_truth_rmse: opt(&self.noisy_truth)?,
            validation_rmse: opt(&self.validation)?,
        })
    }
}

impl EpochEvaluator for TruthEvaluator {
    fn evaluate(&mut self, epoch: usize, model: &AnyModel) -> Result<EpochMetrics> {
        if self.every <= 1 || epoch % self.every == 0 || epoch + 1 == self.total_epochs {
            self.metrics(model)
        } else {
            Ok(EpochMetrics::default())
        }
    }
}

/// Per-sample validation force RMSE against truth, summarised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub rmse: f64,
    pub median: f64,
    pub iqr_low: f64,
    pub iqr_high: f64,
}

pub fn summarize(model: &dyn Model, samples: &[TrainSample]) -> Result<ErrorSummary> {
    let ev = evaluate(model, samples, &CompositeLossSpec::forces_only())?;
    let per: Vec<f64> = ev.per_sample.iter().map(|p| p.1).collect();
    let (iqr_low, median, iqr_high) = quartiles(&per)?;
    Ok(ErrorSummary { rmse: ev.force_rmse, median, iqr_low, iqr_high })
}

/// Dataset generation, corruption and run settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardTask {
    pub generator: GeneratorConfig,
    pub noise: NoiseSpec,
    /// Injected RMS as a multiple of the clean-fit floor.
    pub noise_factor: f64,
    /// Relative half-width of the injected RMS range.
    pub noise_spread: f64,
    pub noise_seed: u64,
    pub split_seed: u64,
    pub run: RunConfig,
    pub z_threshold: f64,
}

impl Default for StandardTask {
    fn default() -> Self {
        let run = RunConfig {
            seed: 1,
            epochs: 500,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine { floor: 0.02 },
            optimizer: OptimizerKind::AdaptiveMoments,
            loss_spec: CompositeLossSpec::forces_only(),
            loss_channel: LossChannel::Force,
            ..RunConfig::default()
        };
        Self {
            generator: GeneratorConfig { n: 1000, particles: 5, seed: 7, ..GeneratorConfig::default() },
            noise: NoiseSpec::default(),
            noise_factor: 10.0,
            noise_spread: 0.05,
            noise_seed: 11,
            split_seed: 3,
            run,
            z_threshold: 1.28,
        }
    }
}

pub struct RunResult {
    pub trained: Trained,
    pub validation: ErrorSummary,
}

impl StandardTask {
    pub fn clean_split(&self) -> Result<Split> {
        Split::new(&generate_clean(&self.generator)?, self.run.validation_fraction, self.split_seed)
    }

    /// Corrupt a clean dataset with magnitudes set from `floor`.
    pub fn noisy_split(&self, floor: f64) -> Result<Split> {
        let spec = self.noise_spec(floor);
        let data = corrupt(&generate_clean(&self.generator)?, &spec, self.noise_seed)?;
        Split::new(&data, self.run.validation_fraction, self.split_seed)
    }

    pub fn noise_spec(&self, floor: f64) -> NoiseSpec {
        let cal = NoiseSpec::calibrated(floor, self.noise_factor, self.noise_spread);
        NoiseSpec { force_noise_magnitude: cal.force_noise_magnitude, ..self.noise }
    }

    pub fn vanilla(&self) -> RunConfig {
        RunConfig { weight_policy: None, ..self.run.clone() }
    }

    pub fn bootstrapped(&self, z_threshold: f64) -> RunConfig {
        RunConfig { weight_policy: Some(WeightPolicy::with_threshold(z_threshold)), ..self.run.clone() }
    }

    pub fn fresh_model(&self, config: &RunConfig) -> Result<AnyModel> {
        config.model.build(&SeedTree::new(config.seed))
    }

    pub fn run(&self, split: &Split, config: &RunConfig, evaluator: &mut dyn EpochEvaluator) -> Result<RunResult> {
        let trained = train(self.fresh_model(config)?, &split.train_views(), config, evaluator)?;
        let validation = summarize(&trained.model, &split.validation_truth())?;
        Ok(RunResult { trained, validation })
    }

    /// Validation force RMSE of a vanilla fit to the clean data.
    pub fn clean_floor(&self) -> Result<f64> {
        let split = self.clean_split()?;
        Ok(self.run(&split, &self.vanilla(), &mut crate::trainer::NoEvaluation)?.validation.rmse)
    }
}

/// Injected force RMS over the corrupted training samples.
pub fn training_noise_rms(split: &Split) -> f64 {
    let bad: Vec<LabeledSample> = split.corrupted_train().cloned().collect();
    injected_force_rms(&bad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub z_t: f64,
    pub median_val_rmse: f64,
    pub iqr_low: f64,
    pub iqr_high: f64,
}

/// One bootstrapped run per threshold, duplicates removed (first kept).
pub fn threshold_sweep(
    model: &AnyModel,
    train_set: &[TrainSample],
    validation: &[TrainSample],
    base: &RunConfig,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let grid = dedup_grid(grid)?;
    grid.into_iter()
        .map(|z_t| {
            let policy = WeightPolicy { z_threshold: z_t, ..base.weight_policy.unwrap_or_default() };
            let config = RunConfig { weight_policy: Some(policy), ..base.clone() };
            let t = train(model.clone(), train_set, &config, &mut crate::trainer::NoEvaluation)?;
            let s = summarize(&t.model, validation)?;
            Ok(SweepRow { z_t, median_val_rmse: s.median, iqr_low: s.iqr_low, iqr_high: s.iqr_high })
        })
        .collect()
}

pub fn dedup_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let mut out: Vec<f64> = Vec::new();
    for &z in grid {
        if z.is_nan() {
            return Err(Error::Config("threshold grid contains NaN".into()));
        }
        if out.contains(&z) {
            log::warn!("duplicate threshold {z} dropped");
        } else {
            out.push(z);
        }
    }
    Ok(out)
}
