//! Iterative refinement baseline: train, score every training sample with
//! whole-set statistics, retrain from scratch with those fixed weights.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{summarize, ErrorSummary};
use crate::loss::{per_sample_loss, LossChannel};
use crate::models::{AnyModel, Model};
use crate::rng::SeedTree;
use crate::sample::TrainSample;
use crate::stats::{batch_moments, sigma_floor};
use crate::trainer::{train_weighted, EpochEvaluator, NoEvaluation, TrainingLog, Weighting};
use crate::weighting::weight_from_z;

/// Share of the total epochs used for the early-stopped first cycle.
pub const EARLY_STOP_SHARE: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementPlan {
    pub cycles: usize,
    pub z_threshold: f64,
    /// Truncates cycle 0 only.
    pub early_stop_epoch: Option<usize>,
    /// Settings for every cycle. A weight policy here makes cycle 0 bootstrapped.
    pub inner_config: RunConfig,
}

impl RefinementPlan {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::Config("refinement needs at least one cycle".into()));
        }
        if self.z_threshold.is_nan() {
            return Err(Error::Config("z threshold is NaN".into()));
        }
        self.inner_config.validate()
    }

    /// `EARLY_STOP_SHARE` of the configured epochs, rounded half-up.
    pub fn default_early_stop(epochs: usize) -> usize {
        (EARLY_STOP_SHARE * epochs as f64 + 0.5).floor() as usize
    }
}

/// Static weights from plain population statistics of the losses.
pub fn static_weights_from_errors(losses: &[f64], z_threshold: f64) -> Result<Vec<f64>> {
    let (mu, var) = batch_moments(losses)?;
    let sigma = var.sqrt().max(sigma_floor(mu));
    Ok(losses.iter().map(|l| weight_from_z((l - mu) / sigma, z_threshold)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub cycle: usize,
    pub median_force_rmse: f64,
    pub iqr_low: f64,
    pub iqr_high: f64,
    pub variant: String,
}

pub struct Cycle {
    pub model: AnyModel,
    /// Weights used to train this cycle's model.
    pub train_weights: Vec<f64>,
    /// Weights derived from this cycle's model, for the next cycle.
    pub next_weights: Vec<f64>,
    pub validation: ErrorSummary,
    pub epochs: usize,
    pub log: TrainingLog,
}

pub struct Refinement {
    pub cycles: Vec<Cycle>,
}

impl Refinement {
    pub fn table(&self, variant: &str) -> Vec<ErrorRow> {
        self.cycles
            .iter()
            .enumerate()
            .map(|(cycle, c)| ErrorRow {
                cycle,
                median_force_rmse: c.validation.median,
                iqr_low: c.validation.iqr_low,
                iqr_high: c.validation.iqr_high,
                variant: variant.to_string(),
            })
            .collect()
    }

    pub fn last(&self) -> &Cycle {
        self.cycles.last().expect("at least one cycle")
    }
}

fn scores(model: &AnyModel, samples: &[TrainSample], config: &RunConfig) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let l = per_sample_loss(&model.forward(&s.positions)?, &s.labels, &config.loss_spec)?;
            Ok(match config.loss_channel {
                LossChannel::Total => l.total,
                LossChannel::Force => l.force_term,
            })
        })
        .collect()
}

/// Run `plan.cycles` trainings; `validation` carries the labels errors are measured against.
pub fn refine(train_set: &[TrainSample], validation: &[TrainSample], plan: &RefinementPlan) -> Result<Refinement> {
    refine_observed(train_set, validation, plan, &mut |_| Box::new(NoEvaluation))
}

/// As [`refine`], with a fresh epoch evaluator per cycle.
pub fn refine_observed(
    train_set: &[TrainSample],
    validation: &[TrainSample],
    plan: &RefinementPlan,
    evaluator: &mut dyn FnMut(usize) -> Box<dyn EpochEvaluator>,
) -> Result<Refinement> {
    plan.validate()?;
    let mut cycles: Vec<Cycle> = Vec::with_capacity(plan.cycles);
    for cycle in 0..plan.cycles {
        let mut config = plan.inner_config.clone();
        if cycle == 0 {
            if let Some(e) = plan.early_stop_epoch {
                config.epochs = e;
            }
        } else {
            config.weight_policy = None;
        }
        // fresh initialization every cycle
        let model = config.model.build(&SeedTree::new(config.seed))?;
        let mut ev = evaluator(cycle);
        let (trained, train_weights) = match cycles.last() {
            None => (train_weighted(model, train_set, &config, Weighting::Dynamic, ev.as_mut())?, vec![1.0; train_set.len()]),
            Some(prev) => {
                let w = prev.next_weights.clone();
                (train_weighted(model, train_set, &config, Weighting::Static(&w), ev.as_mut())?, w)
            }
        };
        let next_weights = static_weights_from_errors(&scores(&trained.model, train_set, &config)?, plan.z_threshold)?;
        let validation = summarize(&trained.model, validation)?;
        log::info!("refinement cycle {cycle}: median validation force RMSE {:.4e}", validation.median);
        cycles.push(Cycle {
            model: trained.model,
            train_weights,
            next_weights,
            validation,
            epochs: config.epochs,
            log: trained.log,
        });
    }
    Ok(Refinement { cycles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::normal_cdf;

    #[test]
    fn equal_losses_give_phi_threshold() {
        let w = static_weights_from_errors(&[2.0; 5], 3.0).unwrap();
        for v in w {
            assert!((v - normal_cdf(3.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn five_sigma_outlier() {
        // one outlier among n samples has population z = √(n − 1); n = 26 gives 5
        let mut l = vec![0.0; 25];
        l.push(1.0);
        let w = static_weights_from_errors(&l, 3.0).unwrap();
        let expected = 0.5 * (1.0 + libm::erf(-2.0 / std::f64::consts::SQRT_2));
        assert!((w[25] - expected).abs() < 1e-12);
        assert!((expected - 0.0228).abs() < 1e-4);
    }

    #[test]
    fn two_samples() {
        let w = static_weights_from_errors(&[1.0, 3.0], 1.28).unwrap();
        assert!((w[0] - normal_cdf(1.28 + 1.0)).abs() < 1e-15);
        assert!((w[1] - normal_cdf(1.28 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn early_stop_share() {
        assert_eq!(RefinementPlan::default_early_stop(2000), 240);
        assert_eq!(RefinementPlan::default_early_stop(500), 60);
    }

    #[test]
    fn zero_cycles_rejected() {
        let plan = RefinementPlan { cycles: 0, z_threshold: 1.0, early_stop_epoch: None, inner_config: RunConfig::default() };
        assert!(plan.validate().is_err());
    }
}
