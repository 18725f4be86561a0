//! Run configuration shared by the trainer, refinement and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{CompositeLossSpec, LossChannel};
use crate::models::ModelConfig;
use crate::optim::{LrSchedule, OptimizerKind};
use crate::weighting::WeightPolicy;

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.15;
pub const DEFAULT_BATCH_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub loss_spec: CompositeLossSpec,
    /// `None` trains with unit weights.
    pub weight_policy: Option<WeightPolicy>,
    /// Quantity whose distribution is tracked for outlier scoring.
    pub loss_channel: LossChannel,
    /// EMA rate; `None` derives it from the number of batches per worker.
    pub ema_alpha: Option<f64>,
    pub workers: usize,
    pub validation_fraction: f64,
    pub model: ModelConfig,
    /// Per-sample snapshot period in epochs; 0 disables snapshots.
    pub snapshot_every: usize,
    /// Keep a copy of the parameters after every epoch.
    pub record_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 500,
            learning_rate: 3e-4,
            lr_schedule: LrSchedule::Constant,
            optimizer: OptimizerKind::Sgd,
            loss_spec: CompositeLossSpec::default(),
            weight_policy: None,
            loss_channel: LossChannel::Total,
            ema_alpha: None,
            workers: 1,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            model: ModelConfig::default(),
            snapshot_every: 0,
            record_trajectory: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.lr_schedule.validate()?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!("validation fraction {} outside (0, 1)", self.validation_fraction)));
        }
        if let Some(a) = self.ema_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("EMA rate {a} outside (0, 1]")));
            }
        }
        if let Some(p) = &self.weight_policy {
            p.validate()?;
        }
        self.loss_spec.validate()
    }

    pub fn bootstrapping(&self) -> bool {
        self.weight_policy.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.validation_fraction, 0.15);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }

    #[test]
    fn infinite_threshold_serializes() {
        let c = RunConfig { weight_policy: Some(WeightPolicy::with_threshold(f64::INFINITY)), ..Default::default() };
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.weight_policy.unwrap().z_threshold, f64::INFINITY);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"epochs": 3, "workers": 2}"#).unwrap();
        assert_eq!((c.epochs, c.workers, c.batch_size), (3, 2, 8));
        assert!(serde_json::from_str::<RunConfig>(r#"{"epochz": 3}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            RunConfig { batch_size: 0, ..Default::default() },
            RunConfig { workers: 0, ..Default::default() },
            RunConfig { learning_rate: -1.0, ..Default::default() },
            RunConfig { validation_fraction: 1.0, ..Default::default() },
            RunConfig { ema_alpha: Some(0.0), ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
