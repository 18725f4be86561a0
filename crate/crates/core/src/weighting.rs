//! Confidence weights from z-scores, batch monitoring and the statistics
//! update schedule.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::LossStats;

pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;
pub const DEFAULT_WARN_FLOOR: f64 = 0.25;

/// How often the loss statistics are refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateSchedule {
    /// Update every `period` batches throughout.
    Constant { period: usize },
    /// Every `early` batches during the first half of training, every
    /// `late` batches afterwards.
    Halving { early: usize, late: usize },
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        UpdateSchedule::Halving { early: 1, late: 4 }
    }
}

impl UpdateSchedule {
    pub fn period(&self, epoch: usize, total_epochs: usize) -> usize {
        match *self {
            UpdateSchedule::Constant { period } => period.max(1),
            UpdateSchedule::Halving { early, late } => {
                if 2 * epoch < total_epochs {
                    early.max(1)
                } else {
                    late.max(1)
                }
            }
        }
    }
}

/// Outlier-weighting hyperparameters for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPolicy {
    /// z-score where the weight crosses 0.5. `f64::INFINITY` disables
    /// down-weighting while keeping the statistics bookkeeping.
    #[serde(with = "float_or_inf")]
    pub z_threshold: f64,
    /// Batch-mean weight below which a warning is raised.
    pub warn_floor: f64,
    #[serde(default)]
    pub schedule: UpdateSchedule,
}

impl Default for WeightPolicy {
    fn default() -> Self {
        Self { z_threshold: DEFAULT_Z_THRESHOLD, warn_floor: DEFAULT_WARN_FLOOR, schedule: UpdateSchedule::default() }
    }
}

impl WeightPolicy {
    pub fn with_threshold(z_threshold: f64) -> Self {
        Self { z_threshold, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_threshold.is_nan() {
            return Err(Error::Config("z threshold is NaN".into()));
        }
        if !(self.warn_floor > 0.0 && self.warn_floor < 1.0) {
            return Err(Error::Config(format!("warn floor {} outside (0, 1)", self.warn_floor)));
        }
        Ok(())
    }
}

/// Gaussian-CDF soft threshold: `½[1 + erf((z_t − z)/√2)]`.
///
/// Evaluated as `½ erfc((z − z_t)/√2)`, which is the same function but keeps
/// full relative precision in the far tail where weights are tiny.
///
/// ```
/// use nrt::weighting::weight_from_z;
/// assert_eq!(weight_from_z(3.0, 3.0), 0.5);
/// assert!((weight_from_z(0.0, 3.0) - 0.998_650_101_968_369_9).abs() < 1e-15);
/// assert_eq!(weight_from_z(10.0, f64::INFINITY), 1.0);
/// ```
pub fn weight_from_z(z: f64, z_threshold: f64) -> f64 {
    0.5 * libm::erfc((z - z_threshold) / SQRT_2)
}

/// Per-sample weights for one batch of losses.
pub fn weights_for_batch(losses: &[f64], stats: &LossStats, policy: &WeightPolicy) -> Result<Vec<f64>> {
    losses
        .iter()
        .map(|&l| stats.z_score(l).map(|z| weight_from_z(z, policy.z_threshold)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonitorVerdict {
    Ok,
    /// Batch-mean weight fell below the floor.
    Warn(f64),
}

/// Compare the batch-mean weight with the policy's floor (inclusive).
pub fn check_mean_weight(weights: &[f64], policy: &WeightPolicy) -> Result<MonitorVerdict> {
    if weights.is_empty() {
        return Err(Error::Contract("mean weight of an empty batch".into()));
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    Ok(if mean < policy.warn_floor { MonitorVerdict::Warn(mean) } else { MonitorVerdict::Ok })
}

pub fn should_update_stats(epoch: usize, batch_index: usize, total_epochs: usize, policy: &WeightPolicy) -> bool {
    batch_index % policy.schedule.period(epoch, total_epochs) == 0
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`.
///
/// Rational initial guess (Acklam) polished with one Halley step against
/// [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile probability {p} outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
        1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
        6.680131188771972e+01, -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
        -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// Threshold matching an expected outlier share `f`: `Φ⁻¹(1 − f)`.
pub fn threshold_for_outlier_fraction(fraction: f64) -> Result<f64> {
    normal_quantile(1.0 - fraction)
}

mod float_or_inf {
    //! JSON has no infinity; store it as the string "inf".
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}
