//! Composite per-configuration loss and its squared-weight batch reduction.
//!
//! `L_i = λ_E ℓ_E + λ_F ℓ_F + λ_S ℓ_S` per configuration, and the batch loss
//! `L′ = (1/N_B) Σ w_i² L_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::models::{ModelOutput, OutputGradient};
use crate::sample::Labels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyReduction {
    /// Squared error of the energy divided by the particle count.
    #[default]
    PerAtomMse,
    TotalMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForceReduction {
    /// Mean over all 3N Cartesian components.
    #[default]
    MseOverComponents,
}

/// Which per-sample quantity feeds the outlier statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossChannel {
    #[default]
    Total,
    Force,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossSpec {
    pub lambda_energy: f64,
    pub lambda_force: f64,
    pub lambda_aux: f64,
    #[serde(default)]
    pub energy_reduction: EnergyReduction,
    #[serde(default)]
    pub force_reduction: ForceReduction,
}

impl Default for CompositeLossSpec {
    fn default() -> Self {
        Self {
            lambda_energy: 1.0,
            lambda_force: 10.0,
            lambda_aux: 0.0,
            energy_reduction: EnergyReduction::PerAtomMse,
            force_reduction: ForceReduction::MseOverComponents,
        }
    }
}

impl CompositeLossSpec {
    /// Forces only, unit weight.
    pub fn forces_only() -> Self {
        Self { lambda_energy: 0.0, lambda_force: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ls = [self.lambda_energy, self.lambda_force, self.lambda_aux];
        if ls.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if ls.iter().all(|l| *l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSampleLoss {
    pub total: f64,
    pub energy_term: f64,
    pub force_term: f64,
    pub aux_term: f64,
}

impl PerSampleLoss {
    pub fn channel(&self, channel: LossChannel) -> f64 {
        match channel {
            LossChannel::Total => self.total,
            LossChannel::Force => self.force_term,
        }
    }
}

fn check_shapes(pred: &ModelOutput, labels: &Labels) -> Result<()> {
    if pred.forces.len() != labels.forces.len() {
        return Err(Error::Contract(format!(
            "prediction has {} force vectors, labels have {}",
            pred.forces.len(),
            labels.forces.len()
        )));
    }
    Ok(())
}

fn energy_scale(spec: &CompositeLossSpec, particles: usize) -> f64 {
    match spec.energy_reduction {
        EnergyReduction::PerAtomMse => 1.0 / (particles.max(1) as f64),
        EnergyReduction::TotalMse => 1.0,
    }
}

/// Loss terms for one configuration.
pub fn per_sample_loss(pred: &ModelOutput, labels: &Labels, spec: &CompositeLossSpec) -> Result<PerSampleLoss> {
    check_shapes(pred, labels)?;
    let n = labels.forces.len();
    let de = (pred.energy - labels.energy) * energy_scale(spec, n);
    let energy_term = de * de;
    let force_term = force_mse(&pred.forces, &labels.forces);
    let aux_term = match (pred.aux, labels.aux) {
        (Some(p), Some(r)) => (p - r) * (p - r),
        _ => 0.0,
    };
    let total = spec.lambda_energy * energy_term + spec.lambda_force * force_term + spec.lambda_aux * aux_term;
    Ok(PerSampleLoss { total, energy_term, force_term, aux_term })
}

/// Mean squared error over all Cartesian components; 0 for no particles.
pub fn force_mse(pred: &[Vec3], reference: &[Vec3]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        for c in 0..3 {
            let d = p[c] - r[c];
            sum += d * d;
        }
    }
    sum / (3 * pred.len()) as f64
}

/// Gradient of the total per-sample loss with respect to the model outputs.
pub fn loss_gradient(pred: &ModelOutput, labels: &Labels, spec: &CompositeLossSpec) -> Result<OutputGradient> {
    check_shapes(pred, labels)?;
    let n = labels.forces.len();
    let s = energy_scale(spec, n);
    let energy = spec.lambda_energy * 2.0 * (pred.energy - labels.energy) * s * s;
    let fscale = if n == 0 { 0.0 } else { spec.lambda_force * 2.0 / (3 * n) as f64 };
    let forces = pred
        .forces
        .iter()
        .zip(&labels.forces)
        .map(|(p, r)| [(p[0] - r[0]) * fscale, (p[1] - r[1]) * fscale, (p[2] - r[2]) * fscale])
        .collect();
    let aux = match (pred.aux, labels.aux) {
        (Some(p), Some(r)) => spec.lambda_aux * 2.0 * (p - r),
        _ => 0.0,
    };
    Ok(OutputGradient { energy, forces, aux })
}

/// Plain batch mean of the per-sample totals.
pub fn batch_loss(per_sample: &[PerSampleLoss]) -> f64 {
    per_sample.iter().map(|l| l.total).sum::<f64>() / per_sample.len() as f64
}

/// Squared-weight batch loss `(1/N_B) Σ w_i² L_i`.
pub fn bootstrapped_batch_loss(per_sample: &[PerSampleLoss], weights: &[f64]) -> Result<f64> {
    if per_sample.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} losses but {} weights",
            per_sample.len(),
            weights.len()
        )));
    }
    if per_sample.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Contract("weights must lie in [0, 1]".into()));
    }
    let sum: f64 = per_sample.iter().zip(weights).map(|(l, w)| w * w * l.total).sum();
    Ok(sum / per_sample.len() as f64)
}

/// Soft target `w·y_ref + (1 − w)·y_pred`.
pub fn soft_target(y_pred: f64, y_ref: f64, w: f64) -> f64 {
    w * y_ref + (1.0 - w) * y_pred
}

/// Both sides of the soft-target identity for a scalar L2 channel:
/// `w²(ŷ − y)²` and `(ŷ − y′)²`.
pub fn soft_target_equivalence_check(y_pred: f64, y_ref: f64, w: f64) -> (f64, f64) {
    let d = y_pred - y_ref;
    let lhs = w * w * d * d;
    let r = y_pred - soft_target(y_pred, y_ref, w);
    (lhs, r * r)
}
