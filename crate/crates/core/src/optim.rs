//! Parameter updates: plain gradient descent and bias-corrected adaptive moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdaptiveMoments,
}

/// Learning rate as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate at epoch 0 to `floor` times it at the last epoch.
    Cosine { floor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { floor } => {
                let t = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
                base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Cosine { floor } if !(0.0..=1.0).contains(&floor) => {
                Err(Error::Config(format!("cosine floor {floor} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Sgd,
    AdaptiveMoments { m: Vec<f64>, v: Vec<f64>, step: u64 },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::AdaptiveMoments => {
                OptimizerState::AdaptiveMoments { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
            }
        }
    }
}

/// One update in place. Rejects non-finite gradients before touching anything.
pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    match state {
        OptimizerState::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerState::AdaptiveMoments { m, v, step } => {
            if m.len() != params.len() {
                return Err(Error::Contract("optimizer state has wrong length".into()));
            }
            *step += 1;
            let c1 = 1.0 - BETA1.powi(*step as i32);
            let c2 = 1.0 - BETA2.powi(*step as i32);
            for i in 0..params.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
                params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = [1.0];
        optimizer_step(&mut p, &[2.0], &mut OptimizerState::Sgd, 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient() {
        let mut p = [1.0, -2.0];
        optimizer_step(&mut p, &[0.0, 0.0], &mut OptimizerState::Sgd, 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        let mut st = OptimizerState::new(OptimizerKind::AdaptiveMoments, 2);
        optimizer_step(&mut p, &[0.0, 0.0], &mut st, 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert!(matches!(st, OptimizerState::AdaptiveMoments { step: 1, .. }));
    }

    #[test]
    fn adaptive_first_step_is_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = lr/(1 + ε)
        let mut p = [0.0; 3];
        let mut st = OptimizerState::new(OptimizerKind::AdaptiveMoments, 3);
        optimizer_step(&mut p, &[1.0; 3], &mut st, 0.01).unwrap();
        for v in p {
            assert!((v + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = [1.0, 1.0];
        let r = optimizer_step(&mut p, &[0.5, f64::NAN], &mut OptimizerState::Sgd, 0.1);
        assert!(matches!(r, Err(Error::NonFiniteGradient { index: 1 })));
        assert_eq!(p, [1.0, 1.0]);
    }

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::Cosine { floor: 0.1 };
        assert_eq!(s.rate(2.0, 0, 11), 2.0);
        assert!((s.rate(2.0, 10, 11) - 0.2).abs() < 1e-15);
        assert!((s.rate(2.0, 5, 11) - 1.1).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.rate(2.0, 7, 11), 2.0);
        assert!(LrSchedule::Cosine { floor: 1.5 }.validate().is_err());
    }
}
