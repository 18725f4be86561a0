//! Running Gaussian model of the per-sample loss distribution.
//!
//! The loss after `β` batches is modelled as `N(μ_β, σ²_β)`, with both
//! moments tracked as exponential moving averages of the batch moments:
//!
//! ```text
//! μ_β  = (1 − α) μ_{β−1}  + α μ_batch
//! σ²_β = (1 − α) σ²_{β−1} + α σ²_batch
//! ```
//!
//! The first update adopts the batch moments directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// EMA state of the loss mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    mu: f64,
    var: f64,
    alpha: f64,
    batches_seen: u64,
    initialized: bool,
}

impl LossStats {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("EMA rate {alpha} outside (0, 1]")));
        }
        Ok(Self { mu: 0.0, var: 0.0, alpha, batches_seen: 0, initialized: false })
    }

    /// Already-initialized statistics, mostly for tests and replay.
    pub fn from_parts(mu: f64, var: f64, alpha: f64, batches_seen: u64) -> Result<Self> {
        let mut s = Self::new(alpha)?;
        if !(var >= 0.0) {
            return Err(Error::Contract(format!("variance {var} must be nonnegative")));
        }
        s.mu = mu;
        s.var = var;
        s.batches_seen = batches_seen;
        s.initialized = true;
        Ok(s)
    }

    /// EMA rate for `n` batches per epoch.
    ///
    /// Large epochs (`n > 100`) keep 99% of the previous state per batch.
    /// Shorter epochs use `1 − 0.01^(1/n)`, so the state one epoch back has
    /// decayed to 1%.
    pub fn alpha_for_batches(n: usize) -> f64 {
        if n > 100 {
            0.01
        } else {
            1.0 - 0.01f64.powf(1.0 / n.max(1) as f64)
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn mu(&self) -> Result<f64> {
        self.initialized.then_some(self.mu).ok_or(Error::Uninitialized)
    }

    pub fn var(&self) -> Result<f64> {
        self.initialized.then_some(self.var).ok_or(Error::Uninitialized)
    }

    pub fn sigma(&self) -> Result<f64> {
        self.var().map(f64::sqrt)
    }

    /// Fold one batch's moments into the running state.
    pub fn update(&self, batch_mean: f64, batch_var: f64) -> Result<Self> {
        if !(batch_var >= 0.0) {
            return Err(Error::Contract(format!("batch variance {batch_var} must be nonnegative")));
        }
        let mut next = *self;
        if self.initialized {
            next.mu = (1.0 - self.alpha) * self.mu + self.alpha * batch_mean;
            next.var = (1.0 - self.alpha) * self.var + self.alpha * batch_var;
        } else {
            next.mu = batch_mean;
            next.var = batch_var;
            next.initialized = true;
        }
        next.batches_seen += 1;
        Ok(next)
    }

    /// Standard score of `loss` under the tracked distribution.
    pub fn z_score(&self, loss: f64) -> Result<f64> {
        let mu = self.mu()?;
        let sigma = self.var.sqrt().max(sigma_floor(mu));
        Ok((loss - mu) / sigma)
    }
}

/// Lower bound on σ used by z-scores: `1e-12·max(|μ|, 1) + 1e-30`.
pub fn sigma_floor(mu: f64) -> f64 {
    1e-12 * mu.abs().max(1.0) + 1e-30
}

/// Arithmetic mean and population variance (divide by `N`).
pub fn batch_moments(losses: &[f64]) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::Contract("batch moments of an empty batch".into()));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    Ok((mean, var))
}

/// Average worker statistics into one state to redistribute.
///
/// `mu` and `var` are plain means of the worker values, summed exactly so the
/// result does not depend on worker order; `batches_seen` is the total.
pub fn merge_across_workers(stats: &[LossStats]) -> Result<LossStats> {
    let first = stats.first().ok_or_else(|| Error::Contract("no worker statistics to merge".into()))?;
    if stats.iter().any(|s| s.alpha != first.alpha) {
        return Err(Error::Config("workers disagree on the EMA rate".into()));
    }
    if stats.iter().any(|s| !s.initialized) {
        return Err(Error::Uninitialized);
    }
    let n = stats.len() as f64;
    let mus: Vec<f64> = stats.iter().map(|s| s.mu).collect();
    let vars: Vec<f64> = stats.iter().map(|s| s.var).collect();
    Ok(LossStats {
        mu: exact_sum(&mus) / n,
        var: exact_sum(&vars) / n,
        alpha: first.alpha,
        batches_seen: stats.iter().map(|s| s.batches_seen).sum(),
        initialized: true,
    })
}

/// Correctly rounded sum of finite floats (Shewchuk's partials).
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // Round the partials (largest last) to nearest, handling half-way cases.
    let mut total = 0.0;
    if let Some(mut top) = partials.pop() {
        total = top;
        while let Some(next) = partials.pop() {
            let x = top;
            let y = next;
            total = x + y;
            let yr = total - x;
            let lo = y - yr;
            if lo != 0.0 {
                if let Some(&below) = partials.last() {
                    if (lo < 0.0 && below < 0.0) || (lo > 0.0 && below > 0.0) {
                        let y2 = lo * 2.0;
                        let x2 = total + y2;
                        if y2 == x2 - total {
                            total = x2;
                        }
                    }
                }
                break;
            }
            top = total;
        }
    }
    total
}
