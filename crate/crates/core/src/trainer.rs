//! Training loop: unit-weight, dynamically bootstrapped, or statically weighted.
//!
//! Per batch, in order: forward pass and per-sample losses; if bootstrapping,
//! fold the batch's unweighted loss moments into the worker's statistics
//! (when the schedule allows), then score and weight the batch against the
//! updated statistics; backpropagate `(1/N_B) Σ w_i² L_i`; optimizer step.
//! Batch `b` of an epoch belongs to worker `b mod W`. At epoch end the
//! workers' statistics are averaged and every worker continues from the mean.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::loss::{loss_gradient, per_sample_loss, CompositeLossSpec, PerSampleLoss};
use crate::models::{AnyModel, Model};
use crate::optim::{optimizer_step, OptimizerState};
use crate::rng::SeedTree;
use crate::sample::{Batch, TrainSample};
use crate::stats::{batch_moments, merge_across_workers, LossStats};
use crate::weighting::{check_mean_weight, should_update_stats, weights_for_batch, MonitorVerdict};

/// Metrics an evaluator may report at the end of an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub train_rmse_clean_subset: Option<f64>,
    pub train_rmse_noisy_subset: Option<f64>,
    /// Corrupted training samples scored against their hidden true labels.
    pub noisy_truth_rmse: Option<f64>,
    pub validation_rmse: Option<f64>,
}

/// Called after every epoch. This is the only place where provenance or
/// hidden labels may be consulted; the training path never sees them.
pub trait EpochEvaluator {
    fn evaluate(&mut self, epoch: usize, model: &AnyModel) -> Result<EpochMetrics>;
}

impl<F: FnMut(usize, &AnyModel) -> Result<EpochMetrics>> EpochEvaluator for F {
    fn evaluate(&mut self, epoch: usize, model: &AnyModel) -> Result<EpochMetrics> {
        self(epoch, model)
    }
}

pub struct NoEvaluation;

impl EpochEvaluator for NoEvaluation {
    fn evaluate(&mut self, _: usize, _: &AnyModel) -> Result<EpochMetrics> {
        Ok(EpochMetrics::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub metrics: EpochMetrics,
    /// Mean of all weights applied during the epoch.
    pub mean_weight: f64,
    /// Batches whose mean weight fell below the warning floor.
    pub warnings: usize,
    /// Mean bootstrapped batch loss over the epoch.
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: u64,
    pub epoch: usize,
    pub loss: f64,
    pub z_score: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaPoint {
    /// Batch counter across the whole run.
    pub batch_index: usize,
    pub epoch: usize,
    pub worker: usize,
    pub mu: f64,
    pub sigma: f64,
    pub batch_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub epoch: usize,
    pub worker_mu: Vec<f64>,
    pub worker_var: Vec<f64>,
    pub mu: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<SampleScore>,
    pub ema_trace: Vec<EmaPoint>,
    pub merges: Vec<MergeRecord>,
    /// Every training sample scored with the final model and statistics.
    pub final_scores: Vec<SampleScore>,
    pub final_stats: Option<LossStats>,
    /// Parameters after each epoch, when requested.
    pub trajectory: Vec<Vec<f64>>,
    /// FNV-1a over the parameter bits after every optimizer step.
    pub step_digest: u64,
}

/// How per-sample weights are chosen.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// From the run config: bootstrapped if it carries a weight policy, else unit.
    Dynamic,
    /// Fixed weights aligned with the training set.
    Static(&'a [f64]),
}

pub struct Trained {
    pub model: AnyModel,
    pub log: TrainingLog,
}

fn digest_params(mut h: u64, params: &[f64]) -> u64 {
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn check_finite(l: &PerSampleLoss, id: u64) -> Result<()> {
    if l.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { quantity: "loss", sample_id: id })
    }
}

pub fn train(
    model: AnyModel,
    train_set: &[TrainSample],
    config: &RunConfig,
    evaluator: &mut dyn EpochEvaluator,
) -> Result<Trained> {
    train_weighted(model, train_set, config, Weighting::Dynamic, evaluator)
}

pub fn train_weighted(
    mut model: AnyModel,
    train_set: &[TrainSample],
    config: &RunConfig,
    weighting: Weighting<'_>,
    evaluator: &mut dyn EpochEvaluator,
) -> Result<Trained> {
    config.validate()?;
    if let Weighting::Static(w) = weighting {
        if w.len() != train_set.len() {
            return Err(Error::Contract(format!("{} static weights for {} samples", w.len(), train_set.len())));
        }
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("static weights must lie in [0, 1]".into()));
        }
    }
    let mut log = TrainingLog { step_digest: 0xcbf2_9ce4_8422_2325, ..Default::default() };
    if config.epochs == 0 {
        return Ok(Trained { model, log });
    }
    if train_set.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let policy = match weighting {
        Weighting::Dynamic => config.weight_policy,
        Weighting::Static(_) => None,
    };
    let bs = config.batch_size;
    let n_batches = train_set.len().div_ceil(bs);
    let workers = config.workers;
    let per_worker = n_batches.div_ceil(workers);
    let alpha = config.ema_alpha.unwrap_or_else(|| LossStats::alpha_for_batches(per_worker));
    let mut stats = vec![LossStats::new(alpha)?; workers];
    let mut opt = OptimizerState::new(config.optimizer, model.n_params());
    let mut shuffle = SeedTree::new(config.seed).stream("shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; model.n_params()];
    let mut global_batch = 0usize;

    for epoch in 0..config.epochs {
        let lr = config.lr_schedule.rate(config.learning_rate, epoch, config.epochs);
        order.shuffle(&mut shuffle);
        let snapshot = config.snapshot_every > 0 && (epoch % config.snapshot_every == 0 || epoch + 1 == config.epochs);
        let (mut weight_sum, mut weight_count, mut warnings, mut loss_sum) = (0.0, 0usize, 0usize, 0.0);

        for (b, idx) in order.chunks(bs).enumerate() {
            let refs: Vec<&TrainSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::new(&refs)?;
            let worker = b % workers;
            let local = b / workers;

            let mut outputs = Vec::with_capacity(batch.size());
            let mut losses = Vec::with_capacity(batch.size());
            for s in batch.samples() {
                let out = model.forward(&s.positions)?;
                let l = per_sample_loss(&out, &s.labels, &config.loss_spec)?;
                check_finite(&l, s.id)?;
                outputs.push(out);
                losses.push(l);
            }

            let mut z_scores: Vec<Option<f64>> = vec![None; batch.size()];
            let weights: Vec<f64> = match (weighting, &policy) {
                (Weighting::Static(w), _) => idx.iter().map(|&i| w[i]).collect(),
                (Weighting::Dynamic, None) => vec![1.0; batch.size()],
                (Weighting::Dynamic, Some(p)) => {
                    let scores: Vec<f64> = losses.iter().map(|l| l.channel(config.loss_channel)).collect();
                    if should_update_stats(epoch, local, config.epochs, p) {
                        let (m, v) = batch_moments(&scores)?;
                        stats[worker] = stats[worker].update(m, v)?;
                        log.ema_trace.push(EmaPoint {
                            batch_index: global_batch,
                            epoch,
                            worker,
                            mu: stats[worker].mu()?,
                            sigma: stats[worker].sigma()?,
                            batch_mean: m,
                        });
                    }
                    let w = weights_for_batch(&scores, &stats[worker], p)?;
                    for (z, &s) in z_scores.iter_mut().zip(&scores) {
                        *z = Some(stats[worker].z_score(s)?);
                    }
                    if let MonitorVerdict::Warn(mean) = check_mean_weight(&w, p)? {
                        log::debug!("epoch {epoch} batch {b}: mean weight {mean:.3} below floor");
                        warnings += 1;
                    }
                    w
                }
            };

            grad.iter_mut().for_each(|g| *g = 0.0);
            let nb = batch.size() as f64;
            let mut batch_loss = 0.0;
            for ((s, out), (l, &w)) in batch.samples().iter().zip(&outputs).zip(losses.iter().zip(&weights)) {
                let scale = w * w / nb;
                batch_loss += scale * l.total;
                if scale == 0.0 {
                    continue;
                }
                let up = loss_gradient(out, &s.labels, &config.loss_spec)?.scaled(scale);
                model.backward(&s.positions, &up, &mut grad)?;
            }
            optimizer_step(model.params_mut(), &grad, &mut opt, lr)?;
            log.step_digest = digest_params(log.step_digest, model.params());

            weight_sum += weights.iter().sum::<f64>();
            weight_count += weights.len();
            loss_sum += batch_loss;
            if snapshot {
                for ((s, l), (&w, z)) in batch.samples().iter().zip(&losses).zip(weights.iter().zip(&z_scores)) {
                    log.snapshots.push(SampleScore { sample_id: s.id, epoch, loss: l.total, z_score: *z, weight: w });
                }
            }
            global_batch += 1;
        }

        if workers > 1 && policy.is_some() {
            let live: Vec<LossStats> = stats.iter().copied().filter(LossStats::is_initialized).collect();
            if !live.is_empty() {
                let merged = merge_across_workers(&live)?;
                log.merges.push(MergeRecord {
                    epoch,
                    worker_mu: live.iter().map(|s| s.mu()).collect::<Result<_>>()?,
                    worker_var: live.iter().map(|s| s.var()).collect::<Result<_>>()?,
                    mu: merged.mu()?,
                    var: merged.var()?,
                });
                stats.iter_mut().for_each(|s| *s = merged);
            }
        }

        let metrics = evaluator.evaluate(epoch, &model)?;
        log.epochs.push(EpochRecord {
            epoch,
            metrics,
            mean_weight: weight_sum / weight_count as f64,
            warnings,
            train_loss: loss_sum / n_batches as f64,
        });
        if warnings > 0 {
            log::warn!("epoch {epoch}: {warnings} batches below the mean-weight floor");
        }
        if config.record_trajectory {
            log.trajectory.push(model.params().to_vec());
        }
    }

    let final_stats = policy.map(|_| stats[0]);
    log.final_stats = final_stats.filter(LossStats::is_initialized);
    for (i, s) in train_set.iter().enumerate() {
        let l = per_sample_loss(&model.forward(&s.positions)?, &s.labels, &config.loss_spec)?;
        check_finite(&l, s.id)?;
        let (z, w) = match (weighting, &policy, &log.final_stats) {
            (Weighting::Static(w), _, _) => (None, w[i]),
            (_, Some(p), Some(st)) => {
                let score = l.channel(config.loss_channel);
                (Some(st.z_score(score)?), weights_for_batch(&[score], st, p)?[0])
            }
            _ => (None, 1.0),
        };
        log.final_scores.push(SampleScore { sample_id: s.id, epoch: config.epochs, loss: l.total, z_score: z, weight: w });
    }
    Ok(Trained { model, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub energy_rmse: f64,
    pub force_rmse: f64,
    /// (sample id, force RMSE of that sample)
    pub per_sample: Vec<(u64, f64)>,
}

/// Energy and force RMSE over a set; forces pooled over all components.
pub fn evaluate(model: &dyn Model, samples: &[TrainSample], spec: &CompositeLossSpec) -> Result<Evaluation> {
    let mut e2 = 0.0;
    let mut f2 = 0.0;
    let mut components = 0usize;
    let mut per_sample = Vec::with_capacity(samples.len());
    for s in samples {
        let out = model.forward(&s.positions)?;
        let l = per_sample_loss(&out, &s.labels, spec)?;
        let de = out.energy - s.labels.energy;
        e2 += de * de;
        f2 += l.force_term * (3 * s.positions.len()) as f64;
        components += 3 * s.positions.len();
        per_sample.push((s.id, l.force_term.sqrt()));
    }
    let energy_rmse = if samples.is_empty() { 0.0 } else { (e2 / samples.len() as f64).sqrt() };
    let force_rmse = if components == 0 { 0.0 } else { (f2 / components as f64).sqrt() };
    Ok(Evaluation { energy_rmse, force_rmse, per_sample })
}

/// Force RMSE only.
pub fn force_rmse(model: &dyn Model, samples: &[TrainSample]) -> Result<f64> {
    Ok(evaluate(model, samples, &CompositeLossSpec::forces_only())?.force_rmse)
}
