use nrt::config::RunConfig;
use nrt::datagen::{corrupt, generate_clean, GeneratorConfig, NoiseSpec};
use nrt::loss::{CompositeLossSpec, LossChannel};
use nrt::models::{Activation, AnyModel, Model, ModelConfig};
use nrt::optim::OptimizerKind;
use nrt::rng::SeedTree;
use nrt::sample::{training_views, LabeledSample, Labels, Provenance, TrainSample};
use nrt::stats::exact_sum;
use nrt::trainer::{evaluate, train, train_weighted, NoEvaluation, Weighting};
use nrt::weighting::WeightPolicy;
use nrt::Error;

fn small_config() -> RunConfig {
    RunConfig {
        seed: 5,
        epochs: 4,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::AdaptiveMoments,
        loss_spec: CompositeLossSpec::forces_only(),
        loss_channel: LossChannel::Force,
        model: ModelConfig::PairMlp { cutoff: 3.0, hidden_widths: vec![6, 6], activation: Activation::Tanh, radial_basis: 0 },
        record_trajectory: true,
        ..RunConfig::default()
    }
}

fn noisy_samples(n: usize) -> Vec<LabeledSample> {
    let clean = generate_clean(&GeneratorConfig { n, seed: 2, ..Default::default() }).unwrap();
    corrupt(&clean, &NoiseSpec { force_noise_magnitude: (1.0, 1.2), ..Default::default() }, 4).unwrap()
}

fn fresh(config: &RunConfig) -> AnyModel {
    config.model.build(&SeedTree::new(config.seed)).unwrap()
}

#[test]
fn zero_epochs_leaves_model_untouched() {
    let config = RunConfig { epochs: 0, ..small_config() };
    let m = fresh(&config);
    let t = train(m.clone(), &training_views(&noisy_samples(20)), &config, &mut NoEvaluation).unwrap();
    assert_eq!(t.model, m);
    assert!(t.log.epochs.is_empty());
}

#[test]
fn same_seed_same_log() {
    let data = training_views(&noisy_samples(40));
    let config = RunConfig { weight_policy: Some(WeightPolicy::with_threshold(1.0)), snapshot_every: 2, ..small_config() };
    let a = train(fresh(&config), &data, &config, &mut NoEvaluation).unwrap();
    let b = train(fresh(&config), &data, &config, &mut NoEvaluation).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    let other = RunConfig { seed: 6, ..config };
    let c = train(fresh(&other), &data, &other, &mut NoEvaluation).unwrap();
    assert_ne!(a.log.step_digest, c.log.step_digest);
}

#[test]
fn infinite_threshold_matches_vanilla_bit_for_bit() {
    let data = training_views(&noisy_samples(40));
    let vanilla = small_config();
    let sentinel = RunConfig { weight_policy: Some(WeightPolicy::with_threshold(f64::INFINITY)), ..small_config() };
    let a = train(fresh(&vanilla), &data, &vanilla, &mut NoEvaluation).unwrap();
    let b = train(fresh(&sentinel), &data, &sentinel, &mut NoEvaluation).unwrap();
    assert_eq!(a.log.trajectory, b.log.trajectory);
    assert_eq!(a.log.step_digest, b.log.step_digest);
    assert!(b.log.final_scores.iter().all(|s| s.weight == 1.0));
    assert!(!b.log.ema_trace.is_empty());
}

#[test]
fn provenance_tags_do_not_reach_training() {
    let samples = noisy_samples(30);
    let flipped: Vec<LabeledSample> = samples
        .iter()
        .map(|s| {
            let p = match s.provenance() {
                Provenance::Clean => Provenance::Corrupted,
                Provenance::Corrupted => Provenance::Clean,
            };
            LabeledSample::new(s.id(), s.positions().to_vec(), s.labels().clone(), p).unwrap()
        })
        .collect();
    let config = RunConfig { weight_policy: Some(WeightPolicy::with_threshold(1.0)), ..small_config() };
    let a = train(fresh(&config), &training_views(&samples), &config, &mut NoEvaluation).unwrap();
    let b = train(fresh(&config), &training_views(&flipped), &config, &mut NoEvaluation).unwrap();
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn suppressed_sample_contributes_nothing() {
    // one SGD step on a single full batch: the update is linear in Σ w_i² ∇L_i
    let data = training_views(&noisy_samples(8));
    let config = RunConfig { epochs: 1, batch_size: 8, optimizer: OptimizerKind::Sgd, ..small_config() };
    let m0 = fresh(&config);
    let step = |w: &[f64]| -> Vec<f64> {
        let t = train_weighted(m0.clone(), &data, &config, Weighting::Static(w), &mut NoEvaluation).unwrap();
        t.model.params().iter().zip(m0.params()).map(|(a, b)| a - b).collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut only = vec![0.0; 8];
    only[3] = 1.0;
    let unweighted = step(&only);
    only[3] = 1e-7;
    let suppressed = step(&only);
    assert!(norm(&unweighted) > 0.0);
    assert!(norm(&suppressed) < 1e-6 * norm(&unweighted));
}

#[test]
fn four_workers_merge_to_exact_means() {
    let data = training_views(&noisy_samples(80));
    let config = RunConfig { workers: 4, weight_policy: Some(WeightPolicy::with_threshold(1.28)), ..small_config() };
    let t = train(fresh(&config), &data, &config, &mut NoEvaluation).unwrap();
    assert_eq!(t.log.merges.len(), config.epochs);
    for m in &t.log.merges {
        assert_eq!(m.worker_mu.len(), 4);
        assert_eq!(m.mu, exact_sum(&m.worker_mu) / 4.0);
        assert_eq!(m.var, exact_sum(&m.worker_var) / 4.0);
        let naive = m.worker_mu.iter().sum::<f64>() / 4.0;
        assert!((m.mu - naive).abs() <= 4.0 * f64::EPSILON * naive.abs());
        let mut rev = m.worker_mu.clone();
        rev.reverse();
        assert_eq!(exact_sum(&rev) / 4.0, m.mu);
    }
    // every worker resumes from the merged state
    let workers_after_first: Vec<_> = t.log.ema_trace.iter().filter(|p| p.epoch == 1).take(4).collect();
    assert_eq!(workers_after_first.iter().map(|p| p.worker).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn non_finite_label_names_the_sample() {
    let mut samples = noisy_samples(10);
    let bad = &samples[7];
    let mut labels = bad.labels().clone();
    labels.forces[0][1] = f64::NAN;
    samples[7] = LabeledSample::new(bad.id(), bad.positions().to_vec(), labels, Provenance::Clean).unwrap();
    let r = train(fresh(&small_config()), &training_views(&samples), &small_config(), &mut NoEvaluation);
    assert!(matches!(r, Err(Error::NonFinite { sample_id: 7, .. })));
}

#[test]
fn static_weight_length_checked() {
    let data = training_views(&noisy_samples(10));
    let r = train_weighted(fresh(&small_config()), &data, &small_config(), Weighting::Static(&[1.0; 3]), &mut NoEvaluation);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn unit_weights_report_mean_one() {
    let data = training_views(&noisy_samples(20));
    let t = train(fresh(&small_config()), &data, &small_config(), &mut NoEvaluation).unwrap();
    assert!(t.log.epochs.iter().all(|e| e.mean_weight == 1.0 && e.warnings == 0));
    assert!(t.log.ema_trace.is_empty());
}

#[test]
fn evaluation_of_perfect_and_constant_models() {
    let m = fresh(&small_config());
    let samples = noisy_samples(15);
    // labels produced by the model itself
    let own: Vec<TrainSample> = samples
        .iter()
        .map(|s| {
            let out = m.forward(s.positions()).unwrap();
            TrainSample { id: s.id(), positions: s.positions().to_vec(), labels: Labels { energy: out.energy, forces: out.forces, aux: None } }
        })
        .collect();
    let ev = evaluate(&m, &own, &CompositeLossSpec::default()).unwrap();
    assert_eq!((ev.energy_rmse, ev.force_rmse), (0.0, 0.0));
    assert_eq!(ev, evaluate(&m, &own, &CompositeLossSpec::default()).unwrap());

    // zero parameters give E ≡ 0; centred energies then have RMSE equal to their std
    let mut zero = ModelConfig::LinearBasis { cutoff: 3.0, inner: 0.8, n_basis: 6 }.build(&SeedTree::new(1)).unwrap();
    zero.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let views = training_views(&samples);
    let mean = views.iter().map(|s| s.labels.energy).sum::<f64>() / views.len() as f64;
    let centred: Vec<TrainSample> = views
        .into_iter()
        .map(|mut s| {
            s.labels.energy -= mean;
            s
        })
        .collect();
    let std = (centred.iter().map(|s| s.labels.energy.powi(2)).sum::<f64>() / centred.len() as f64).sqrt();
    let ev = evaluate(&zero, &centred, &CompositeLossSpec::default()).unwrap();
    assert!((ev.energy_rmse - std).abs() < 1e-12 * std.max(1.0));
}
