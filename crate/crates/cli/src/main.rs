//! `nrt`: dataset generation, training, refinement, threshold sweeps and reports.
//!
//! Every command writes into `--out DIR` and leaves a `manifest.json` there; `nrt replay DIR`
//! re-runs it and compares output hashes.

mod jobs;
mod manifest;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use nrt::config::RunConfig;
use nrt::datagen::{GroundTruth, NoiseMode};
use nrt::loss::LossChannel;
use nrt::models::ModelConfig;
use nrt::optim::{LrSchedule, OptimizerKind};
use nrt::weighting::WeightPolicy;

use jobs::{GenerateConfig, Job, RefineConfig, SweepConfig, TrainConfig};
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "nrt", version, about = "Noise-robust training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled dataset with a corrupted subset.
    Generate(GenerateArgs),
    /// Train one model and write its logs.
    Train(TrainArgs),
    /// Iterative refinement with static weights.
    Refine(RefineArgs),
    /// One bootstrapped run per threshold.
    SweepThreshold(SweepArgs),
    /// Join epoch curves of several runs.
    Report(ReportArgs),
    /// Re-run a manifest into a new directory and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Sgd,
    AdaptiveMoments,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Constant,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Total,
    Force,
}

#[derive(Clone, Copy, ValueEnum)]
enum Potential {
    LennardJones,
    DoubleWell,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    SystematicDirectional,
    RandomGaussian,
    Multimodal,
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is negative"))
    }
}

#[derive(Args)]
struct Common {
    /// JSON config for this command; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "NRT_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, value_enum)]
    potential: Option<Potential>,
    /// Gaussian displacement scale of each coordinate.
    #[arg(long, value_parser = non_negative)]
    perturbation: Option<f64>,
    #[arg(long, value_parser = non_negative)]
    min_distance: Option<f64>,
    #[arg(long, value_parser = fraction)]
    noise_fraction: Option<f64>,
    /// Lower end of the per-sample injected force RMS.
    #[arg(long, value_parser = non_negative)]
    noise_min: Option<f64>,
    #[arg(long, value_parser = non_negative)]
    noise_max: Option<f64>,
    #[arg(long, value_enum)]
    noise_mode: Option<Mode>,
    #[arg(long)]
    energy_offset: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset in JSON lines.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    lr_schedule: Option<Schedule>,
    /// Final learning rate of the cosine schedule as a fraction of the base rate.
    #[arg(long, value_parser = fraction)]
    lr_floor: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    #[arg(long, value_enum)]
    bootstrap: Option<Switch>,
    /// Implies `--bootstrap on` unless bootstrapping is switched off explicitly.
    #[arg(long)]
    z_threshold: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    loss_channel: Option<Channel>,
    #[arg(long)]
    lambda_energy: Option<f64>,
    #[arg(long)]
    lambda_force: Option<f64>,
    #[arg(long)]
    lambda_aux: Option<f64>,
    #[arg(long)]
    ema_alpha: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Per-sample JSONL snapshot stride in epochs (0 disables).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Also write the parameters after every epoch to `trajectory.jsonl`.
    #[arg(long)]
    record_trajectory: bool,
    /// Pair-MLP hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    cutoff: Option<f64>,
    /// Bessel functions fed to the pair MLP (0 feeds the distance itself).
    #[arg(long)]
    radial_basis: Option<usize>,
    /// Truth-curve evaluation stride in epochs.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct RefineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    cycles: Option<u64>,
    /// Truncate the first cycle at this epoch.
    #[arg(long)]
    early_stop_epoch: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunArgs,
    /// Thresholds, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    grid: Option<Vec<f64>>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn usage(msg: String) -> anyhow::Error {
    nrt::Error::Config(msg).into()
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunArgs {
    /// Overrides the fields whose flags were given.
    fn apply(&self, run: &mut RunConfig, seed: Option<u64>) -> Result<()> {
        set(&mut run.seed, seed);
        set(&mut run.epochs, self.epochs);
        set(&mut run.batch_size, self.batch_size);
        set(&mut run.learning_rate, self.learning_rate);
        match (self.lr_schedule, self.lr_floor) {
            (Some(Schedule::Constant), None) => run.lr_schedule = LrSchedule::Constant,
            (Some(Schedule::Constant), Some(_)) => bail!(usage("--lr-floor needs the cosine schedule".into())),
            (Some(Schedule::Cosine), f) => {
                let old = match run.lr_schedule {
                    LrSchedule::Cosine { floor } => floor,
                    LrSchedule::Constant => 0.0,
                };
                run.lr_schedule = LrSchedule::Cosine { floor: f.unwrap_or(old) };
            }
            (None, Some(f)) => match &mut run.lr_schedule {
                LrSchedule::Cosine { floor } => *floor = f,
                LrSchedule::Constant => run.lr_schedule = LrSchedule::Cosine { floor: f },
            },
            (None, None) => {}
        }
        set(
            &mut run.optimizer,
            self.optimizer.map(|o| match o {
                Optimizer::Sgd => OptimizerKind::Sgd,
                Optimizer::AdaptiveMoments => OptimizerKind::AdaptiveMoments,
            }),
        );
        set(&mut run.workers, self.workers);
        set(
            &mut run.loss_channel,
            self.loss_channel.map(|c| match c {
                Channel::Total => LossChannel::Total,
                Channel::Force => LossChannel::Force,
            }),
        );
        set(&mut run.loss_spec.lambda_energy, self.lambda_energy);
        set(&mut run.loss_spec.lambda_force, self.lambda_force);
        set(&mut run.loss_spec.lambda_aux, self.lambda_aux);
        if self.ema_alpha.is_some() {
            run.ema_alpha = self.ema_alpha;
        }
        set(&mut run.validation_fraction, self.validation_fraction);
        set(&mut run.snapshot_every, self.snapshot_every);
        if self.record_trajectory {
            run.record_trajectory = true;
        }
        if self.hidden.is_some() || self.cutoff.is_some() || self.radial_basis.is_some() {
            match &mut run.model {
                ModelConfig::PairMlp { cutoff, hidden_widths, radial_basis, .. } => {
                    set(cutoff, self.cutoff);
                    set(hidden_widths, self.hidden.clone());
                    set(radial_basis, self.radial_basis);
                }
                ModelConfig::LinearBasis { cutoff, .. } => {
                    if self.hidden.is_some() || self.radial_basis.is_some() {
                        bail!(usage("--hidden and --radial-basis apply to the pair MLP model only".into()));
                    }
                    set(cutoff, self.cutoff);
                }
            }
        }
        match (self.bootstrap, self.z_threshold) {
            (Some(Switch::Off), _) => run.weight_policy = None,
            (Some(Switch::On), z) | (None, z @ Some(_)) => {
                let mut p = run.weight_policy.unwrap_or_default();
                set(&mut p.z_threshold, z);
                run.weight_policy = Some(p);
            }
            (None, None) => {}
        }
        Ok(())
    }
}

fn data_path(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("dataset {} does not exist", p.display()))
}

fn resolve(command: &Command) -> Result<(Job, PathBuf)> {
    Ok(match command {
        Command::Generate(a) => {
            let mut c: GenerateConfig = read_config(&a.common.config)?;
            let g = &mut c.generator;
            set(&mut g.seed, a.common.seed);
            set(&mut g.n, a.n);
            set(&mut g.particles, a.particles);
            set(
                &mut g.potential,
                a.potential.map(|p| match p {
                    Potential::LennardJones => GroundTruth::lennard_jones(),
                    Potential::DoubleWell => GroundTruth::double_well(),
                }),
            );
            set(&mut g.perturbation, a.perturbation);
            set(&mut g.min_distance, a.min_distance);
            let n = &mut c.noise;
            set(&mut n.fraction, a.noise_fraction);
            set(&mut n.force_noise_magnitude.0, a.noise_min);
            set(&mut n.force_noise_magnitude.1, a.noise_max);
            set(
                &mut n.mode,
                a.noise_mode.map(|m| match m {
                    Mode::SystematicDirectional => NoiseMode::SystematicDirectional,
                    Mode::RandomGaussian => NoiseMode::RandomGaussian,
                    Mode::Multimodal => NoiseMode::Multimodal,
                }),
            );
            if a.energy_offset.is_some() {
                n.energy_offset = a.energy_offset;
            }
            (Job::Generate { config: c }, a.common.out.clone())
        }
        Command::Train(a) => {
            let mut c: TrainConfig = read_config(&a.common.config)?;
            a.run.apply(&mut c.run, a.common.seed)?;
            set(&mut c.eval_every, a.run.eval_every);
            (Job::Train { data: data_path(&a.run.data)?, config: c }, a.common.out.clone())
        }
        Command::Refine(a) => {
            let mut c: RefineConfig = read_config(&a.common.config)?;
            a.run.apply(&mut c.plan.inner_config, a.common.seed)?;
            set(&mut c.plan.z_threshold, a.run.z_threshold);
            set(&mut c.plan.cycles, a.cycles.map(|n| n as usize));
            if a.early_stop_epoch.is_some() {
                c.plan.early_stop_epoch = a.early_stop_epoch;
            }
            set(&mut c.eval_every, a.run.eval_every);
            (Job::Refine { data: data_path(&a.run.data)?, config: c }, a.common.out.clone())
        }
        Command::SweepThreshold(a) => {
            let mut c: SweepConfig = read_config(&a.common.config)?;
            a.run.apply(&mut c.run, a.common.seed)?;
            if c.run.weight_policy.is_none() {
                c.run.weight_policy = Some(WeightPolicy::default());
            }
            set(&mut c.grid, a.grid.clone());
            (Job::SweepThreshold { data: data_path(&a.run.data)?, config: c }, a.common.out.clone())
        }
        Command::Report(a) => (Job::Report { runs: a.runs.clone() }, a.out.clone()),
        Command::Replay(_) => unreachable!("replay is handled before resolution"),
    })
}

fn run_job(job: Job, out: &Path) -> Result<Manifest> {
    job.validate()?;
    let inputs = manifest::hash_inputs(&job.inputs()?)?;
    let written = job.execute(out)?;
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let m = Manifest {
        name,
        version: env!("CARGO_PKG_VERSION").into(),
        argv: std::env::args().collect(),
        seed: job.seed(),
        outputs: manifest::hash_outputs(out, &written)?,
        inputs,
        job,
    };
    m.write(out)?;
    Ok(m)
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = Manifest::read(&a.run)?;
    recorded.check_inputs()?;
    let fresh = run_job(recorded.job.clone(), &a.out)?;
    let bad = recorded.output_mismatches(&fresh);
    if !bad.is_empty() {
        bail!("replay of {} differs in: {}", a.run.display(), bad.join(", "));
    }
    println!("replay of {} reproduced {} outputs", a.run.display(), fresh.outputs.len());
    Ok(())
}

fn real_main(cli: Cli) -> Result<()> {
    if let Command::Replay(a) = &cli.command {
        return replay(a);
    }
    let (job, out) = resolve(&cli.command)?;
    let m = run_job(job, &out)?;
    for f in &m.outputs {
        log::info!("wrote {}", out.join(&f.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<nrt::Error>(), Some(nrt::Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
