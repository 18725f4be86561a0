//! Synthetic clusters labelled by an analytic pair potential, and controlled
//! label corruption with the true labels kept aside.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::validation_count;
use crate::error::{Error, Result};
use crate::geometry::{min_pair_distance, norm, rms_components, scale, sub, Vec3};
use crate::rng::SeedTree;
use crate::sample::{LabeledSample, Labels, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// `4ε[(σ/r)¹² − (σ/r)⁶]`
    LennardJones { epsilon: f64, sigma: f64 },
    /// `h[((r − r₀)/w)² − 1]² − h`, wells at `r₀ ± w`.
    DoubleWell { depth: f64, centre: f64, half_width: f64 },
}

impl GroundTruth {
    pub fn lennard_jones() -> Self {
        GroundTruth::LennardJones { epsilon: 1.0, sigma: 1.0 }
    }

    pub fn double_well() -> Self {
        GroundTruth::DoubleWell { depth: 1.0, centre: 1.4, half_width: 0.25 }
    }

    /// Pair energy and its derivative with respect to `r`.
    pub fn pair(&self, r: f64) -> (f64, f64) {
        match *self {
            GroundTruth::LennardJones { epsilon, sigma } => {
                let s6 = (sigma / r).powi(6);
                let s12 = s6 * s6;
                (4.0 * epsilon * (s12 - s6), 4.0 * epsilon * (-12.0 * s12 + 6.0 * s6) / r)
            }
            GroundTruth::DoubleWell { depth, centre, half_width } => {
                let x = (r - centre) / half_width;
                let q = x * x - 1.0;
                (depth * q * q - depth, depth * 4.0 * q * x / half_width)
            }
        }
    }

    /// Distance of the (inner) pair minimum.
    pub fn equilibrium_distance(&self) -> f64 {
        match *self {
            GroundTruth::LennardJones { sigma, .. } => 2f64.powf(1.0 / 6.0) * sigma,
            GroundTruth::DoubleWell { centre, half_width, .. } => centre - half_width,
        }
    }

    /// Total energy and exact forces, all pairs, no cutoff.
    pub fn label(&self, positions: &[Vec3]) -> Labels {
        let mut energy = 0.0;
        let mut forces = vec![[0.0; 3]; positions.len()];
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let d = sub(positions[i], positions[j]);
                let r = norm(d);
                let (e, de) = self.pair(r);
                energy += e;
                for c in 0..3 {
                    let f = de * d[c] / r;
                    forces[i][c] -= f;
                    forces[j][c] += f;
                }
            }
        }
        Labels { energy, forces, aux: None }
    }
}

/// Low-energy reference shape with nearest-neighbour spacing `a`.
///
/// Dimer, triangle, tetrahedron and trigonal bipyramid for up to five
/// particles; beyond that the `n` face-centred-cubic sites closest to the origin.
pub fn base_geometry(n: usize, a: f64) -> Vec<Vec3> {
    let third = 1.0 / 3f64.sqrt();
    let h = (2.0f64 / 3.0).sqrt();
    let tri: Vec<Vec3> = (0..3)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            [third * t.cos(), third * t.sin(), 0.0]
        })
        .collect();
    let unit: Vec<Vec3> = match n {
        0 => vec![],
        1 => vec![[0.0; 3]],
        2 => vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]],
        3 => tri,
        4 => {
            let mut v = tri;
            v.push([0.0, 0.0, h]);
            v
        }
        5 => {
            let mut v = tri;
            v.push([0.0, 0.0, h]);
            v.push([0.0, 0.0, -h]);
            v
        }
        _ => {
            let m = (n as f64).cbrt().ceil() as i64 + 1;
            let mut sites = Vec::new();
            for i in -m..=m {
                for j in -m..=m {
                    for k in -m..=m {
                        if (i + j + k).rem_euclid(2) == 0 {
                            let s = std::f64::consts::FRAC_1_SQRT_2;
                            sites.push([i as f64 * s, j as f64 * s, k as f64 * s]);
                        }
                    }
                }
            }
            sites.sort_by(|p, q| {
                let (a, b) = (crate::geometry::dot(*p, *p), crate::geometry::dot(*q, *q));
                a.partial_cmp(&b).unwrap().then(p.partial_cmp(q).unwrap())
            });
            sites.truncate(n);
            sites
        }
    };
    unit.into_iter().map(|p| scale(p, a)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub particles: usize,
    pub potential: GroundTruth,
    /// Standard deviation of the Gaussian displacement of each coordinate.
    pub perturbation: f64,
    /// Configurations with a closer pair are redrawn.
    pub min_distance: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            particles: 5,
            potential: GroundTruth::lennard_jones(),
            perturbation: 0.05,
            min_distance: 1.0,
            seed: 0,
        }
    }
}

/// Clean samples with ids `0..n`. Each sample has its own random substream.
pub fn generate_clean(config: &GeneratorConfig) -> Result<Vec<LabeledSample>> {
    if config.particles == 0 {
        return Err(Error::Config("need at least one particle".into()));
    }
    if !(config.perturbation >= 0.0) {
        return Err(Error::Config("perturbation must be nonnegative".into()));
    }
    let base = base_geometry(config.particles, config.potential.equilibrium_distance());
    if min_pair_distance(&base) < config.min_distance {
        return Err(Error::Config("minimum distance excludes the reference geometry".into()));
    }
    let seeds = SeedTree::new(config.seed);
    (0..config.n as u64)
        .map(|id| {
            let mut rng = seeds.substream("geometry", id);
            let positions = loop {
                let x: Vec<Vec3> = base
                    .iter()
                    .map(|p| {
                        let mut q = *p;
                        for c in &mut q {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            *c += config.perturbation * g;
                        }
                        q
                    })
                    .collect();
                if min_pair_distance(&x) >= config.min_distance {
                    break x;
                }
            };
            let labels = config.potential.label(&positions);
            LabeledSample::new(id, positions, labels, Provenance::Clean)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Force error from a fixed spurious pair interaction: a constant-magnitude
    /// pull along every pair, rescaled per sample to the drawn RMS.
    #[default]
    SystematicDirectional,
    /// i.i.d. Gaussian force components with the drawn RMS as scale.
    RandomGaussian,
    /// Half of the corrupted samples get mild Gaussian noise (a tenth of the
    /// drawn RMS), the other half the systematic error.
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub fraction: f64,
    /// Range of the per-sample RMS of the injected force error.
    pub force_noise_magnitude: (f64, f64),
    pub energy_offset: Option<f64>,
    pub mode: NoiseMode,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { fraction: 0.10, force_noise_magnitude: (1.0, 1.0), energy_offset: None, mode: NoiseMode::default() }
    }
}

impl NoiseSpec {
    /// Magnitudes spread ±`spread` (relative) around `factor × floor`.
    pub fn calibrated(floor: f64, factor: f64, spread: f64) -> Self {
        let m = floor * factor;
        Self { force_noise_magnitude: ((1.0 - spread) * m, (1.0 + spread) * m), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction >= 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!("noise fraction {} outside [0, 1)", self.fraction)));
        }
        let (lo, hi) = self.force_noise_magnitude;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("force noise range must satisfy 0 ≤ lo ≤ hi".into()));
        }
        if self.energy_offset.is_some_and(|e| !e.is_finite()) {
            return Err(Error::Config("energy offset must be finite".into()));
        }
        Ok(())
    }

    /// Mean of the magnitude range.
    pub fn nominal_magnitude(&self) -> f64 {
        0.5 * (self.force_noise_magnitude.0 + self.force_noise_magnitude.1)
    }
}

fn systematic_pattern(positions: &[Vec3]) -> Vec<Vec3> {
    let mut d = vec![[0.0; 3]; positions.len()];
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let u = sub(positions[i], positions[j]);
            let r = norm(u);
            for c in 0..3 {
                d[i][c] -= u[c] / r;
                d[j][c] += u[c] / r;
            }
        }
    }
    if rms_components(&d) == 0.0 {
        // lone particle: fall back to a fixed direction
        d.iter_mut().for_each(|v| *v = [1.0, 0.0, 0.0]);
    }
    d
}

fn rescaled(mut d: Vec<Vec3>, rms: f64) -> Vec<Vec3> {
    let s = rms / rms_components(&d);
    d.iter_mut().for_each(|v| *v = scale(*v, s));
    d
}

fn gaussian(n: usize, scale_: f64, rng: &mut crate::rng::Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let mut v = [0.0; 3];
            for c in &mut v {
                let g: f64 = StandardNormal.sample(rng);
                *c = scale_ * g;
            }
            v
        })
        .collect()
}

/// Corrupt a seeded subset of `round(fraction·n)` samples (half-up rounding).
///
/// Only labels change. Corrupted samples keep their original labels as hidden
/// truth and are tagged `Corrupted`.
pub fn corrupt(samples: &[LabeledSample], spec: &NoiseSpec, seed: u64) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let mut out = samples.to_vec();
    let k = validation_count(samples.len(), spec.fraction);
    if k == 0 {
        return Ok(out);
    }
    let seeds = SeedTree::new(seed);
    let chosen = sample_indices(&mut seeds.stream("noise"), samples.len(), k).into_vec();
    let (lo, hi) = spec.force_noise_magnitude;
    for (rank, &i) in chosen.iter().enumerate() {
        let s = &mut out[i];
        let mut rng = seeds.substream("noise", s.id());
        let m = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let truth = s.truth().clone();
        let delta = match spec.mode {
            NoiseMode::SystematicDirectional => rescaled(systematic_pattern(s.positions()), m),
            NoiseMode::RandomGaussian => gaussian(s.particles(), m, &mut rng),
            NoiseMode::Multimodal if rank % 2 == 0 => gaussian(s.particles(), 0.1 * m, &mut rng),
            NoiseMode::Multimodal => rescaled(systematic_pattern(s.positions()), m),
        };
        let forces = truth.forces.iter().zip(&delta).map(|(f, d)| crate::geometry::add(*f, *d)).collect();
        let energy = truth.energy + spec.energy_offset.unwrap_or(0.0);
        let labels = Labels { energy, forces, aux: truth.aux };
        s.replace_labels(labels, Provenance::Corrupted);
        s.set_truth(Some(truth));
    }
    Ok(out)
}

/// RMS over all components of (labels − truth) for the given samples.
pub fn injected_force_rms(samples: &[LabeledSample]) -> f64 {
    let d: Vec<Vec3> = samples
        .iter()
        .flat_map(|s| s.labels().forces.iter().zip(&s.truth().forces).map(|(a, b)| sub(*a, *b)))
        .collect();
    rms_components(&d)
}
