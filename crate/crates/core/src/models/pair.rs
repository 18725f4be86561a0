//! Pair-sum energy models: E = Σ_{i<j} g(r_ij)·env(r_ij).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpShape, MlpTape};
use super::{Model, ModelOutput, OutputGradient};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, scale, sub, Vec3};
use crate::rng::SeedTree;

/// Smallest separation accepted before the pair is treated as coincident.
const COINCIDENT: f64 = 1e-8;

/// (1 − (r/r_c)²)³ and its r-derivative; zero beyond the cutoff.
pub fn envelope(r: f64, cutoff: f64) -> (f64, f64) {
    if r >= cutoff {
        return (0.0, 0.0);
    }
    let s = r / cutoff;
    let q = 1.0 - s * s;
    (q * q * q, -6.0 * q * q * s / cutoff)
}

/// `√(2/r_c)·sin(nπr/r_c)/r` for n = 1..=k, with r-derivatives.
pub fn bessel_basis(r: f64, cutoff: f64, k: usize, b: &mut Vec<f64>, db: &mut Vec<f64>) {
    b.clear();
    db.clear();
    let c = (2.0 / cutoff).sqrt();
    for n in 1..=k {
        let w = n as f64 * std::f64::consts::PI / cutoff;
        let (sn, cs) = (w * r).sin_cos();
        b.push(c * sn / r);
        db.push(c * (w * cs / r - sn / (r * r)));
    }
}

/// A scalar function of the pair distance with parameter gradients
/// for `c_y·g + c_t·g′`.
pub(crate) trait Radial {
    type Tape: Default;
    fn eval(&self, r: f64, tape: &mut Self::Tape) -> (f64, f64);
    fn accumulate(&self, tape: &Self::Tape, c_y: f64, c_t: f64, grad: &mut [f64]);
}

struct Pair {
    i: usize,
    j: usize,
    unit: Vec3,
    r: f64,
}

fn pairs_within(positions: &[Vec3], cutoff: f64) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = sub(positions[i], positions[j]);
            let r = norm(d);
            if !(r > COINCIDENT) {
                return Err(Error::Domain(format!("particles {i} and {j} coincide")));
            }
            if r < cutoff {
                out.push(Pair { i, j, unit: scale(d, 1.0 / r), r });
            }
        }
    }
    Ok(out)
}

pub(crate) fn pair_forward<R: Radial>(f: &R, cutoff: f64, positions: &[Vec3]) -> Result<ModelOutput> {
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; positions.len()];
    let mut tape = R::Tape::default();
    for p in pairs_within(positions, cutoff)? {
        let (g, dg) = f.eval(p.r, &mut tape);
        let (env, denv) = envelope(p.r, cutoff);
        energy += g * env;
        let dphi = dg * env + g * denv;
        for c in 0..3 {
            let fc = dphi * p.unit[c];
            forces[p.i][c] -= fc;
            forces[p.j][c] += fc;
        }
    }
    Ok(ModelOutput { energy, forces, aux: None })
}

pub(crate) fn pair_backward<R: Radial>(
    f: &R,
    cutoff: f64,
    positions: &[Vec3],
    upstream: &OutputGradient,
    grad: &mut [f64],
) -> Result<()> {
    if upstream.forces.len() != positions.len() {
        return Err(Error::Contract("upstream force gradient has wrong length".into()));
    }
    let mut tape = R::Tape::default();
    for p in pairs_within(positions, cutoff)? {
        // dL/dφ′ for this pair: the two force slots it feeds, projected on r̂
        let a = -dot(sub(upstream.forces[p.i], upstream.forces[p.j]), p.unit);
        let b = upstream.energy;
        if a == 0.0 && b == 0.0 {
            continue;
        }
        f.eval(p.r, &mut tape);
        let (env, denv) = envelope(p.r, cutoff);
        f.accumulate(&tape, b * env + a * denv, a * env, grad);
    }
    Ok(())
}

fn init_uniform(fan_in: &[usize], seeds: &SeedTree) -> Vec<f64> {
    let mut rng = seeds.stream("init");
    fan_in
        .iter()
        .map(|&n| {
            let s = (n.max(1) as f64).powf(-0.5);
            rng.random_range(-s..=s)
        })
        .collect()
}

/// Pair potential whose radial function is a small perceptron.
///
/// The perceptron sees either `r − r_c/2` or, with `radial_basis = k > 0`,
/// the first `k` Bessel functions of `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPotentialModel {
    pub cutoff: f64,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub radial_basis: usize,
    pub parameters: Vec<f64>,
}

impl PairPotentialModel {
    pub fn new(
        cutoff: f64,
        hidden_widths: Vec<usize>,
        activation: Activation,
        radial_basis: usize,
        seeds: &SeedTree,
    ) -> Result<Self> {
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::Config("cutoff must be positive".into()));
        }
        if hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let shape = Self::layout(&hidden_widths, activation, radial_basis);
        let parameters = init_uniform(&shape.fan_in(), seeds);
        Ok(Self { cutoff, hidden_widths, activation, radial_basis, parameters })
    }

    pub(crate) fn layout(hidden: &[usize], activation: Activation, radial_basis: usize) -> MlpShape {
        MlpShape { input: radial_basis.max(1), hidden: hidden.to_vec(), activation }
    }

    fn radial(&self) -> MlpRadial<'_> {
        MlpRadial {
            shape: Self::layout(&self.hidden_widths, self.activation, self.radial_basis),
            cutoff: self.cutoff,
            basis: self.radial_basis,
            params: &self.parameters,
        }
    }
}

struct MlpRadial<'a> {
    shape: MlpShape,
    cutoff: f64,
    basis: usize,
    params: &'a [f64],
}

#[derive(Default)]
pub(crate) struct RadialTape {
    mlp: MlpTape,
    x: Vec<f64>,
    dx: Vec<f64>,
}

impl Radial for MlpRadial<'_> {
    type Tape = RadialTape;
    fn eval(&self, r: f64, tape: &mut RadialTape) -> (f64, f64) {
        if self.basis == 0 {
            return self.shape.forward(self.params, &[r - 0.5 * self.cutoff], &[1.0], &mut tape.mlp);
        }
        bessel_basis(r, self.cutoff, self.basis, &mut tape.x, &mut tape.dx);
        self.shape.forward(self.params, &tape.x, &tape.dx, &mut tape.mlp)
    }
    fn accumulate(&self, tape: &RadialTape, c_y: f64, c_t: f64, grad: &mut [f64]) {
        self.shape.param_grad(self.params, &tape.mlp, c_y, c_t, grad)
    }
}

impl Model for PairPotentialModel {
    fn params(&self) -> &[f64] {
        &self.parameters
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.parameters
    }
    fn forward(&self, positions: &[Vec3]) -> Result<ModelOutput> {
        pair_forward(&self.radial(), self.cutoff, positions)
    }
    fn backward(&self, positions: &[Vec3], upstream: &OutputGradient, grad: &mut [f64]) -> Result<()> {
        pair_backward(&self.radial(), self.cutoff, positions, upstream, grad)
    }
}

/// Pair potential linear in its parameters: Gaussian radial basis times the envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBasisModel {
    pub cutoff: f64,
    /// Innermost basis centre, as a distance.
    pub inner: f64,
    pub n_basis: usize,
    pub parameters: Vec<f64>,
}

impl LinearBasisModel {
    pub fn new(cutoff: f64, inner: f64, n_basis: usize, seeds: &SeedTree) -> Result<Self> {
        if !(cutoff > inner) || !(inner >= 0.0) || n_basis < 2 {
            return Err(Error::Config("basis needs 0 ≤ inner < cutoff and at least two functions".into()));
        }
        let parameters = init_uniform(&vec![n_basis; n_basis], seeds);
        Ok(Self { cutoff, inner, n_basis, parameters })
    }

    fn centres(&self) -> (Vec<f64>, f64) {
        let (lo, hi) = (self.inner, self.cutoff);
        let step = (hi - lo) / (self.n_basis - 1) as f64;
        let c = (0..self.n_basis).map(|k| lo + step * k as f64).collect();
        (c, 0.5 / (step * step))
    }
}

struct BasisRadial<'a> {
    centres: Vec<f64>,
    eta: f64,
    params: &'a [f64],
}

impl Radial for BasisRadial<'_> {
    type Tape = (Vec<f64>, Vec<f64>);
    fn eval(&self, r: f64, tape: &mut Self::Tape) -> (f64, f64) {
        let (b, db) = tape;
        b.clear();
        db.clear();
        let (mut g, mut dg) = (0.0, 0.0);
        for (k, &c) in self.centres.iter().enumerate() {
            let x = r - c;
            let v = (-self.eta * x * x).exp();
            let dv = -2.0 * self.eta * x * v;
            g += self.params[k] * v;
            dg += self.params[k] * dv;
            b.push(v);
            db.push(dv);
        }
        (g, dg)
    }
    fn accumulate(&self, tape: &Self::Tape, c_y: f64, c_t: f64, grad: &mut [f64]) {
        for k in 0..grad.len() {
            grad[k] += c_y * tape.0[k] + c_t * tape.1[k];
        }
    }
}

impl Model for LinearBasisModel {
    fn params(&self) -> &[f64] {
        &self.parameters
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.parameters
    }
    fn forward(&self, positions: &[Vec3]) -> Result<ModelOutput> {
        let (centres, eta) = self.centres();
        pair_forward(&BasisRadial { centres, eta, params: &self.parameters }, self.cutoff, positions)
    }
    fn backward(&self, positions: &[Vec3], upstream: &OutputGradient, grad: &mut [f64]) -> Result<()> {
        let (centres, eta) = self.centres();
        let f = BasisRadial { centres, eta, params: &self.parameters };
        pair_backward(&f, self.cutoff, positions, upstream, grad)
    }
}
