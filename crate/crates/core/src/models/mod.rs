//! Energy/force models with hand-written gradients.

mod mlp;
mod pair;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mlp::{Activation, MlpShape, MlpTape};
pub use pair::{bessel_basis, envelope, LinearBasisModel, PairPotentialModel};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub aux: Option<f64>,
}

/// Loss gradient with respect to each model output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub aux: f64,
}

impl OutputGradient {
    pub fn zeros(particles: usize) -> Self {
        Self { energy: 0.0, forces: vec![[0.0; 3]; particles], aux: 0.0 }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            energy: self.energy * s,
            forces: self.forces.iter().map(|f| [f[0] * s, f[1] * s, f[2] * s]).collect(),
            aux: self.aux * s,
        }
    }
}

pub trait Model {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward(&self, positions: &[Vec3]) -> Result<ModelOutput>;
    /// Adds the parameter gradient of the loss whose output-gradient is `upstream` into `grad`.
    fn backward(&self, positions: &[Vec3], upstream: &OutputGradient, grad: &mut [f64]) -> Result<()>;

    fn n_params(&self) -> usize {
        self.params().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    PairMlp {
        cutoff: f64,
        hidden_widths: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        /// Number of Bessel functions fed to the perceptron; 0 feeds the distance itself.
        #[serde(default)]
        radial_basis: usize,
    },
    LinearBasis {
        cutoff: f64,
        inner: f64,
        n_basis: usize,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::PairMlp { cutoff: 3.0, hidden_widths: vec![16, 16], activation: Activation::Tanh, radial_basis: 0 }
    }
}

impl ModelConfig {
    /// Fresh model, parameters drawn from the `init` stream of `seeds`.
    pub fn build(&self, seeds: &SeedTree) -> Result<AnyModel> {
        Ok(match self {
            ModelConfig::PairMlp { cutoff, hidden_widths, activation, radial_basis } => AnyModel::PairMlp(
                PairPotentialModel::new(*cutoff, hidden_widths.clone(), *activation, *radial_basis, seeds)?,
            ),
            ModelConfig::LinearBasis { cutoff, inner, n_basis } => {
                AnyModel::LinearBasis(LinearBasisModel::new(*cutoff, *inner, *n_basis, seeds)?)
            }
        })
    }
}

/// Checkpointable model of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyModel {
    PairMlp(PairPotentialModel),
    LinearBasis(LinearBasisModel),
}

impl AnyModel {
    fn inner(&self) -> &dyn Model {
        match self {
            AnyModel::PairMlp(m) => m,
            AnyModel::LinearBasis(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Model {
        match self {
            AnyModel::PairMlp(m) => m,
            AnyModel::LinearBasis(m) => m,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: AnyModel = serde_json::from_str(s)?;
        let expected = match &m {
            AnyModel::PairMlp(p) => PairPotentialModel::layout(&p.hidden_widths, p.activation, p.radial_basis).n_params(),
            AnyModel::LinearBasis(b) => b.n_basis,
        };
        if m.n_params() != expected {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, layout needs {expected}",
                m.n_params()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Model for AnyModel {
    fn params(&self) -> &[f64] {
        self.inner().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.inner_mut().params_mut()
    }
    fn forward(&self, positions: &[Vec3]) -> Result<ModelOutput> {
        self.inner().forward(positions)
    }
    fn backward(&self, positions: &[Vec3], upstream: &OutputGradient, grad: &mut [f64]) -> Result<()> {
        self.inner().backward(positions, upstream, grad)
    }
}

/// Largest |F_analytic + ∂E/∂x| over all components, with central differences of step `h`.
pub fn forces_consistency_check(model: &dyn Model, positions: &[Vec3], h: f64) -> Result<f64> {
    let out = model.forward(positions)?;
    let mut worst: f64 = 0.0;
    let mut x = positions.to_vec();
    for k in 0..positions.len() {
        for c in 0..3 {
            let x0 = x[k][c];
            x[k][c] = x0 + h;
            let ep = model.forward(&x)?.energy;
            x[k][c] = x0 - h;
            let em = model.forward(&x)?.energy;
            x[k][c] = x0;
            let de = (ep - em) / (2.0 * h);
            worst = worst.max((out.forces[k][c] + de).abs());
        }
    }
    Ok(worst)
}
