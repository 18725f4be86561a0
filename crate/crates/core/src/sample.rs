//! Training samples and the provenance-free view handed to the trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Whether a sample's labels are ground truth or were corrupted.
///
/// Only evaluation code may look at this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Corrupted,
}

/// Reference labels for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub aux: Option<f64>,
}

/// One configuration with its (possibly corrupted) reference labels.
///
/// `truth` holds the uncorrupted labels of a corrupted sample so that
/// evaluation can measure error against ground truth. Neither `truth` nor
/// `provenance` is reachable from a [`TrainSample`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    id: u64,
    positions: Vec<Vec3>,
    labels: Labels,
    provenance: Provenance,
    truth: Option<Labels>,
}

impl LabeledSample {
    pub fn new(id: u64, positions: Vec<Vec3>, labels: Labels, provenance: Provenance) -> Result<Self> {
        if labels.forces.len() != positions.len() {
            return Err(Error::Validation(format!(
                "force count mismatch: {} particles, {} force vectors",
                positions.len(),
                labels.forces.len()
            )));
        }
        Ok(Self { id, positions, labels, provenance, truth: None })
    }

    /// Attach hidden ground-truth labels (used for corrupted samples).
    pub fn with_truth(mut self, truth: Labels) -> Result<Self> {
        if truth.forces.len() != self.positions.len() {
            return Err(Error::Validation("truth force count mismatch".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn particles(&self) -> usize {
        self.positions.len()
    }

    /// Stored hidden truth, if any.
    pub fn stored_truth(&self) -> Option<&Labels> {
        self.truth.as_ref()
    }

    /// Ground-truth labels: the hidden truth when present, else the labels.
    pub fn truth(&self) -> &Labels {
        self.truth.as_ref().unwrap_or(&self.labels)
    }

    pub(crate) fn replace_labels(&mut self, labels: Labels, provenance: Provenance) {
        debug_assert_eq!(labels.forces.len(), self.positions.len());
        self.labels = labels;
        self.provenance = provenance;
    }

    pub(crate) fn set_truth(&mut self, truth: Option<Labels>) {
        self.truth = truth;
    }

    /// The view the trainer sees: inputs and training labels only.
    pub fn training_view(&self) -> TrainSample {
        TrainSample { id: self.id, positions: self.positions.clone(), labels: self.labels.clone() }
    }

    /// Same inputs paired with ground-truth labels, for evaluation.
    pub fn truth_view(&self) -> TrainSample {
        TrainSample { id: self.id, positions: self.positions.clone(), labels: self.truth().clone() }
    }
}

/// Strip provenance and hidden truth from a set of samples.
pub fn training_views(samples: &[LabeledSample]) -> Vec<TrainSample> {
    samples.iter().map(LabeledSample::training_view).collect()
}

/// A sample as seen by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: u64,
    pub positions: Vec<Vec3>,
    pub labels: Labels,
}

/// A nonempty group of samples processed in one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    samples: &'a [&'a TrainSample],
}

impl<'a> Batch<'a> {
    pub fn new(samples: &'a [&'a TrainSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("batch must contain at least one sample".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &'a [&'a TrainSample] {
        self.samples
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Labels {
        Labels { energy: -1.0, forces: vec![[0.0; 3]; n], aux: None }
    }

    #[test]
    fn force_count_must_match_particles() {
        let err = LabeledSample::new(0, vec![[0.0; 3]; 3], labels(2), Provenance::Clean).unwrap_err();
        assert!(err.to_string().contains("force count mismatch"));
    }

    #[test]
    fn truth_defaults_to_labels() {
        let s = LabeledSample::new(4, vec![[0.0; 3], [1.0, 0.0, 0.0]], labels(2), Provenance::Clean).unwrap();
        assert_eq!(s.truth(), s.labels());
        let mut hidden = labels(2);
        hidden.energy = 3.0;
        let s = s.with_truth(hidden.clone()).unwrap();
        assert_eq!(s.truth_view().labels, hidden);
        assert_eq!(s.training_view().labels.energy, -1.0);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(Batch::new(&[]).is_err());
    }
}
