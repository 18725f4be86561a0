//! JSON-lines dataset files.
//!
//! Line 1 may be a metadata object `{"__meta__": {...}}` declaring units.
//! Every other line is one sample:
//!
//! ```text
//! {"id":0,"positions":[[x,y,z],...],"energy":e,"forces":[[fx,fy,fz],...],"aux":null,"provenance":"clean"}
//! ```
//!
//! Corrupted samples additionally carry `truth_energy` and `truth_forces`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::SeedTree;
use crate::sample::{LabeledSample, Labels, Provenance};

const META_KEY: &str = "__meta__";

/// Units and free-form generator settings recorded alongside samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub length_unit: String,
    pub energy_unit: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self { length_unit: "sigma".into(), energy_unit: "epsilon".into(), extra: Default::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub meta: Option<DatasetMeta>,
    pub samples: Vec<LabeledSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    positions: Vec<Vec3>,
    energy: f64,
    forces: Vec<Vec3>,
    aux: Option<f64>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_forces: Option<Vec<Vec3>>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    #[serde(rename = "__meta__")]
    meta: DatasetMeta,
}

impl Record {
    fn from_sample(s: &LabeledSample) -> Self {
        let labels = s.labels();
        let truth = s.stored_truth();
        Record {
            id: s.id(),
            positions: s.positions().to_vec(),
            energy: labels.energy,
            forces: labels.forces.clone(),
            aux: labels.aux,
            provenance: s.provenance(),
            truth_energy: truth.map(|t| t.energy),
            truth_forces: truth.map(|t| t.forces.clone()),
        }
    }

    fn into_sample(self, line: usize) -> Result<LabeledSample> {
        let particles = self.positions.len();
        if self.forces.len() != particles {
            return Err(Error::Parse { line, message: "force count mismatch".into() });
        }
        let aux = self.aux;
        let sample = LabeledSample::new(
            self.id,
            self.positions,
            Labels { energy: self.energy, forces: self.forces, aux },
            self.provenance,
        )
        .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        match (self.truth_energy, self.truth_forces) {
            (None, None) => Ok(sample),
            (Some(energy), Some(forces)) => {
                if forces.len() != particles {
                    return Err(Error::Parse { line, message: "truth force count mismatch".into() });
                }
                sample
                    .with_truth(Labels { energy, forces, aux })
                    .map_err(|e| Error::Parse { line, message: e.to_string() })
            }
            _ => Err(Error::Parse {
                line,
                message: "truth_energy and truth_forces must appear together".into(),
            }),
        }
    }
}

/// Read samples in file order. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    Ok(read_dataset(BufReader::new(File::open(path)?))?.samples)
}

pub fn load_dataset_with_meta(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset(reader: impl BufRead) -> Result<Dataset> {
    let mut out = Dataset::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if line_no == 1 && text.contains(META_KEY) {
            let meta: MetaLine = serde_json::from_str(text)
                .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
            out.meta = Some(meta.meta);
            continue;
        }
        let record: Record = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let sample = record.into_sample(line_no)?;
        if !seen.insert(sample.id()) {
            return Err(Error::Validation(format!("duplicate id {} at line {line_no}", sample.id())));
        }
        out.samples.push(sample);
    }
    Ok(out)
}

pub fn write_dataset(mut writer: impl Write, dataset: &Dataset) -> Result<()> {
    if let Some(meta) = &dataset.meta {
        serde_json::to_writer(&mut writer, &MetaLine { meta: meta.clone() })?;
        writer.write_all(b"\n")?;
    }
    for s in &dataset.samples {
        serde_json::to_writer(&mut writer, &Record::from_sample(s))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), dataset)
}

/// Number of held-out samples: `fraction * n` rounded half-up.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

/// Seeded shuffle, then the first `validation_count` samples become the
/// validation set. Returns `(train, validation)`.
pub fn split_train_validation<T: Clone>(samples: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::Contract("cannot split an empty sample list".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut SeedTree::new(seed).stream("split"));
    let n_val = validation_count(samples.len(), fraction);
    let validation = order[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, validation))
}
