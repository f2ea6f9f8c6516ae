use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::SemanticSpace;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Seen,
    Unseen,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(Provenance::Real),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(format!("unknown provenance '{other}'")),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Seen => "seen",
            Group::Unseen => "unseen",
        })
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seen" => Ok(Group::Seen),
            "unseen" => Ok(Group::Unseen),
            other => Err(format!("unknown group '{other}'")),
        }
    }
}

/// What a feature file is going to be used for. Generator-training input may
/// not contain real features of unseen classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetRole {
    GeneratorTraining,
    Evaluation,
}

/// Labeled feature rows with per-row provenance and group tags.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Vec<usize>,
    provenance: Vec<Provenance>,
    groups: Vec<Group>,
}

impl FeatureDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        provenance: Vec<Provenance>,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || provenance.len() != n || groups.len() != n {
            return Err(Error::Validation(format!(
                "{n} feature rows but {} labels, {} provenance tags, {} group tags",
                labels.len(),
                provenance.len(),
                groups.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            provenance,
            groups,
        })
    }

    /// Rows of one provenance, with groups derived from `space`.
    pub fn tagged(features: Matrix, labels: Vec<usize>, provenance: Provenance, space: &SemanticSpace) -> Result<Self> {
        let groups = labels
            .iter()
            .map(|&l| if space.is_seen(l) { Group::Seen } else { Group::Unseen })
            .collect();
        let n = labels.len();
        let ds = Self::new(features, labels, vec![provenance; n], groups)?;
        ds.validate(space)?;
        Ok(ds)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            provenance: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Checks labels and group tags against `space`.
    pub fn validate(&self, space: &SemanticSpace) -> Result<()> {
        for (i, (&l, &g)) in self.labels.iter().zip(&self.groups).enumerate() {
            if l >= space.num_classes() {
                return Err(Error::Validation(format!(
                    "row {i}: label {l} is outside the {} known classes",
                    space.num_classes()
                )));
            }
            let expected = if space.is_seen(l) { Group::Seen } else { Group::Unseen };
            if g != expected {
                return Err(Error::Validation(format!(
                    "row {i}: class '{}' is {expected} but tagged {g}",
                    space.name(l)
                )));
            }
        }
        Ok(())
    }

    /// Generator-training input: every row must be a real seen-class feature.
    pub fn validate_for_generator(&self, space: &SemanticSpace) -> Result<()> {
        self.validate(space)?;
        for (i, (&l, &p)) in self.labels.iter().zip(&self.provenance).enumerate() {
            if p == Provenance::Real && !space.is_seen(l) {
                return Err(Error::Validation(format!(
                    "row {i}: real feature of unseen class '{}' in generator-training data",
                    space.name(l)
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
        })
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if !self.is_empty() && !other.is_empty() && self.dim() != other.dim() {
            return Err(Error::Dimension {
                op: "FeatureDataset::concat",
                left: self.features.shape(),
                right: other.features.shape(),
            });
        }
        let features = if self.is_empty() {
            other.features.clone()
        } else if other.is_empty() {
            self.features.clone()
        } else {
            self.features.vstack(&other.features)?
        };
        Ok(Self {
            features,
            labels: [self.labels.as_slice(), &other.labels].concat(),
            provenance: [self.provenance.as_slice(), &other.provenance].concat(),
            groups: [self.groups.as_slice(), &other.groups].concat(),
        })
    }

    /// Row indices of each class, indexed by class id.
    pub fn indices_by_class(&self, num_classes: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if l < num_classes {
                out[l].push(i);
            }
        }
        out
    }

    /// Writes `label,provenance,group,f0..f{d-1}`; labels are class names and
    /// values are printed with 17 significant digits.
    pub fn export_csv(&self, path: &Path, space: &SemanticSpace) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut header = vec!["label".to_owned(), "provenance".to_owned(), "group".to_owned()];
        header.extend((0..self.dim()).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut record = vec![
                space.name(self.labels[i]).to_owned(),
                self.provenance[i].to_string(),
                self.groups[i].to_string(),
            ];
            record.extend(self.features.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, space: &SemanticSpace, role: DatasetRole) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, space, role)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, space: &SemanticSpace, role: DatasetRole) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let header = r
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let expected_prefix = ["label", "provenance", "group"];
        if header.len() < 3 || header.iter().take(3).ne(expected_prefix) {
            return Err(Error::Parse {
                line: 1,
                message: "header must start with label,provenance,group".into(),
            });
        }
        for (i, h) in header.iter().skip(3).enumerate() {
            if h != format!("f{i}") {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("feature column {i} is named '{h}', expected 'f{i}'"),
                });
            }
        }
        let dim = header.len() - 3;

        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut provenance = Vec::new();
        let mut groups = Vec::new();
        for (row, record) in r.records().enumerate() {
            let parse_err = |message: String| Error::Parse { line: row + 2, message };
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            if record.len() != dim + 3 {
                return Err(parse_err(format!(
                    "row {row} has {} fields, expected {}",
                    record.len(),
                    dim + 3
                )));
            }
            let label = space
                .index_of(&record[0])
                .ok_or_else(|| parse_err(format!("row {row}: unknown label '{}'", &record[0])))?;
            provenance.push(record[1].parse::<Provenance>().map_err(|e| parse_err(format!("row {row}: {e}")))?);
            groups.push(record[2].parse::<Group>().map_err(|e| parse_err(format!("row {row}: {e}")))?);
            labels.push(label);
            for f in record.iter().skip(3) {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(format!("row {row}: non-numeric field '{f}': {e}")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("row {row}: non-finite field '{f}'")));
                }
                data.push(v);
            }
        }
        let n = labels.len();
        let ds = Self::new(Matrix::new(n, dim, data)?, labels, provenance, groups)?;
        match role {
            DatasetRole::GeneratorTraining => ds.validate_for_generator(space)?,
            DatasetRole::Evaluation => ds.validate(space)?,
        }
        Ok(ds)
    }
}

/// Seeded shuffle of `0..n` cut into batches of `batch_size`; the last batch
/// may be short.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
