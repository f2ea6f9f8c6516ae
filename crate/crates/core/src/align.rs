//! Relationship alignment between semantic-related visual features and the
//! class embeddings they belong to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Group, Provenance, SemanticSpace};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub temperature: f64,
    pub include_intra: bool,
    pub include_inter: bool,
    /// Rows whose norm falls below this are rejected by the cosine.
    pub epsilon_norm: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            include_intra: true,
            include_inter: true,
            epsilon_norm: 1e-8,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::param(format!("align temperature must be positive, got {}", self.temperature)));
        }
        if !self.include_intra && !self.include_inter {
            return Err(Error::param("alignment needs at least one of intra or inter pairs"));
        }
        if !(self.epsilon_norm >= 0.0) {
            return Err(Error::param(format!("epsilon_norm must be nonnegative, got {}", self.epsilon_norm)));
        }
        Ok(())
    }
}

/// Where a row of an alignment batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    RealSeen,
    SyntheticSeen,
    SyntheticUnseen,
}

impl Origin {
    pub fn provenance(self) -> Provenance {
        match self {
            Origin::RealSeen => Provenance::Real,
            _ => Provenance::Synthetic,
        }
    }

    pub fn group(self) -> Group {
        match self {
            Origin::SyntheticUnseen => Group::Unseen,
            _ => Group::Seen,
        }
    }

    pub fn from_tags(provenance: Provenance, group: Group) -> Result<Self> {
        match (provenance, group) {
            (Provenance::Real, Group::Seen) => Ok(Origin::RealSeen),
            (Provenance::Synthetic, Group::Seen) => Ok(Origin::SyntheticSeen),
            (Provenance::Synthetic, Group::Unseen) => Ok(Origin::SyntheticUnseen),
            (Provenance::Real, Group::Unseen) => Err(Error::Validation(
                "real unseen features cannot enter alignment".into(),
            )),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::RealSeen => "real-seen",
            Origin::SyntheticSeen => "synthetic-seen",
            Origin::SyntheticUnseen => "synthetic-unseen",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real-seen" => Ok(Origin::RealSeen),
            "synthetic-seen" => Ok(Origin::SyntheticSeen),
            "synthetic-unseen" => Ok(Origin::SyntheticUnseen),
            other => Err(Error::param(format!("unknown origin {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub origins: Vec<Origin>,
}

impl AlignBatch {
    pub fn new(features: Matrix, labels: Vec<usize>, origins: Vec<Origin>) -> Result<Self> {
        if labels.len() != features.rows() || origins.len() != features.rows() {
            return Err(Error::Validation(format!(
                "batch has {} rows, {} labels and {} origins",
                features.rows(),
                labels.len(),
                origins.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks labels against `space` and origins against label groups.
    pub fn validate(&self, space: &SemanticSpace) -> Result<()> {
        check_rows(&self.labels, &self.origins, space)?;
        if self.features.cols() != space.dim() {
            return Err(Error::Dimension {
                op: "alignment_loss",
                left: self.features.shape(),
                right: (self.features.rows(), space.dim()),
            });
        }
        Ok(())
    }
}

fn check_rows(labels: &[usize], origins: &[Origin], space: &SemanticSpace) -> Result<()> {
    for (i, (&label, &origin)) in labels.iter().zip(origins).enumerate() {
        if label >= space.num_classes() {
            return Err(Error::Index {
                index: label,
                len: space.num_classes(),
            });
        }
        let expected = if space.is_seen(label) { Group::Seen } else { Group::Unseen };
        if origin.group() != expected {
            return Err(Error::Validation(format!(
                "row {i}: origin {origin} does not match the {expected} class {}",
                space.name(label)
            )));
        }
    }
    Ok(())
}

/// Pairwise cosine similarity of the rows of `m`.
pub fn cosine_matrix(m: &Matrix, epsilon_norm: f64) -> Result<Matrix> {
    let mut g = Graph::new();
    let v = g.constant(m.clone());
    let out = g.cosine_rows(v, epsilon_norm)?;
    Ok(g.value(out).clone())
}

/// Row-major `n×n` eligibility mask: same origin counts as intra, anything
/// else as inter; the diagonal is never eligible.
pub fn pair_mask(origins: &[Origin], cfg: &AlignConfig) -> Vec<bool> {
    let n = origins.len();
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let intra = origins[i] == origins[j];
            mask[i * n + j] = if intra { cfg.include_intra } else { cfg.include_inter };
        }
    }
    mask
}

/// Records the alignment loss of the related features `xhat` (a graph node)
/// against the constant semantic similarities of their classes.
pub fn alignment_loss_graph(
    g: &mut Graph,
    xhat: Var,
    labels: &[usize],
    origins: &[Origin],
    space: &SemanticSpace,
    cfg: &AlignConfig,
) -> Result<Var> {
    cfg.validate()?;
    let n = g.shape(xhat).0;
    if labels.len() != n || origins.len() != n {
        return Err(Error::Validation(format!(
            "batch has {n} rows, {} labels and {} origins",
            labels.len(),
            origins.len()
        )));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("alignment needs at least 2 rows, got {n}")));
    }
    check_rows(labels, origins, space)?;
    let semantic = cosine_matrix(&space.rows_for(labels)?, cfg.epsilon_norm)?;
    let sim = g.cosine_rows(xhat, cfg.epsilon_norm)?;
    let mask = pair_mask(origins, cfg);
    g.relational_kl(sim, &semantic, &mask, cfg.temperature)
}

/// Mean over anchors of `KL(visual ‖ semantic)` relational distributions.
pub fn alignment_loss(batch: &AlignBatch, space: &SemanticSpace, cfg: &AlignConfig) -> Result<f64> {
    batch.validate(space)?;
    let mut g = Graph::new();
    let x = g.constant(batch.features.clone());
    let loss = alignment_loss_graph(&mut g, x, &batch.labels, &batch.origins, space, cfg)?;
    Ok(g.scalar(loss))
}
