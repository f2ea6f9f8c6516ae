//! Semantic embeddings, feature datasets and the synthetic benchmark.

mod dataset;
mod space;
mod synthetic;

pub use dataset::{batch_iter, DatasetRole, FeatureDataset, Group, Provenance};
pub use space::{SemanticSpace, ToySpaceSpec};
pub use synthetic::{make_synthetic_dataset, random_orthonormal, synthetic_truth, SyntheticSpec, SyntheticTruth};
