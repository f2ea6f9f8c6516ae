use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureGenerator, GeneratorModel, GmmnBaselineModel};
use crate::error::{Error, Result};

/// Architecture knobs shared by every generator kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub d_a: usize,
    pub d_x: usize,
    /// Attention width for the primitive generator, noise width for every kind.
    pub d_k: usize,
    pub n_primitives: usize,
    pub layer_count: usize,
    pub gmmn_hidden: usize,
}

/// Builds a freshly initialized generator.
pub trait GeneratorFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, spec: &GeneratorSpec, seed: u64) -> Result<Box<dyn FeatureGenerator>>;
}

struct PrimitiveFactory;

impl GeneratorFactory for PrimitiveFactory {
    fn name(&self) -> &'static str {
        "primitive"
    }

    fn build(&self, spec: &GeneratorSpec, seed: u64) -> Result<Box<dyn FeatureGenerator>> {
        Ok(Box::new(GeneratorModel::new(
            spec.d_a,
            spec.d_k,
            spec.d_x,
            spec.n_primitives,
            spec.layer_count,
            seed,
        )?))
    }
}

struct GmmnFactory;

impl GeneratorFactory for GmmnFactory {
    fn name(&self) -> &'static str {
        "gmmn"
    }

    fn build(&self, spec: &GeneratorSpec, seed: u64) -> Result<Box<dyn FeatureGenerator>> {
        Ok(Box::new(GmmnBaselineModel::new(spec.d_a, spec.d_k, spec.gmmn_hidden, spec.d_x, seed)?))
    }
}

/// Generator kinds selectable by name.
pub struct GeneratorRegistry {
    factories: BTreeMap<&'static str, Box<dyn GeneratorFactory>>,
}

impl Default for GeneratorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(PrimitiveFactory));
        r.register(Box::new(GmmnFactory));
        r
    }
}

impl GeneratorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Adds or replaces the factory registered under its name.
    pub fn register(&mut self, factory: Box<dyn GeneratorFactory>) {
        self.factories.insert(factory.name(), factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, kind: &str, spec: &GeneratorSpec, seed: u64) -> Result<Box<dyn FeatureGenerator>> {
        let factory = self.factories.get(kind).ok_or_else(|| {
            Error::param(format!("unknown generator kind {kind:?}; known: {}", self.names().join(", ")))
        })?;
        factory.build(spec, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GeneratorSpec {
        GeneratorSpec {
            d_a: 4,
            d_x: 6,
            d_k: 5,
            n_primitives: 7,
            layer_count: 2,
            gmmn_hidden: 8,
        }
    }

    #[test]
    fn builds_registered_kinds() {
        let r = GeneratorRegistry::default();
        assert_eq!(r.names(), ["gmmn", "primitive"]);
        for kind in r.names() {
            let g = r.build(kind, &spec(), 1).unwrap();
            assert_eq!(g.kind(), kind);
            assert_eq!((g.semantic_dim(), g.noise_dim(), g.output_dim()), (4, 5, 6));
        }
        assert!(r.build("gan", &spec(), 1).unwrap_err().to_string().contains("primitive"));
    }
}
