//! Feature generators and their moment-matching objective.

mod gmmn;
mod mmd;
mod primitive;
mod registry;

use rand::Rng;

pub use gmmn::GmmnBaselineModel;
pub use mmd::{gaussian_kernel, mmd_loss, MmdConfig};
pub use primitive::{GeneratorModel, PrimitiveBank};
pub use registry::{GeneratorFactory, GeneratorRegistry, GeneratorSpec};

use crate::error::Result;
use crate::numerics::{Graph, Matrix, Parameters, Var};

/// A conditional feature generator: semantic rows plus noise in, features out.
pub trait FeatureGenerator: Parameters + Send + Sync {
    /// Registry name of the architecture.
    fn kind(&self) -> &'static str;
    fn semantic_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Records the forward pass on `g`. `semantic` is `m x d_a`, `noise` is `m x noise_dim`.
    fn forward(&self, g: &mut Graph, semantic: Var, noise: Var) -> Result<Var>;

    fn box_clone(&self) -> Box<dyn FeatureGenerator>;

    /// Forward pass with explicit noise, outside of any training graph.
    fn generate(&self, semantic: &Matrix, noise: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let a = g.constant(semantic.clone());
        let z = g.constant(noise.clone());
        let out = self.forward(&mut g, a, z)?;
        Ok(g.value(out).clone())
    }

    /// Forward pass with standard-Gaussian noise drawn from `rng`.
    fn sample(&self, semantic: &Matrix, rng: &mut dyn rand::RngCore) -> Result<Matrix> {
        let noise = standard_noise(semantic.rows(), self.noise_dim(), rng);
        self.generate(semantic, &noise)
    }
}

impl Clone for Box<dyn FeatureGenerator> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

impl Parameters for Box<dyn FeatureGenerator> {
    fn params(&self) -> Vec<&crate::numerics::Param> {
        self.as_ref().params()
    }

    fn params_mut(&mut self) -> Vec<&mut crate::numerics::Param> {
        self.as_mut().params_mut()
    }
}

impl std::fmt::Debug for dyn FeatureGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} generator ({} parameters)", self.kind(), self.parameter_count())
    }
}

pub fn standard_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::randn(rows, cols, 1.0, rng)
}
