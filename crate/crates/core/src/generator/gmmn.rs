use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureGenerator;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, Param, Parameters, Var};

const SLOPE: f64 = 0.2;

/// Moment-matching baseline: `[a ; z] → hidden (LeakyReLU) → d_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmnBaselineModel {
    hidden: Linear,
    out: Linear,
    d_a: usize,
    d_z: usize,
}

impl GmmnBaselineModel {
    pub fn new(d_a: usize, d_z: usize, hidden: usize, d_x: usize, seed: u64) -> Result<Self> {
        if d_a == 0 || d_z == 0 || hidden == 0 || d_x == 0 {
            return Err(Error::param(format!(
                "GMMN dimensions must be >= 1 (d_a={d_a}, d_z={d_z}, hidden={hidden}, d_x={d_x})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            hidden: Linear::new("gmmn.l0", d_a + d_z, hidden, &mut rng),
            out: Linear::new("gmmn.l1", hidden, d_x, &mut rng),
            d_a,
            d_z,
        })
    }
}

impl Parameters for GmmnBaselineModel {
    fn params(&self) -> Vec<&Param> {
        self.hidden.params().into_iter().chain(self.out.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.hidden.params_mut().into_iter().chain(self.out.params_mut()).collect()
    }
}

impl FeatureGenerator for GmmnBaselineModel {
    fn kind(&self) -> &'static str {
        "gmmn"
    }

    fn semantic_dim(&self) -> usize {
        self.d_a
    }

    fn noise_dim(&self) -> usize {
        self.d_z
    }

    fn output_dim(&self) -> usize {
        self.out.out_dim()
    }

    fn forward(&self, g: &mut Graph, semantic: Var, noise: Var) -> Result<Var> {
        let (m, da) = g.shape(semantic);
        let (mz, dz) = g.shape(noise);
        if da != self.d_a || dz != self.d_z || m != mz {
            return Err(Error::Dimension {
                op: "generate",
                left: (m, da),
                right: (mz, dz),
            });
        }
        let input = g.concat_cols(semantic, noise)?;
        let h = self.hidden.forward(g, input)?;
        let h = g.leaky_relu(h, SLOPE);
        self.out.forward(g, h)
    }

    fn box_clone(&self) -> Box<dyn FeatureGenerator> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn shapes_and_determinism() {
        let m = GmmnBaselineModel::new(4, 3, 8, 5, 1).unwrap();
        assert_eq!(m, GmmnBaselineModel::new(4, 3, 8, 5, 1).unwrap());
        let out = m.generate(&Matrix::filled(2, 4, 0.5), &Matrix::filled(2, 3, 0.1)).unwrap();
        assert_eq!(out.shape(), (2, 5));
        assert_eq!(out.row(0), out.row(1));
        assert!(GmmnBaselineModel::new(4, 0, 8, 5, 1).is_err());
    }
}
