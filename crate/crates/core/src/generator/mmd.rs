use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::mmd_with_grad;
use crate::numerics::Matrix;

/// Kernel bandwidths for the generator objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    pub bandwidths: Vec<f64>,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidths: vec![2.0, 5.0, 10.0, 20.0, 40.0, 60.0],
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(Error::param("at least one kernel bandwidth is required"));
        }
        if let Some(s) = self.bandwidths.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::param(format!("kernel bandwidth must be positive, got {s}")));
        }
        Ok(())
    }
}

/// `exp(−‖f − f'‖² / (2σ²))`.
pub fn gaussian_kernel(f: &[f64], f2: &[f64], sigma: f64) -> Result<f64> {
    if f.len() != f2.len() {
        return Err(Error::Dimension {
            op: "gaussian_kernel",
            left: (1, f.len()),
            right: (1, f2.len()),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    let sq: f64 = f.iter().zip(f2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

/// Biased MMD² between two sample sets, each kernel sum normalized by its
/// number of pairs, summed over all bandwidths.
pub fn mmd_loss(real: &Matrix, synthetic: &Matrix, cfg: &MmdConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(mmd_with_grad(real, synthetic, &cfg.bandwidths)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct triple sum, independent of the fused implementation.
    fn mmd_oracle(x: &Matrix, y: &Matrix, sigmas: &[f64]) -> f64 {
        let mut total = 0.0;
        for &s in sigmas {
            let k = |a: &[f64], b: &[f64]| gaussian_kernel(a, b, s).unwrap();
            let (n, m) = (x.rows() as f64, y.rows() as f64);
            let mut xx = 0.0;
            for a in x.row_iter() {
                for b in x.row_iter() {
                    xx += k(a, b);
                }
            }
            let mut yy = 0.0;
            for a in y.row_iter() {
                for b in y.row_iter() {
                    yy += k(a, b);
                }
            }
            let mut xy = 0.0;
            for a in x.row_iter() {
                for b in y.row_iter() {
                    xy += k(a, b);
                }
            }
            total += xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m);
        }
        total
    }

    #[test]
    fn kernel_examples() {
        let f = [0.3, -1.0, 2.0];
        assert_eq!(gaussian_kernel(&f, &f, 1.3).unwrap(), 1.0);
        let g = [1.0, 0.5, 0.0];
        assert_eq!(gaussian_kernel(&f, &g, 2.0).unwrap(), gaussian_kernel(&g, &f, 2.0).unwrap());
        let v = gaussian_kernel(&[0.0, 0.0], &[2.0, 0.0], 2.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
        assert!(gaussian_kernel(&f, &g, 0.0).is_err());
        assert!(gaussian_kernel(&f, &[1.0], 1.0).is_err());
    }

    #[test]
    fn single_pair_analytic_value() {
        let cfg = MmdConfig { bandwidths: vec![2.0] };
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let v = mmd_loss(&x, &y, &cfg).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.78694).abs() < 1e-5);
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::randn(7, 5, 1.0, &mut rng);
        assert!(mmd_loss(&x, &x, &MmdConfig::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_sets_and_bad_config_are_rejected() {
        let x = Matrix::zeros(2, 3);
        assert!(mmd_loss(&Matrix::zeros(0, 3), &x, &MmdConfig::default()).is_err());
        assert!(mmd_loss(&x, &x, &MmdConfig { bandwidths: vec![] }).is_err());
        assert!(mmd_loss(&x, &x, &MmdConfig { bandwidths: vec![1.0, -2.0] }).is_err());
    }

    proptest! {
        #[test]
        fn matches_oracle_symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..6, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Matrix::randn(n, 3, 2.0, &mut rng);
            let y = Matrix::randn(m, 3, 2.0, &mut rng);
            let cfg = MmdConfig::default();
            let v = mmd_loss(&x, &y, &cfg).unwrap();
            prop_assert!(v >= -1e-12);
            prop_assert!((v - mmd_oracle(&x, &y, &cfg.bandwidths)).abs() < 1e-12);
            prop_assert!((v - mmd_loss(&y, &x, &cfg).unwrap()).abs() < 1e-12);
        }
    }
}
