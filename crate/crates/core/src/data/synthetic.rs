use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureDataset, Provenance};
use super::space::SemanticSpace;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Desk-scale stand-in for backbone features.
///
/// Class `c` has mean `[s·W·φ(a_c) ; b_c]`: the first `d_x − nuisance_dim`
/// columns are an orthonormal image (shared `W`, gain `s = related_scale`) of a
/// warped embedding `φ(a) = (1−w)·a + w·tanh(2·a·R)`, `R` a fixed random
/// mixing and `w = warp`; the last `nuisance_dim` columns a per-class vector
/// independent of the semantics with norm about `nuisance_scale`. Samples add
/// isotropic noise of std `related_noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d_a: usize,
    pub d_x: usize,
    pub samples_per_class: usize,
    pub related_noise: f64,
    pub related_scale: f64,
    pub warp: f64,
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d_a: 16,
            d_x: 32,
            samples_per_class: 200,
            related_noise: 0.8,
            related_scale: 8.0,
            warp: 1.0,
            nuisance_dim: 16,
            nuisance_scale: 16.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_x == 0 {
            return Err(Error::param("feature and semantic dimensions must be positive"));
        }
        if self.d_x < self.d_a + self.nuisance_dim {
            return Err(Error::param(format!(
                "d_x = {} cannot hold d_a = {} related plus {} nuisance columns",
                self.d_x, self.d_a, self.nuisance_dim
            )));
        }
        if !(self.related_noise >= 0.0) || !(self.nuisance_scale >= 0.0) || !(self.related_scale >= 0.0) {
            return Err(Error::param("noise and nuisance scales must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.warp) {
            return Err(Error::param(format!("warp = {} outside [0, 1]", self.warp)));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Validation("samples_per_class = 0 gives an empty dataset".into()));
        }
        Ok(())
    }

    pub fn related_dim(&self) -> usize {
        self.d_x - self.nuisance_dim
    }
}

/// Class means (rows, one per class) and the shared semantic map `W`.
pub struct SyntheticTruth {
    pub means: Matrix,
    /// `related_dim x d_a` with orthonormal columns.
    pub map: Matrix,
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Orthonormal columns from the QR factorization of a Gaussian matrix.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::randn(rows, cols, 1.0, rng);
    let dm = DMatrix::from_row_slice(rows, cols, g.as_slice());
    let q = dm.qr().q();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out.set(r, c, q[(r, c)]);
        }
    }
    out
}

pub fn synthetic_truth(space: &SemanticSpace, spec: &SyntheticSpec) -> Result<SyntheticTruth> {
    spec.validate()?;
    if space.dim() != spec.d_a {
        return Err(Error::Dimension {
            op: "make_synthetic_dataset",
            left: (space.num_classes(), space.dim()),
            right: (spec.d_a, spec.d_x),
        });
    }
    let related = spec.related_dim();
    let map = random_orthonormal(related, spec.d_a, &mut stream(spec.seed, 1));
    let mut warped = space.embeddings().clone();
    if spec.warp > 0.0 {
        let mix = Matrix::randn(spec.d_a, spec.d_a, 1.0 / (spec.d_a as f64).sqrt(), &mut stream(spec.seed, 5));
        let bent = warped.matmul(&mix)?.map(|v| (2.0 * v).tanh());
        warped = warped.scale(1.0 - spec.warp);
        warped.add_assign(&bent.scale(spec.warp))?;
    }
    let related_block = warped.matmul_t(&map)?.scale(spec.related_scale);
    let nuisance_std = if spec.nuisance_dim > 0 {
        spec.nuisance_scale / (spec.nuisance_dim as f64).sqrt()
    } else {
        0.0
    };
    let nuisance = Matrix::randn(space.num_classes(), spec.nuisance_dim, nuisance_std, &mut stream(spec.seed, 2));
    Ok(SyntheticTruth {
        means: related_block.concat_cols(&nuisance)?,
        map,
    })
}

/// Train split holds real samples of seen classes only; the test split holds
/// `samples_per_class` samples of every class.
pub fn make_synthetic_dataset(space: &SemanticSpace, spec: &SyntheticSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    let truth = synthetic_truth(space, spec)?;
    let sample = |classes: &[usize], rng: &mut ChaCha8Rng| -> Result<FeatureDataset> {
        let labels: Vec<usize> = classes
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, spec.samples_per_class))
            .collect();
        let mut features = truth.means.select_rows(&labels)?;
        let noise = Matrix::randn(labels.len(), spec.d_x, spec.related_noise, rng);
        features.add_assign(&noise)?;
        FeatureDataset::tagged(features, labels, Provenance::Real, space)
    };
    let seen: Vec<usize> = space.seen_ids().collect();
    let all: Vec<usize> = (0..space.num_classes()).collect();
    let train = sample(&seen, &mut stream(spec.seed, 3))?;
    let test = sample(&all, &mut stream(spec.seed, 4))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::Group;
    use crate::data::space::ToySpaceSpec;
    use crate::numerics::matrix::dot;

    fn space() -> SemanticSpace {
        SemanticSpace::synthetic(&ToySpaceSpec::default()).unwrap()
    }

    #[test]
    fn zero_noise_samples_equal_the_related_image() {
        let s = space();
        let spec = SyntheticSpec {
            related_noise: 0.0,
            related_scale: 1.0,
            warp: 0.0,
            nuisance_scale: 0.0,
            samples_per_class: 3,
            ..SyntheticSpec::default()
        };
        let truth = synthetic_truth(&s, &spec).unwrap();
        let (train, test) = make_synthetic_dataset(&s, &spec).unwrap();
        for ds in [&train, &test] {
            for (i, &c) in ds.labels().iter().enumerate() {
                let row = ds.features().row(i);
                let wa = truth.map.matmul(&Matrix::new(spec.d_a, 1, s.embedding(c).to_vec()).unwrap()).unwrap();
                for k in 0..spec.related_dim() {
                    assert!((row[k] - wa.get(k, 0)).abs() < 1e-12);
                }
                assert!(row[spec.related_dim()..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn train_is_real_seen_test_is_balanced() {
        let s = space();
        let spec = SyntheticSpec {
            samples_per_class: 10,
            ..SyntheticSpec::default()
        };
        let (train, test) = make_synthetic_dataset(&s, &spec).unwrap();
        assert_eq!(train.len(), 12 * 10);
        assert!(train.provenance().iter().all(|&p| p == Provenance::Real));
        assert!(train.groups().iter().all(|&g| g == Group::Seen));
        train.validate_for_generator(&s).unwrap();
        let counts: Vec<usize> = test.indices_by_class(16).iter().map(Vec::len).collect();
        assert_eq!(counts, vec![10; 16]);
    }

    #[test]
    fn related_block_preserves_semantic_geometry() {
        let s = space();
        let spec = SyntheticSpec {
            nuisance_scale: 0.0,
            related_scale: 3.0,
            warp: 0.0,
            ..SyntheticSpec::default()
        };
        let truth = synthetic_truth(&s, &spec).unwrap();
        let (block, _) = truth.means.slice_cols(0, spec.related_dim()).unwrap().l2_normalize_rows();
        for i in 0..s.num_classes() {
            for j in 0..s.num_classes() {
                let visual = dot(block.row(i), block.row(j));
                assert!((visual - s.cosine(i, j)).abs() < 0.05);
            }
        }
    }

    #[test]
    fn pure_function_of_inputs() {
        let s = space();
        let spec = SyntheticSpec {
            samples_per_class: 5,
            ..SyntheticSpec::default()
        };
        assert_eq!(make_synthetic_dataset(&s, &spec).unwrap(), make_synthetic_dataset(&s, &spec).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let s = space();
        let bad = [
            SyntheticSpec { samples_per_class: 0, ..SyntheticSpec::default() },
            SyntheticSpec { nuisance_dim: 20, ..SyntheticSpec::default() },
            SyntheticSpec { related_noise: -1.0, ..SyntheticSpec::default() },
            SyntheticSpec { related_scale: -1.0, ..SyntheticSpec::default() },
            SyntheticSpec { warp: 1.5, ..SyntheticSpec::default() },
            SyntheticSpec { d_a: 8, ..SyntheticSpec::default() },
        ];
        for spec in bad {
            assert!(make_synthetic_dataset(&s, &spec).is_err(), "{spec:?}");
        }
    }
}
