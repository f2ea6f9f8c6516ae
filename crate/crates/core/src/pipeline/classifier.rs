use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SemanticSpace;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Param, Parameters, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierMode {
    /// A free linear head `x·W + b`.
    Learned,
    /// Class weights are the semantic rows; only a visual projection
    /// `d_x → d_a` is learned, giving logits `(x·P)·a_c`.
    Projection,
}

impl fmt::Display for ClassifierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierMode::Learned => "learned",
            ClassifierMode::Projection => "projection",
        })
    }
}

impl FromStr for ClassifierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(ClassifierMode::Learned),
            "projection" => Ok(ClassifierMode::Projection),
            other => Err(Error::param(format!("unknown classifier mode {other:?}"))),
        }
    }
}

/// Linear classification head over features.
///
/// Covers the first `num_classes` classes of the space it was built for
/// (the seen classes before [`Classifier::expand`], all classes after).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    mode: ClassifierMode,
    /// Learned: `d_x × C` weights. Projection: the `d_x × d_a` projection.
    weight: Param,
    /// Learned: `1 × C` bias. Projection: unused `1 × 0`.
    bias: Param,
    /// Projection mode only: semantic rows of every class in the space.
    class_embeddings: Matrix,
    num_classes: usize,
}

impl Classifier {
    /// Head over the seen classes of `space`.
    pub fn new(mode: ClassifierMode, d_x: usize, space: &SemanticSpace, seed: u64) -> Result<Self> {
        if d_x == 0 {
            return Err(Error::param("classifier input dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.num_seen();
        Ok(match mode {
            ClassifierMode::Learned => Self {
                mode,
                weight: Param::init_linear("cls.w", d_x, n, &mut rng),
                bias: Param::new("cls.b", Matrix::zeros(1, n)),
                class_embeddings: Matrix::zeros(0, 0),
                num_classes: n,
            },
            ClassifierMode::Projection => Self {
                mode,
                weight: Param::init_linear("cls.proj", d_x, space.dim(), &mut rng),
                bias: Param::new("cls.b", Matrix::zeros(1, 0)),
                class_embeddings: space.embeddings().clone(),
                num_classes: n,
            },
        })
    }

    pub fn mode(&self) -> ClassifierMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape().0
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Class weight matrix `d_x × C` in learned mode; `None` in projection mode.
    pub fn weights(&self) -> Option<&Matrix> {
        (self.mode == ClassifierMode::Learned).then_some(&self.weight.value)
    }

    /// Grows the head to every class of `space`. New learned columns are
    /// the semantic rows when `d_x == d_a`, zero otherwise; projection mode
    /// simply starts scoring the extra semantic rows.
    pub fn expand(&mut self, space: &SemanticSpace) -> Result<()> {
        let total = space.num_classes();
        if total < self.num_classes {
            return Err(Error::State(format!(
                "cannot shrink classifier from {} to {total} classes",
                self.num_classes
            )));
        }
        if self.mode == ClassifierMode::Learned {
            let d_x = self.input_dim();
            let mut w = Matrix::zeros(d_x, total);
            let mut b = Matrix::zeros(1, total);
            for r in 0..d_x {
                w.row_mut(r)[..self.num_classes].copy_from_slice(self.weight.value.row(r));
            }
            b.row_mut(0)[..self.num_classes].copy_from_slice(self.bias.value.row(0));
            if d_x == space.dim() {
                for c in self.num_classes..total {
                    for (r, &v) in space.embedding(c).iter().enumerate() {
                        w.set(r, c, v);
                    }
                }
            }
            self.weight = Param::new("cls.w", w);
            self.bias = Param::new("cls.b", b);
        }
        self.num_classes = total;
        Ok(())
    }

    /// Records the logits of `x` (`n × d_x`) on `g`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let h = g.matmul(x, w)?;
        match self.mode {
            ClassifierMode::Learned => {
                let b = g.param(&self.bias);
                g.add_row(h, b)
            }
            ClassifierMode::Projection => {
                let rows = self.class_embeddings.select_rows(&(0..self.num_classes).collect::<Vec<_>>())?;
                let a = g.constant(rows);
                g.matmul_t(h, a)
            }
        }
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv)?;
        Ok(g.value(out).clone())
    }

    /// Argmax class per row, ties toward the lowest index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }
}

impl Parameters for Classifier {
    fn params(&self) -> Vec<&Param> {
        match self.mode {
            ClassifierMode::Learned => vec![&self.weight, &self.bias],
            ClassifierMode::Projection => vec![&self.weight],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self.mode {
            ClassifierMode::Learned => vec![&mut self.weight, &mut self.bias],
            ClassifierMode::Projection => vec![&mut self.weight],
        }
    }
}
