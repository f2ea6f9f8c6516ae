//! Small layer helpers shared by the generators, encoders and classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::param::Param;
use crate::error::Result;

/// Affine map `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::init_linear(format!("{name}.w"), fan_in, fan_out, rng),
            bias: Param::new(format!("{name}.b"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight.value)?.add_row(&self.bias.value)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data).expect("mask shape")
}

/// Applies dropout when an RNG is supplied (train mode); identity otherwise.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let (r, c) = g.shape(x);
            let mask = dropout_mask(r, c, rate, rng);
            g.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}
