use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// A named trainable matrix together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    name: String,
    pub value: Matrix,
    #[serde(skip, default)]
    grad: Option<Matrix>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    /// Scaled-Gaussian init with standard deviation `1/sqrt(fan_in)`.
    pub fn init_linear<R: Rng + ?Sized>(
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self::new(name, Matrix::randn(fan_in, fan_out, scale, rng))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    /// Gradient accumulated since the last [`Param::zero_grad`], if any.
    pub fn grad(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }

    /// Gradient, or zeros when nothing has been accumulated.
    pub fn grad_or_zeros(&self) -> Matrix {
        self.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value.rows(), self.value.cols()))
    }

    pub fn accumulate(&mut self, g: &Matrix) {
        debug_assert_eq!(g.shape(), self.value.shape(), "gradient shape for {}", self.name);
        match &mut self.grad {
            Some(acc) => {
                for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.clone()),
        }
    }

    /// Clears the gradient. Afterwards the gradient reads as all zeros and
    /// optimizers treat the parameter as unpopulated until the next backward pass.
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Anything that owns trainable parameters.
pub trait Parameters {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

impl Parameters for Vec<Param> {
    fn params(&self) -> Vec<&Param> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_reads_as_zeros() {
        let mut p = Param::new("w", Matrix::filled(2, 3, 1.0));
        p.accumulate(&Matrix::filled(2, 3, 0.5));
        p.accumulate(&Matrix::filled(2, 3, 0.5));
        assert_eq!(p.grad().unwrap(), &Matrix::filled(2, 3, 1.0));
        p.zero_grad();
        assert!(p.grad().is_none());
        assert_eq!(p.grad_or_zeros(), Matrix::zeros(2, 3));
        assert_eq!(p.grad_or_zeros().shape(), p.shape());
    }
}
