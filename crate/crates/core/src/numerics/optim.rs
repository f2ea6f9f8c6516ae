//! Momentum SGD (classifier) and Adam (generator and encoders).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::param::Param;
use crate::error::{Error, Result};

fn require_grad(p: &Param) -> Result<&Matrix> {
    p.grad()
        .ok_or_else(|| Error::State(format!("parameter '{}' has no gradient", p.name())))
}

/// SGD with classical momentum and weight decay folded into the gradient
/// (`g + wd·w`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SgdState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    #[serde(skip)]
    velocity: HashMap<String, Matrix>,
}

impl Default for SgdState {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            momentum: 0.9,
            velocity: HashMap::new(),
        }
    }
}

impl SgdState {
    pub fn new(learning_rate: f64, weight_decay: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::param(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::param(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Self {
            learning_rate,
            weight_decay,
            momentum,
            velocity: HashMap::new(),
        })
    }

    /// One update. Gradients are read, not cleared.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let params: Vec<&mut Param> = params.into_iter().collect();
        for p in &params {
            require_grad(p)?;
        }
        for p in params {
            let grad = require_grad(p)?.clone();
            let v = self
                .velocity
                .entry(p.name().to_owned())
                .or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            for ((vi, &gi), &wi) in v
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(p.value.as_slice())
            {
                *vi = self.momentum * *vi + gi + self.weight_decay * wi;
            }
            p.value.axpy(-self.learning_rate, v)?;
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    timestep: u64,
    #[serde(skip)]
    moments: HashMap<String, (Matrix, Matrix)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            timestep: 0,
            moments: HashMap::new(),
        }
    }
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::param(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self {
            learning_rate,
            ..Self::default()
        })
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn moments(&self, name: &str) -> Option<&(Matrix, Matrix)> {
        self.moments.get(name)
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let params: Vec<&mut Param> = params.into_iter().collect();
        for p in &params {
            require_grad(p)?;
        }
        self.timestep += 1;
        let t = self.timestep as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let grad = require_grad(p)?.clone();
            let (m, v) = self.moments.entry(p.name().to_owned()).or_insert_with(|| {
                (
                    Matrix::zeros(grad.rows(), grad.cols()),
                    Matrix::zeros(grad.rows(), grad.cols()),
                )
            });
            let values = p.value.as_mut_slice();
            for (((w, &g), mi), vi) in values
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
