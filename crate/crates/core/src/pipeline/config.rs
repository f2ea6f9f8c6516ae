use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::disentangle::DisentangleConfig;
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, MmdConfig};
use crate::numerics::{AdamState, SgdState};

/// Classification-head training (pretraining and fine-tuning).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let sgd = SgdState::default();
        Self {
            pretrain_epochs: 30,
            finetune_epochs: 50,
            batch_size: 32,
            learning_rate: sgd.learning_rate,
            weight_decay: sgd.weight_decay,
            momentum: sgd.momentum,
        }
    }
}

impl ClassifierConfig {
    pub fn optimizer(&self) -> Result<SgdState> {
        SgdState::new(self.learning_rate, self.weight_decay, self.momentum)
    }
}

/// Generator architecture and its training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub d_k: usize,
    pub n_primitives: usize,
    pub layer_count: usize,
    pub gmmn_hidden: usize,
    /// One epoch visits every seen class once, `classes_per_step` at a time.
    pub epochs: usize,
    pub classes_per_step: usize,
    /// Real rows drawn per class per step; as many synthetic rows are generated.
    pub real_per_class: usize,
    /// Synthetic rows per unseen class per step for the alignment terms.
    pub unseen_per_class: usize,
    pub learning_rate: f64,
    /// Match all rows of a step at once instead of class by class.
    pub pooled_mmd: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_k: 32,
            n_primitives: 400,
            layer_count: 3,
            gmmn_hidden: 64,
            epochs: 200,
            classes_per_step: 4,
            real_per_class: 16,
            unseen_per_class: 8,
            learning_rate: 3e-3,
            pooled_mmd: false,
        }
    }
}

impl GeneratorConfig {
    pub fn spec(&self, d_a: usize, d_x: usize) -> GeneratorSpec {
        GeneratorSpec {
            d_a,
            d_x,
            d_k: self.d_k,
            n_primitives: self.n_primitives,
            layer_count: self.layer_count,
            gmmn_hidden: self.gmmn_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Registered strategy name.
    pub ablation: String,
    /// Weight of the disentanglement and alignment terms.
    pub lambda: f64,
    /// Temperature shared by the related-feature classifier and alignment.
    pub temperature: f64,
    pub classifier: ClassifierConfig,
    pub generator: GeneratorConfig,
    pub mmd: MmdConfig,
    pub include_intra: bool,
    pub include_inter: bool,
    pub epsilon_norm: f64,
    pub disentangle_hidden: Option<usize>,
    pub unrelated_dim: Option<usize>,
    pub dropout: f64,
    pub synthetic_per_class: usize,
    /// Also put synthetic seen features into classifier fine-tuning.
    pub include_synthetic_seen: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let align = AlignConfig::default();
        let dis = DisentangleConfig::default();
        Self {
            ablation: "full".into(),
            lambda: 0.002,
            temperature: 0.1,
            classifier: ClassifierConfig::default(),
            generator: GeneratorConfig::default(),
            mmd: MmdConfig::default(),
            include_intra: align.include_intra,
            include_inter: align.include_inter,
            epsilon_norm: align.epsilon_norm,
            disentangle_hidden: dis.hidden,
            unrelated_dim: dis.unrelated_dim,
            dropout: dis.dropout,
            synthetic_per_class: 100,
            include_synthetic_seen: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            temperature: self.temperature,
            include_intra: self.include_intra,
            include_inter: self.include_inter,
            epsilon_norm: self.epsilon_norm,
        }
    }

    pub fn disentangle_config(&self) -> DisentangleConfig {
        DisentangleConfig {
            temperature: self.temperature,
            hidden: self.disentangle_hidden,
            unrelated_dim: self.unrelated_dim,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        self.align_config().validate()?;
        self.disentangle_config().validate()?;
        self.mmd.validate()?;
        self.classifier.optimizer()?;
        AdamState::new(self.generator.learning_rate)?;
        let c = &self.classifier;
        if c.batch_size == 0 {
            return Err(Error::param("classifier batch size must be at least 1"));
        }
        let g = &self.generator;
        if g.classes_per_step == 0 || g.real_per_class == 0 || g.unseen_per_class == 0 {
            return Err(Error::param("generator batch counts must be at least 1"));
        }
        if self.synthetic_per_class == 0 {
            return Err(Error::param("synthetic_per_class must be at least 1"));
        }
        Ok(())
    }
}
