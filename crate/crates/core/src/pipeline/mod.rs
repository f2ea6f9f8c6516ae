//! The end-to-end zero-shot pipeline: pretrain a classifier on seen classes,
//! train a feature generator, synthesize unseen features, fine-tune on the
//! union and evaluate over all classes.

mod classifier;
mod config;
mod eval;
mod strategy;
mod train;

pub use classifier::{Classifier, ClassifierMode};
pub use config::{ClassifierConfig, GeneratorConfig, TrainConfig};
pub use eval::{evaluate_gzsl, harmonic_mean, ClassAccuracy, GzslReport};
pub use strategy::{
    run_ablation, run_pipeline, sweep_primitives, AblationRow, AblationStrategy, AblationTable, Benchmark, InputProvider,
    Inputs, LossCurves, PipelineOutcome, StrategyRegistry, ABLATION_ROWS,
};
pub use train::{
    class_means, fit_classifier, pretrain_classifier, retrain_classifier, synthesize, synthesize_unseen, train_generator,
    LossSet, StepLosses, TrainedGenerator,
};
