use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierMode};
use super::config::TrainConfig;
use super::eval::{evaluate_gzsl, GzslReport};
use super::train::{
    pretrain_classifier, retrain_classifier, synthesize, synthesize_unseen, train_generator, LossSet, StepLosses,
};
use crate::data::{make_synthetic_dataset, FeatureDataset, SemanticSpace, SyntheticSpec, ToySpaceSpec};
use crate::disentangle::Disentangler;
use crate::error::{Error, Result};
use crate::generator::{FeatureGenerator, GeneratorRegistry};

/// Everything one pipeline run reads.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub space: SemanticSpace,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

/// The seeded synthetic benchmark: a toy semantic space plus features drawn
/// from it. Both specs take their seed from [`Benchmark::inputs`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub space: ToySpaceSpec,
    pub data: SyntheticSpec,
}

impl Benchmark {
    pub fn inputs(&self, seed: u64) -> Result<Inputs> {
        let space = SemanticSpace::synthetic(&ToySpaceSpec {
            seed,
            ..self.space.clone()
        })?;
        let (train, test) = make_synthetic_dataset(&space, &SyntheticSpec {
            seed,
            ..self.data.clone()
        })?;
        Ok(Inputs { space, train, test })
    }
}

/// Per-stage loss curves of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub pretrain: Vec<f64>,
    pub generator: Vec<StepLosses>,
    pub finetune: Vec<f64>,
}

pub struct PipelineOutcome {
    pub strategy: String,
    pub report: GzslReport,
    /// Mean per-class accuracy of the pretrained head on seen test rows,
    /// choosing among seen classes only.
    pub pretrain_seen_mean: f64,
    pub curves: LossCurves,
    pub classifier: Classifier,
    pub generator: Option<Box<dyn FeatureGenerator>>,
    pub disentangler: Option<Disentangler>,
    /// Wall-clock seconds per stage, in execution order.
    pub stage_seconds: Vec<(String, f64)>,
}

/// An ablation row: a complete recipe from features to a GZSL report.
pub trait AblationStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn describe(&self) -> &'static str;
    fn run(&self, inputs: &Inputs, cfg: &TrainConfig, generators: &GeneratorRegistry) -> Result<PipelineOutcome>;
}

struct Timer(Vec<(String, f64)>, Instant);

impl Timer {
    fn new() -> Self {
        Self(Vec::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.push((stage.to_string(), (now - self.1).as_secs_f64()));
        self.1 = now;
    }
}

fn seen_only_accuracy(classifier: &Classifier, test: &FeatureDataset, space: &SemanticSpace) -> Result<f64> {
    let rows: Vec<usize> = (0..test.len()).filter(|&i| space.is_seen(test.labels()[i])).collect();
    let seen = test.subset(&rows)?;
    let predictions = classifier.predict(seen.features())?;
    let mut correct = vec![0usize; space.num_seen()];
    let mut total = vec![0usize; space.num_seen()];
    for (&l, &p) in seen.labels().iter().zip(&predictions) {
        total[l] += 1;
        correct[l] += usize::from(l == p);
    }
    let acc: Vec<f64> = (0..space.num_seen())
        .filter(|&c| total[c] > 0)
        .map(|c| correct[c] as f64 / total[c] as f64)
        .collect();
    Ok(if acc.is_empty() { 0.0 } else { acc.iter().sum::<f64>() / acc.len() as f64 })
}

/// Classifier whose class weights are the semantic rows; no generator, no
/// fine-tuning.
struct Projection;

impl AblationStrategy for Projection {
    fn name(&self) -> &'static str {
        "projection"
    }

    fn describe(&self) -> &'static str {
        "semantic rows as class weights, visual projection trained on seen classes"
    }

    fn run(&self, inputs: &Inputs, cfg: &TrainConfig, _: &GeneratorRegistry) -> Result<PipelineOutcome> {
        let mut timer = Timer::new();
        let (mut classifier, pretrain) = pretrain_classifier(&inputs.train, &inputs.space, ClassifierMode::Projection, cfg)?;
        timer.lap("pretrain");
        let pretrain_seen_mean = seen_only_accuracy(&classifier, &inputs.test, &inputs.space)?;
        classifier.expand(&inputs.space)?;
        let report = evaluate_gzsl(&classifier, &inputs.test, &inputs.space)?;
        timer.lap("evaluate");
        Ok(PipelineOutcome {
            strategy: self.name().into(),
            report,
            pretrain_seen_mean,
            curves: LossCurves {
                pretrain,
                ..Default::default()
            },
            classifier,
            generator: None,
            disentangler: None,
            stage_seconds: timer.0,
        })
    }
}

/// Pretrain, train a generator, synthesize unseen features, fine-tune, evaluate.
struct Generative {
    name: &'static str,
    describe: &'static str,
    kind: &'static str,
    losses: LossSet,
}

impl AblationStrategy for Generative {
    fn name(&self) -> &'static str {
        self.name
    }

    fn describe(&self) -> &'static str {
        self.describe
    }

    fn run(&self, inputs: &Inputs, cfg: &TrainConfig, generators: &GeneratorRegistry) -> Result<PipelineOutcome> {
        let Inputs { space, train, test } = inputs;
        let mut timer = Timer::new();
        let (classifier, pretrain) = pretrain_classifier(train, space, ClassifierMode::Learned, cfg)?;
        let pretrain_seen_mean = seen_only_accuracy(&classifier, test, space)?;
        timer.lap("pretrain");

        let spec = cfg.generator.spec(space.dim(), train.dim());
        let generator = generators.build(self.kind, &spec, cfg.seed ^ 0x6E4E)?;
        let trained = train_generator(generator, train, space, cfg, self.losses, cfg.seed.wrapping_add(0x7A1))?;
        timer.lap("train_generator");

        let synthetic = synthesize_unseen(trained.generator.as_ref(), space, cfg.synthetic_per_class, cfg.seed ^ 0x5E)?;
        let synthetic_seen = if cfg.include_synthetic_seen {
            let seen: Vec<usize> = space.seen_ids().collect();
            Some(synthesize(trained.generator.as_ref(), space, &seen, cfg.synthetic_per_class, cfg.seed ^ 0x55)?)
        } else {
            None
        };
        timer.lap("synthesize");

        let (classifier, finetune) = retrain_classifier(&classifier, train, &synthetic, synthetic_seen.as_ref(), space, cfg)?;
        timer.lap("retrain");
        let report = evaluate_gzsl(&classifier, test, space)?;
        timer.lap("evaluate");
        Ok(PipelineOutcome {
            strategy: self.name.into(),
            report,
            pretrain_seen_mean,
            curves: LossCurves {
                pretrain,
                generator: trained.history,
                finetune,
            },
            classifier,
            generator: Some(trained.generator),
            disentangler: trained.disentangler,
            stage_seconds: timer.0,
        })
    }
}

/// The ablation ladder, weakest first.
pub const ABLATION_ROWS: [&str; 5] = ["projection", "gmmn", "p_only", "p_a", "full"];

/// Strategies selectable by name.
pub struct StrategyRegistry {
    strategies: BTreeMap<&'static str, Box<dyn AblationStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Projection));
        let rows: [(&'static str, &'static str, &'static str, LossSet); 4] = [
            ("gmmn", "MLP generator, moment matching only", "gmmn", LossSet::default()),
            ("p_only", "primitive generator, moment matching only", "primitive", LossSet::default()),
            (
                "p_a",
                "primitive generator plus alignment on raw features",
                "primitive",
                LossSet {
                    alignment: true,
                    disentangle: false,
                },
            ),
            (
                "full",
                "primitive generator plus disentanglement and alignment on related features",
                "primitive",
                LossSet {
                    alignment: true,
                    disentangle: true,
                },
            ),
        ];
        for (name, describe, kind, losses) in rows {
            r.register(Box::new(Generative {
                name,
                describe,
                kind,
                losses,
            }));
        }
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, strategy: Box<dyn AblationStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn AblationStrategy> {
        self.strategies.get(name).map(|s| s.as_ref()).ok_or_else(|| {
            Error::param(format!("unknown ablation {name:?}; known: {}", self.names().join(", ")))
        })
    }
}

/// Runs the strategy named by `cfg.ablation`.
pub fn run_pipeline(
    inputs: &Inputs,
    cfg: &TrainConfig,
    strategies: &StrategyRegistry,
    generators: &GeneratorRegistry,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    strategies.get(&cfg.ablation)?.run(inputs, cfg, generators)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<GzslReport>,
    pub seen_mean: f64,
    pub unseen_mean: f64,
    pub hm: f64,
}

impl AblationRow {
    fn new(label: String, strategy: String, seeds: Vec<u64>, reports: Vec<GzslReport>) -> Self {
        let avg = |f: fn(&GzslReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len().max(1) as f64;
        Self {
            seen_mean: avg(|r| r.seen_mean),
            unseen_mean: avg(|r| r.unseen_mean),
            hm: avg(|r| r.hm),
            label,
            strategy,
            seeds,
            reports,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Aligned text table of seed-averaged percentages.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}  seeds\n", "row", "seen", "unseen", "HM");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {}",
                r.label,
                100.0 * r.seen_mean,
                100.0 * r.unseen_mean,
                100.0 * r.hm,
                r.seeds.len()
            );
        }
        out
    }
}

/// Source of pipeline inputs for a given seed.
pub type InputProvider<'a> = dyn Fn(u64) -> Result<Inputs> + 'a;

fn run_rows(
    provider: &InputProvider<'_>,
    rows: &[(String, TrainConfig)],
    seeds: &[u64],
    strategies: &StrategyRegistry,
    generators: &GeneratorRegistry,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::param("at least one seed is required"));
    }
    let mut reports: Vec<Vec<GzslReport>> = vec![Vec::new(); rows.len()];
    for &seed in seeds {
        let inputs = provider(seed)?;
        for (slot, (label, cfg)) in reports.iter_mut().zip(rows) {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let outcome = run_pipeline(&inputs, &cfg, strategies, generators)?;
            log::info!(
                "{label} seed {seed}: seen {:.3} unseen {:.3} hm {:.3}",
                outcome.report.seen_mean,
                outcome.report.unseen_mean,
                outcome.report.hm
            );
            slot.push(outcome.report);
        }
    }
    Ok(AblationTable {
        rows: rows
            .iter()
            .zip(reports)
            .map(|((label, cfg), r)| AblationRow::new(label.clone(), cfg.ablation.clone(), seeds.to_vec(), r))
            .collect(),
    })
}

/// Runs each named strategy on the inputs of every seed. Rows keep the order
/// given; inputs are rebuilt once per seed and shared by all rows.
pub fn run_ablation(
    provider: &InputProvider<'_>,
    cfg: &TrainConfig,
    rows: &[&str],
    seeds: &[u64],
    strategies: &StrategyRegistry,
    generators: &GeneratorRegistry,
) -> Result<AblationTable> {
    let configs: Vec<(String, TrainConfig)> = rows
        .iter()
        .map(|&name| {
            strategies.get(name)?;
            Ok((
                name.to_string(),
                TrainConfig {
                    ablation: name.into(),
                    ..cfg.clone()
                },
            ))
        })
        .collect::<Result<_>>()?;
    run_rows(provider, &configs, seeds, strategies, generators)
}

/// Runs `cfg.ablation` once per primitive count.
pub fn sweep_primitives(
    provider: &InputProvider<'_>,
    cfg: &TrainConfig,
    counts: &[usize],
    seeds: &[u64],
    strategies: &StrategyRegistry,
    generators: &GeneratorRegistry,
) -> Result<AblationTable> {
    strategies.get(&cfg.ablation)?;
    let configs: Vec<(String, TrainConfig)> = counts
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.generator.n_primitives = n;
            (format!("{}@{n}", cfg.ablation), c)
        })
        .collect();
    run_rows(provider, &configs, seeds, strategies, generators)
}
