use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pading_core::checkpoint::Checkpoint;
use pading_core::data::{make_synthetic_dataset, DatasetRole, FeatureDataset, SemanticSpace, SyntheticSpec, ToySpaceSpec};
use pading_core::generator::GeneratorRegistry;
use pading_core::numerics::Parameters;
use pading_core::pipeline::{run_ablation, run_pipeline, sweep_primitives, synthesize_unseen, AblationTable, Inputs, StrategyRegistry};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, StageContext};
use crate::report::{write_json, AblationReport, RunReport, Timings, SCHEMA_VERSION};

/// Seeds below this make the ablation ordering statistically meaningless.
pub const MIN_ORDERING_SEEDS: usize = 5;

/// Resolved config for reports. The output directory is left out: where a
/// report is written does not change what it says.
fn resolved(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    ExperimentConfig::keys()
        .filter(|(k, _)| *k != "run.out")
        .map(|(k, _)| (k.to_string(), cfg.get(k).unwrap_or_default()))
        .collect()
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Semantic space and features for `seed`, from files when configured and
/// synthesized otherwise.
pub fn load_inputs(cfg: &ExperimentConfig, seed: u64) -> CliResult<Inputs> {
    let p = &cfg.paths;
    let space = match &p.embeddings {
        Some(path) => SemanticSpace::load(path, &p.seen_classes, &p.unseen_classes).stage("load embeddings")?,
        None => SemanticSpace::synthetic(&ToySpaceSpec {
            seed,
            ..cfg.bench.space.clone()
        })
        .stage("build semantic space")?,
    };
    let (train, test) = match (&p.train_csv, &p.test_csv) {
        (Some(tr), Some(te)) => (
            FeatureDataset::load_csv(tr, &space, DatasetRole::GeneratorTraining).stage("load train features")?,
            FeatureDataset::load_csv(te, &space, DatasetRole::Evaluation).stage("load test features")?,
        ),
        _ => make_synthetic_dataset(&space, &SyntheticSpec {
            d_a: space.dim(),
            seed,
            ..cfg.bench.data.clone()
        })
        .stage("synthesize features")?,
    };
    Ok(Inputs { space, train, test })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub train_rows: usize,
    pub test_rows: usize,
    pub files: Vec<PathBuf>,
}

/// Writes `train.csv`, `test.csv` and `embeddings.txt` for `cfg.train.seed`.
pub fn cmd_synth_data(cfg: &ExperimentConfig) -> CliResult<SynthSummary> {
    cfg.validate()?;
    let inputs = load_inputs(cfg, cfg.train.seed)?;
    ensure_dir(&cfg.out)?;
    let files = vec![cfg.out.join("train.csv"), cfg.out.join("test.csv"), cfg.out.join("embeddings.txt")];
    inputs.train.export_csv(&files[0], &inputs.space).stage("write train features")?;
    inputs.test.export_csv(&files[1], &inputs.space).stage("write test features")?;
    inputs.space.save(&files[2]).stage("write embeddings")?;
    log::info!("train rows {}, test rows {}", inputs.train.len(), inputs.test.len());
    Ok(SynthSummary {
        train_rows: inputs.train.len(),
        test_rows: inputs.test.len(),
        files,
    })
}

/// One end-to-end pipeline run of `cfg.train.ablation` at `cfg.train.seed`.
///
/// Writes `report.json`, `timings.json`, `config.txt` and a checkpoint per
/// trained module into `cfg.out`.
pub fn cmd_run(cfg: &ExperimentConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let inputs = load_inputs(cfg, cfg.train.seed)?;
    let strategies = StrategyRegistry::default();
    let generators = GeneratorRegistry::default();
    let outcome = run_pipeline(&inputs, &cfg.train, &strategies, &generators).stage("pipeline")?;
    ensure_dir(&cfg.out)?;

    let mut artifacts = vec!["report.json".to_string(), "timings.json".to_string(), "config.txt".to_string()];
    let mut save = |name: &str, ckpt: pading_core::Result<Checkpoint>| -> CliResult<()> {
        ckpt.and_then(|c| c.save(&cfg.out.join(name))).stage("write checkpoint")?;
        artifacts.push(name.to_string());
        Ok(())
    };
    save("classifier.ckpt", Checkpoint::from_params(outcome.classifier.params()))?;
    if let Some(g) = &outcome.generator {
        save("generator.ckpt", Checkpoint::from_params(g.params()))?;
    }
    if let Some(d) = &outcome.disentangler {
        save("disentangler.ckpt", Checkpoint::from_params(d.params()))?;
    }

    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        config: resolved(cfg),
        strategy: outcome.strategy.clone(),
        generator_kind: outcome.generator.as_ref().map(|g| g.kind().to_string()),
        stages: outcome.stage_seconds.iter().map(|(s, _)| s.clone()).collect(),
        pretrain_seen_mean: outcome.pretrain_seen_mean,
        report: outcome.report,
        curves: outcome.curves,
        artifacts,
    };
    write_text(&cfg.out.join("config.txt"), &cfg.to_text())?;
    write_json(&cfg.out.join("report.json"), &report)?;
    write_json(&cfg.out.join("timings.json"), &Timings {
        stages: outcome.stage_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
    })?;
    Ok(report)
}

/// Strategy comparison over `cfg.rows`, or a primitive-count sweep of
/// `cfg.train.ablation` when `cfg.sweep_primitives` is set. Writes
/// `ablation.txt` and `ablation.json`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> CliResult<AblationReport> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if cfg.seeds.len() < MIN_ORDERING_SEEDS {
        let w = format!(
            "{} seed(s): ordering comparisons need at least {MIN_ORDERING_SEEDS} seeds to mean anything",
            cfg.seeds.len()
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let strategies = StrategyRegistry::default();
    let generators = GeneratorRegistry::default();
    let provider = |seed: u64| load_inputs(cfg, seed).map_err(|e| match e {
        CliError::Stage { source, .. } | CliError::Core(source) => source,
        other => pading_core::Error::Validation(other.to_string()),
    });
    let (kind, table): (&str, AblationTable) = if cfg.sweep_primitives.is_empty() {
        let rows: Vec<&str> = cfg.rows.iter().map(String::as_str).collect();
        ("rows", run_ablation(&provider, &cfg.train, &rows, &cfg.seeds, &strategies, &generators).stage("ablation")?)
    } else {
        (
            "sweep",
            sweep_primitives(&provider, &cfg.train, &cfg.sweep_primitives, &cfg.seeds, &strategies, &generators)
                .stage("primitive sweep")?,
        )
    };
    ensure_dir(&cfg.out)?;
    let mut text = table.to_text();
    for w in &warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    write_text(&cfg.out.join("ablation.txt"), &text)?;
    let report = AblationReport {
        schema_version: SCHEMA_VERSION,
        config: resolved(cfg),
        kind: kind.into(),
        table,
        warnings,
    };
    write_json(&cfg.out.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportSummary {
    pub rows: usize,
    pub files: Vec<PathBuf>,
}

/// Rebuilds the generator saved by `run` in `cfg.out` and writes its
/// synthetic unseen features plus the semantic space it was trained on.
///
/// The run's own recorded config decides the architecture and inputs, so
/// only `cfg.out` and `cfg.train.synthetic_per_class` matter here.
pub fn cmd_export(cfg: &ExperimentConfig) -> CliResult<ExportSummary> {
    let report = RunReport::load(&cfg.out.join("report.json"))?;
    let kind = report.generator_kind.as_deref().ok_or_else(|| CliError::Config {
        key: "ablation".into(),
        message: format!("run in {} used {:?}, which trains no generator", cfg.out.display(), report.strategy),
    })?;
    let mut recorded = ExperimentConfig::default();
    for (k, v) in &report.config {
        recorded.set(k, v)?;
    }
    let inputs = load_inputs(&recorded, recorded.train.seed)?;
    let spec = recorded.train.generator.spec(inputs.space.dim(), inputs.train.dim());
    let mut generator = GeneratorRegistry::default().build(kind, &spec, 0).stage("build generator")?;
    Checkpoint::load(&cfg.out.join("generator.ckpt"))
        .and_then(|c| c.load_into(generator.params_mut()))
        .stage("load generator checkpoint")?;
    let syn = synthesize_unseen(generator.as_ref(), &inputs.space, cfg.train.synthetic_per_class, recorded.train.seed)
        .stage("synthesize")?;
    let files = vec![cfg.out.join("synthetic_unseen.csv"), cfg.out.join("embeddings.txt")];
    syn.export_csv(&files[0], &inputs.space).stage("write synthetic features")?;
    inputs.space.save(&files[1]).stage("write embeddings")?;
    Ok(ExportSummary { rows: syn.len(), files })
}
