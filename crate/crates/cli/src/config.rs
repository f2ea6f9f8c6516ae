//! Flat `key = value` experiment configuration.
//!
//! Lines are `dotted.key = value`; `#` starts a comment. Lists are comma
//! separated, optional values take `auto`. Every key has a default, so an
//! empty file is a valid config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pading_core::pipeline::{Benchmark, TrainConfig, ABLATION_ROWS};

use crate::error::{CliError, CliResult};

/// Everything a command reads, resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub bench: Benchmark,
    pub paths: Paths,
    /// Seeds of `ablate`; `run` uses `seed`.
    pub seeds: Vec<u64>,
    pub rows: Vec<String>,
    /// Non-empty switches `ablate` to a primitive-count sweep.
    pub sweep_primitives: Vec<usize>,
    pub out: PathBuf,
}

/// External inputs. Without an embedding file the toy space is synthesized;
/// without feature files the features are.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub embeddings: Option<PathBuf>,
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            bench: Benchmark::default(),
            paths: Paths::default(),
            seeds: (0..5).collect(),
            rows: ABLATION_ROWS.iter().map(|s| s.to_string()).collect(),
            sweep_primitives: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse(s: &str) -> Result<Self, String>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{s:?}: {e}"))
            }
        }
    )*};
}
from_str_value!(f64, usize, u64, bool, String);

impl ConfigValue for Option<usize> {
    fn render(&self) -> String {
        self.map_or_else(|| "auto".into(), |v| v.to_string())
    }
    fn parse(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            usize::parse(s).map(Some)
        }
    }
}

impl ConfigValue for Option<PathBuf> {
    fn render(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
    fn parse(s: &str) -> Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
}

impl ConfigValue for PathBuf {
    fn render(&self) -> String {
        self.display().to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Err("empty path".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(",")
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(T::parse).collect()
    }
}

struct Field {
    key: &'static str,
    doc: &'static str,
    get: fn(&ExperimentConfig) -> String,
    set: fn(&mut ExperimentConfig, &str) -> Result<(), String>,
}

macro_rules! fields {
    ($($key:literal => $($f:ident).+ , $doc:literal;)*) => {
        static FIELDS: &[Field] = &[$(Field {
            key: $key,
            doc: $doc,
            get: |c| ConfigValue::render(&c.$($f).+),
            set: |c, s| {
                c.$($f).+ = ConfigValue::parse(s)?;
                Ok(())
            },
        }),*];
    };
}

fields! {
    "seed" => train.seed, "seed of `run` (benchmark and training)";
    "ablation" => train.ablation, "strategy of `run` and of a primitive sweep";
    "lambda" => train.lambda, "weight of the disentanglement and alignment terms";
    "temperature" => train.temperature, "softmax temperature of related classification and alignment";
    "synthetic_per_class" => train.synthetic_per_class, "synthetic unseen rows per class for fine-tuning";
    "include_synthetic_seen" => train.include_synthetic_seen, "also fine-tune on synthetic seen rows";
    "classifier.pretrain_epochs" => train.classifier.pretrain_epochs, "epochs on real seen features";
    "classifier.finetune_epochs" => train.classifier.finetune_epochs, "epochs on the real+synthetic union";
    "classifier.batch_size" => train.classifier.batch_size, "rows per SGD step";
    "classifier.learning_rate" => train.classifier.learning_rate, "SGD step size";
    "classifier.weight_decay" => train.classifier.weight_decay, "SGD L2 penalty";
    "classifier.momentum" => train.classifier.momentum, "SGD momentum";
    "generator.d_k" => train.generator.d_k, "primitive and attention width";
    "generator.n_primitives" => train.generator.n_primitives, "primitive bank size";
    "generator.layer_count" => train.generator.layer_count, "stacked cross-attention blocks";
    "generator.gmmn_hidden" => train.generator.gmmn_hidden, "hidden width of the MLP baseline";
    "generator.epochs" => train.generator.epochs, "passes over the seen classes";
    "generator.classes_per_step" => train.generator.classes_per_step, "seen classes per Adam step";
    "generator.real_per_class" => train.generator.real_per_class, "real rows per class per step";
    "generator.unseen_per_class" => train.generator.unseen_per_class, "synthetic unseen rows per class per step";
    "generator.learning_rate" => train.generator.learning_rate, "Adam step size";
    "generator.pooled_mmd" => train.generator.pooled_mmd, "one MMD over the whole step instead of per class";
    "mmd.bandwidths" => train.mmd.bandwidths, "Gaussian kernel widths";
    "align.include_intra" => train.include_intra, "align pairs of the same origin";
    "align.include_inter" => train.include_inter, "align pairs across origins";
    "align.epsilon_norm" => train.epsilon_norm, "norm floor of the cosine";
    "disentangle.hidden" => train.disentangle_hidden, "encoder/decoder width (auto = 2 d_x)";
    "disentangle.unrelated_dim" => train.unrelated_dim, "unrelated code width (auto = d_a)";
    "disentangle.dropout" => train.dropout, "train-time dropout rate";
    "space.n_seen" => bench.space.n_seen, "toy space: seen classes";
    "space.n_unseen" => bench.space.n_unseen, "toy space: unseen classes";
    "space.dim" => bench.space.dim, "toy space: semantic dimension d_a";
    "space.attributes" => bench.space.attributes, "toy space: shared attribute directions";
    "space.attributes_per_class" => bench.space.attributes_per_class, "toy space: attributes mixed per class";
    "space.private_weight" => bench.space.private_weight, "toy space: weight of the class-private direction";
    "data.d_x" => bench.data.d_x, "synthetic features: dimension";
    "data.samples_per_class" => bench.data.samples_per_class, "synthetic features: rows per class and split";
    "data.related_noise" => bench.data.related_noise, "synthetic features: noise std";
    "data.related_scale" => bench.data.related_scale, "synthetic features: gain of the semantic block";
    "data.warp" => bench.data.warp, "synthetic features: nonlinearity of the semantic block, 0..1";
    "data.nuisance_dim" => bench.data.nuisance_dim, "synthetic features: semantics-free columns";
    "data.nuisance_scale" => bench.data.nuisance_scale, "synthetic features: norm of the semantics-free block";
    "paths.embeddings" => paths.embeddings, "embedding file (empty = toy space)";
    "paths.seen_classes" => paths.seen_classes, "seen class names in the embedding file";
    "paths.unseen_classes" => paths.unseen_classes, "unseen class names in the embedding file";
    "paths.train_csv" => paths.train_csv, "real seen training features (empty = synthesize)";
    "paths.test_csv" => paths.test_csv, "test features (empty = synthesize)";
    "run.seeds" => seeds, "seeds of `ablate`";
    "run.rows" => rows, "strategies of `ablate`";
    "run.sweep_primitives" => sweep_primitives, "primitive counts; non-empty turns `ablate` into a sweep";
    "run.out" => out, "output directory";
}

impl ExperimentConfig {
    /// Applies one assignment. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let field = FIELDS
            .iter()
            .find(|f| f.key == key)
            .ok_or_else(|| CliError::UnknownKey(key.to_string()))?;
        (field.set)(self, value.trim()).map_err(|message| CliError::Config {
            key: key.to_string(),
            message,
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        FIELDS.iter().find(|f| f.key == key).map(|f| (f.get)(self))
    }

    pub fn keys() -> impl Iterator<Item = (&'static str, &'static str)> {
        FIELDS.iter().map(|f| (f.key, f.doc))
    }

    /// Defaults overridden by the assignments in `text`. A bad line aborts
    /// the whole parse.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Cross-field checks that single assignments cannot make.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |key: &str, message: String| CliError::Config {
            key: key.into(),
            message,
        };
        if self.paths.embeddings.is_some() && (self.paths.seen_classes.is_empty() || self.paths.unseen_classes.is_empty()) {
            return Err(bad(
                "paths.seen_classes",
                "an embedding file needs both seen and unseen class lists".into(),
            ));
        }
        if self.paths.train_csv.is_some() != self.paths.test_csv.is_some() {
            return Err(bad("paths.train_csv", "give both feature files or neither".into()));
        }
        if self.paths.train_csv.is_some() && self.paths.embeddings.is_none() {
            return Err(bad("paths.train_csv", "feature files need an embedding file".into()));
        }
        if self.seeds.is_empty() {
            return Err(bad("run.seeds", "at least one seed is required".into()));
        }
        if self.rows.is_empty() {
            return Err(bad("run.rows", "at least one row is required".into()));
        }
        if self.sweep_primitives.contains(&0) {
            return Err(bad("run.sweep_primitives", "primitive counts must be positive".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Every key with its resolved value, one per line, in a form `parse`
    /// reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in FIELDS {
            let _ = writeln!(out, "{} = {}", f.key, (f.get)(self));
        }
        out
    }

    /// Documented key listing with defaults.
    pub fn reference() -> String {
        let defaults = Self::default();
        let mut out = String::new();
        for f in FIELDS {
            let _ = writeln!(out, "# {}\n{} = {}", f.doc, f.key, (f.get)(&defaults));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("lambda", "0.125").unwrap();
        cfg.set("mmd.bandwidths", "1.5, 3").unwrap();
        cfg.set("disentangle.hidden", "24").unwrap();
        cfg.set("run.rows", "gmmn,full").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::parse(&ExperimentConfig::reference()).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("# nothing\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::parse("lambda = 0.1\nlamda = 0.2\n").unwrap_err();
        assert!(matches!(err, CliError::UnknownKey(k) if k == "lamda"));
    }

    #[test]
    fn bad_values_and_lines() {
        assert!(matches!(ExperimentConfig::parse("seed = x"), Err(CliError::Config { .. })));
        assert!(matches!(ExperimentConfig::parse("seed 3"), Err(CliError::Syntax { line: 1, .. })));
        assert!(ExperimentConfig::parse("lambda = -1").is_err());
        assert!(ExperimentConfig::parse("paths.embeddings = e.txt").is_err());
    }

    #[test]
    fn optional_values_take_auto() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("disentangle.unrelated_dim", "7").unwrap();
        assert_eq!(cfg.train.unrelated_dim, Some(7));
        cfg.set("disentangle.unrelated_dim", "auto").unwrap();
        assert_eq!(cfg.train.unrelated_dim, None);
        assert_eq!(cfg.get("disentangle.unrelated_dim").unwrap(), "auto");
    }

    #[test]
    fn every_key_is_documented_and_unique() {
        let keys: Vec<_> = ExperimentConfig::keys().collect();
        for (i, (k, doc)) in keys.iter().enumerate() {
            assert!(!doc.is_empty());
            assert!(keys[i + 1..].iter().all(|(other, _)| other != k), "{k}");
        }
    }
}
