use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pading_cli::commands::{cmd_ablate, cmd_export, cmd_run, cmd_synth_data};
use pading_cli::verify::battery;
use pading_cli::{CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pading", version, about = "Primitive-based feature synthesis for generalized zero-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test feature CSVs and the semantic space.
    SynthData(Common),
    /// Train and evaluate one strategy; writes a report and checkpoints.
    Run(Common),
    /// Compare strategies over several seeds, or sweep the primitive count.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated primitive counts, e.g. 100,200,400.
        #[arg(long, value_delimiter = ',')]
        sweep_primitives: Vec<usize>,
    },
    /// Run the gradient, MMD, alignment and harmonic-mean checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample unseen features from the generator saved by `run` in --out.
    Export(Common),
    /// Print every config key with its default.
    Keys,
}

#[derive(Args)]
struct Common {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra assignments, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Syntax {
                line: 0,
                text: s.clone(),
            })?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(a) = &self.ablation {
            cfg.train.ablation = a.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        log::info!("resolved config:\n{}", cfg.to_text());
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthData(c) => {
            let s = cmd_synth_data(&c.resolve()?)?;
            println!("train rows {}\ntest rows {}", s.train_rows, s.test_rows);
            for f in s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let r = cmd_run(&cfg)?;
            println!(
                "{}: seen {:.1}  unseen {:.1}  HM {:.1}  (report in {})",
                r.strategy,
                100.0 * r.report.seen_mean,
                100.0 * r.report.unseen_mean,
                100.0 * r.report.hm,
                cfg.out.join("report.json").display()
            );
        }
        Command::Ablate { common, sweep_primitives } => {
            let mut cfg = common.resolve()?;
            if !sweep_primitives.is_empty() {
                cfg.sweep_primitives = sweep_primitives;
                cfg.validate()?;
            }
            let r = cmd_ablate(&cfg)?;
            print!("{}", r.table.to_text());
            for w in &r.warnings {
                println!("warning: {w}");
            }
        }
        Command::Verify { seed } => {
            let checks = battery(seed);
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::VerificationFailed {
                    failed,
                    total: checks.len(),
                });
            }
            println!("all {} checks passed", checks.len());
        }
        Command::Export(c) => {
            let s = cmd_export(&c.resolve()?)?;
            println!("{} synthetic rows", s.rows);
            for f in s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Keys => print!("{}", ExperimentConfig::reference()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
