// SPDX-License-Identifier: MIT OR Apache-2.0

//! `logitflow` command-line driver.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use logitflow::data::ExampleKind;
use logitflow::experiments::{Scale, CLAIM_IDS};
use logitflow::model::BackAttentionConfig;

use crate::commands::{Analysis, AnalyzeArgs};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LOGITFLOW_OUT";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or inputs; exit code 1.
    Validation(String),
    /// Failure while running; exit code 2.
    Runtime(String),
    /// A reproduced claim did not meet its acceptance check; exit code 3.
    Acceptance(String),
}

impl From<logitflow::Error> for CliError {
    fn from(e: logitflow::Error) -> Self {
        use logitflow::Error as E;
        match e {
            E::Config(_)
            | E::Vocab(_)
            | E::Contract(_)
            | E::Span(_)
            | E::Index { .. }
            | E::Dimension { .. }
            | E::Absent(_)
            | E::Format { .. }
            | E::Patch(_)
            | E::Json(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
            Self::Acceptance(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "validation error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
            Self::Acceptance(m) => write!(f, "acceptance check failed: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "logitflow", version, about = "Train small transformers with back attention and trace their logit flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in starting point (see `presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Override any config key, e.g. `--set train.epochs=10`. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory (default: `$LOGITFLOW_OUT/<command>` or `runs/<command>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<config::ExperimentConfig, CliError> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(e) = self.epochs {
            sets.push(format!("train.epochs={e}"));
        }
        if let Some(lr) = self.lr {
            sets.push(format!("train.optimizer.lr={lr:e}"));
        }
        if let Some(o) = &self.out {
            sets.push(format!("out_dir={:?}", o.display().to_string()));
        }
        config::resolve(self.config.as_deref(), self.preset.as_deref(), &sets)
    }
}

fn out_dir(cfg: &config::ExperimentConfig, command: &str) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    })
}

#[derive(Args)]
struct AnalyzeOpts {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file with the prompts to analyse.
    #[arg(long)]
    queries: PathBuf,
    /// Keep only examples of this kind (e.g. first_hop, two_hop, double_sum).
    #[arg(long)]
    kind: Option<String>,
    /// Keep only examples the model answers correctly.
    #[arg(long)]
    correct_only: bool,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Layer-by-span neuron importance and attribution maps.
    LogitFlow(AnalyzeOpts),
    /// Activation patching against subject-corrupted prompts.
    Patch(AnalyzeOpts),
    /// Logit-lens difference between answer and conflict per span.
    LogitDiff(AnalyzeOpts),
    /// Back-attention scores of the last position.
    BaScores(AnalyzeOpts),
    /// Correct versus bridge-error two-hop comparison.
    Compare(AnalyzeOpts),
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset files for the configured task.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes a checkpoint, report and accuracy table.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory from `gen-data`; generated in place when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Per-kind exact-match accuracy of a checkpoint on a dataset file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Add back attention to a trained checkpoint and train only it.
    FinetuneBa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to the config's `back_attention.source_layer`, else 0.
        #[arg(long)]
        source_layer: Option<usize>,
        /// Defaults to the config's `back_attention.back_dim`, else half the model width.
        #[arg(long)]
        back_dim: Option<usize>,
    },
    /// Interpretability analyses on a checkpoint.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run one claim end to end and check it.
    Repro {
        #[arg(value_parser = PossibleValuesParser::new(CLAIM_IDS))]
        id: String,
        #[arg(long, default_value = "ci")]
        scale: Scale,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in presets.
    Presets,
}

fn parse_kind(s: &str) -> Result<ExampleKind, CliError> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| CliError::Validation(format!("unknown example kind {s:?}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = common.resolve()?;
            commands::gen_data(&cfg, out_dir(&cfg, "gen-data"))
        }
        Command::Train { common, data } => {
            let cfg = common.resolve()?;
            commands::train_cmd(&cfg, data.as_deref(), out_dir(&cfg, "train"))
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let cfg = common.resolve()?;
            commands::eval_cmd(&cfg, &checkpoint, &data, out_dir(&cfg, "eval"))
        }
        Command::FinetuneBa {
            common,
            checkpoint,
            data,
            source_layer,
            back_dim,
        } => {
            let cfg = common.resolve()?;
            let base = cfg.back_attention.clone();
            let ba = BackAttentionConfig::finetune(
                back_dim.or(base.as_ref().map(|b| b.back_dim)).unwrap_or(cfg.model.model_dim / 2),
                source_layer.or(base.as_ref().map(|b| b.source_layer)).unwrap_or(0),
            );
            commands::finetune_cmd(&cfg, &checkpoint, data.as_deref(), ba, out_dir(&cfg, "finetune-ba"))
        }
        Command::Analyze(sub) => {
            let (which, o) = match sub {
                AnalyzeCommand::LogitFlow(o) => (Analysis::LogitFlow, o),
                AnalyzeCommand::Patch(o) => (Analysis::Patch, o),
                AnalyzeCommand::LogitDiff(o) => (Analysis::LogitDiff, o),
                AnalyzeCommand::BaScores(o) => (Analysis::BaScores, o),
                AnalyzeCommand::Compare(o) => (Analysis::Compare, o),
            };
            let cfg = o.common.resolve()?;
            let kind = o.kind.as_deref().map(parse_kind).transpose()?;
            let args = AnalyzeArgs {
                checkpoint: &o.checkpoint,
                queries: &o.queries,
                kind,
                correct_only: o.correct_only,
            };
            commands::analyze(&cfg, which, &args, out_dir(&cfg, "analyze"))
        }
        Command::Repro { id, scale, out } => {
            let out = out.unwrap_or_else(|| {
                let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                root.join("repro").join(&id)
            });
            commands::repro(&id, scale, out)
        }
        Command::Presets => {
            for p in config::PRESETS {
                println!("{p}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
