//! Command-line front end.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::TableStyle;
pub use config::{ConfigMap, ExperimentConfig, ENV_PREFIX, KEYS};

use crate::error::{Error, Result};
use crate::metrics::SpearmanMode;
use crate::model::ProbeTarget;

#[derive(Debug, Parser)]
#[command(name = "cxray", version, about = "Multi-label chest X-ray classification toolkit")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (`run.out` for split and train).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the file and environment.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (images/, Data_Entry.csv, boxes.csv).
    Synth,
    /// Label counts and patient statistics of `data.csv`.
    Stats,
    /// Patient-wise 70/10/20 re-samples, or the official split.
    Split {
        /// Train+val and test image lists, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 2, value_name = "TRAIN_VAL,TEST")]
        official_split_list: Option<Vec<PathBuf>>,
    },
    /// Train one re-sample and save checkpoint, history and test scores.
    Train {
        #[arg(long, default_value_t = 0)]
        resample: usize,
    },
    /// Per-label AUC report from checkpoints (fold = position) or score files.
    Eval {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        scores: Vec<PathBuf>,
        /// Fold of a single checkpoint.
        #[arg(long)]
        resample: Option<usize>,
    },
    /// Pairwise Spearman correlation between models' test scores.
    Compare {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        /// Average per-label coefficients instead of ranking all scores jointly.
        #[arg(long)]
        per_label: bool,
    },
    /// Predict age, gender or view position from frozen image features.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: ProbeTarget,
        #[arg(long, default_value_t = 0)]
        resample: usize,
    },
    /// Grad-CAM heatmaps (grid CSV, heatmap PNG, overlay PNG) per image.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// Label index or name.
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0)]
        resample: usize,
    },
    /// Combine report.json files into one AUC overview table.
    Table {
        #[arg(long, value_enum, default_value_t = TableStyle::CrossValidated)]
        style: TableStyle,
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
    },
    /// List configuration keys.
    Keys,
}

/// Configuration from file, `CXRAY_*` environment, `--set` and flags, in
/// increasing precedence.
pub fn experiment_config(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let mut map = match &cli.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    map.apply_env(env);
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        map.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        map.set("run.seed", seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        if matches!(cli.command, Command::Split { .. } | Command::Train { .. } | Command::Probe { .. }) {
            map.set("run.out", out.display().to_string())?;
        }
    }
    ExperimentConfig::new(map)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = experiment_config(cli, std::env::vars())?;
    let out_or = |default: PathBuf| cli.out.clone().unwrap_or(default);
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg, &out_or(PathBuf::from("synth"))),
        Command::Stats => commands::cmd_stats(&cfg, &out_or(cfg.out.join("stats"))),
        Command::Split { official_split_list } => {
            let official = official_split_list.as_ref().map(|v| (v[0].clone(), v[1].clone()));
            commands::cmd_split(&cfg, official)
        }
        Command::Train { resample } => commands::cmd_train(&cfg, *resample).map(|_| ()),
        Command::Eval {
            checkpoint,
            scores,
            resample,
        } => commands::cmd_eval(&cfg, checkpoint, scores, *resample, cli.out.as_deref()),
        Command::Compare { scores, per_label } => {
            let mode = if *per_label {
                SpearmanMode::PerLabel
            } else {
                SpearmanMode::Flattened
            };
            commands::cmd_compare(scores, mode, &out_or(cfg.out.join("compare")))
        }
        Command::Probe {
            checkpoint,
            target,
            resample,
        } => commands::cmd_probe(&cfg, checkpoint, *target, *resample).map(|_| ()),
        Command::Gradcam {
            checkpoint,
            images,
            label,
            resample,
        } => commands::cmd_gradcam(&cfg, checkpoint, images, label, *resample, &out_or(cfg.out.join("gradcam"))),
        Command::Table { style, reports } => commands::cmd_table(*style, reports, cli.out.as_deref()),
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<24} {doc}");
            }
            println!("environment overrides: {ENV_PREFIX}<KEY> with `.` as `_`, e.g. {ENV_PREFIX}TRAIN_LR");
            Ok(())
        }
    }
}
