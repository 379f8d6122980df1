//! `cascade`: generate synthetic cascades, train and evaluate the path model,
//! fit the feature baseline and run variant ablations.
//!
//! Results go to stdout as JSON; progress goes to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::{parse_value, RunConfig};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascade growth prediction experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON file of dotted keys, or a previous run's meta.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one dotted key, e.g. `--set walk.K=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "H")]
    h: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long = "batch-cascades")]
    batch_cascades: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long = "normalize-attention")]
    normalize_attention: bool,
    #[arg(long = "mlp-hidden")]
    mlp_hidden: Option<usize>,
    #[arg(long = "gru-update")]
    gru_update: Option<String>,
    #[arg(long = "embedding-init")]
    embedding_init: Option<PathBuf>,
    #[arg(long = "resample-paths")]
    resample_paths: bool,
}

impl ModelFlags {
    fn overrides(&self) -> Vec<(&'static str, Value)> {
        let mut o = Vec::new();
        let mut put = |k: &'static str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k, v));
            }
        };
        put("model.variant", self.variant.clone().map(Value::from));
        put("walk.scorer", self.scorer.clone().map(Value::from));
        put("walk.K", self.k.map(Value::from));
        put("walk.T", self.t.map(Value::from));
        put("model.B", self.b.map(Value::from));
        put("walk.alpha", self.alpha.map(Value::from));
        put("model.H", self.h.map(Value::from));
        put("train.epochs_max", self.epochs.map(Value::from));
        put("train.learning_rate", self.lr.map(Value::from));
        put("train.patience", self.patience.map(Value::from));
        put("train.l2_coeff", self.l2.map(Value::from));
        put("train.batch_cascades", self.batch_cascades.map(Value::from));
        put("train.optimizer", self.optimizer.clone().map(Value::from));
        put("model.normalize_attention", self.normalize_attention.then_some(Value::Bool(true)));
        put("model.mlp_hidden", self.mlp_hidden.map(Value::from));
        put("model.gru_update", self.gru_update.clone().map(Value::from));
        put("model.embedding_init", self.embedding_init.as_ref().map(|p| Value::from(p.display().to_string())));
        put("train.resample_paths", self.resample_paths.then_some(Value::Bool(true)));
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a global graph and labeled train/val/test splits.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write per-cascade predictions as JSON Lines.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Fit the ridge baseline on structural features.
    FeaturesBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated L2 coefficients.
        #[arg(long = "l2-grid")]
        l2_grid: Option<String>,
        /// none, hashed or exact node-identity indicators.
        #[arg(long)]
        identity: Option<String>,
        /// Directory for feature CSVs and the fitted model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every configured variant and tabulate test MSE.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of full,bag,fixed,root.
        #[arg(long)]
        variants: Option<String>,
        /// Comma-separated scorers for the full variant.
        #[arg(long)]
        scorers: Option<String>,
    },
    /// Dump sampled paths as JSON Lines.
    SampleWalks {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common, extra: Vec<(&'static str, Value)>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env()?;
    for (k, v) in extra {
        cfg.set(k, &v)?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), &parse_value(v.trim()))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::GenData { common, out } => commands::gen_data(&resolve(&common, vec![])?, &out),
        Command::Train { common, model, data, out } => {
            commands::train(&resolve(&common, model.overrides())?, &data, &out)
        }
        Command::Eval { ckpt, data, split, residuals } => commands::eval(&ckpt, &data, &split, residuals.as_deref()),
        Command::FeaturesBaseline { common, data, l2_grid, identity, out } => {
            let mut extra = Vec::new();
            if let Some(g) = l2_grid {
                extra.push(("baseline.l2_grid", Value::from(g)));
            }
            if let Some(i) = identity {
                extra.push(("baseline.identity", Value::from(i)));
            }
            commands::features_baseline(&resolve(&common, extra)?, &data, out.as_deref())
        }
        Command::Ablate { common, model, data, out, variants, scorers } => {
            let mut extra = model.overrides();
            if let Some(v) = variants {
                extra.push(("ablate.variants", Value::from(v)));
            }
            if let Some(s) = scorers {
                extra.push(("ablate.scorers", Value::from(s)));
            }
            commands::ablate(&resolve(&common, extra)?, &data, &out)
        }
        Command::SampleWalks { common, model, data, split, out } => {
            commands::sample_walks(&resolve(&common, model.overrides())?, &data, &split, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
