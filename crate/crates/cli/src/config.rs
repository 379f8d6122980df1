//! Run configuration: defaults, a flat dotted-key JSON file, the
//! `CASCADE_SEED` variable and command-line overrides, in that order.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Map, Value};

use cascade_core::features::{IdentityBlock, DEFAULT_HASH_DIM};
use cascade_core::generate::SyntheticConfig;
use cascade_core::model::{GruUpdate, ModelConfig, Variant};
use cascade_core::seed::derive_seed;
use cascade_core::train::{Optimizer, TrainConfig};
use cascade_core::walk::{ScorerKind, StartMode, WalkConfig};

/// Default L2 grid for the feature baseline.
pub const L2_GRID: [f64; 17] = [
    1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6, 5e-7, 1e-7, 5e-8, 1e-8,
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub split: [f64; 3],
    pub zero_growth_fraction: f64,
    pub walk_k: usize,
    pub walk_t: usize,
    pub alpha: f64,
    pub scorer: ScorerKind,
    pub hidden: usize,
    pub batch: usize,
    pub n_buckets: usize,
    pub variant: String,
    /// 0 means "same as walk.K" / "same as walk.T".
    pub fixed_k: usize,
    pub fixed_t: usize,
    pub normalize_attention: bool,
    pub mlp_hidden: usize,
    pub gru_update: GruUpdate,
    pub embedding_init: String,
    pub train: TrainConfig,
    pub l2_grid: Vec<f64>,
    pub identity: String,
    pub hash_dim: usize,
    pub ablate_variants: Vec<String>,
    pub ablate_scorers: Vec<String>,
    pub ablate_variant_scorer: ScorerKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let w = WalkConfig::default();
        RunConfig {
            seed: 42,
            data: SyntheticConfig::default(),
            split: [0.7, 0.15, 0.15],
            zero_growth_fraction: 0.5,
            walk_k: w.k,
            walk_t: w.t,
            alpha: w.alpha,
            scorer: w.scorer,
            hidden: m.hidden,
            batch: m.batch,
            n_buckets: m.n_buckets,
            variant: "full".into(),
            fixed_k: 0,
            fixed_t: 0,
            normalize_attention: false,
            mlp_hidden: 0,
            gru_update: GruUpdate::Standard,
            embedding_init: String::new(),
            train: TrainConfig::default(),
            l2_grid: L2_GRID.to_vec(),
            identity: "none".into(),
            hash_dim: DEFAULT_HASH_DIM,
            ablate_variants: ["full", "bag", "fixed", "root"].map(String::from).to_vec(),
            ablate_scorers: ["edge", "deg", "DEG"].map(String::from).to_vec(),
            ablate_variant_scorer: ScorerKind::LocalDegree,
        }
    }
}

fn as_u64(v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| anyhow!("expected a non-negative integer, got {v}"))
}

fn as_usize(v: &Value) -> Result<usize> {
    Ok(as_u64(v)? as usize)
}

fn as_f64(v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| anyhow!("expected a number, got {v}"))
}

fn as_bool(v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| anyhow!("expected true or false, got {v}"))
}

fn as_str(v: &Value) -> Result<String> {
    v.as_str().map(str::to_string).ok_or_else(|| anyhow!("expected a string, got {v}"))
}

fn as_list<T>(v: &Value, f: impl Fn(&Value) -> Result<T>) -> Result<Vec<T>> {
    match v {
        Value::Array(a) => a.iter().map(f).collect(),
        Value::String(s) => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| f(&parse_value(p.trim())))
            .collect(),
        other => bail!("expected a list, got {other}"),
    }
}

/// JSON when it parses, otherwise the raw text as a string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn gru_name(g: GruUpdate) -> &'static str {
    match g {
        GruUpdate::Standard => "standard",
        GruUpdate::PreviousCandidate => "previous_candidate",
    }
}

fn optimizer_name(o: Optimizer) -> &'static str {
    match o {
        Optimizer::Adam => "adam",
        Optimizer::Sgd => "sgd",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let ctx = || format!("config key {key}");
        (|| -> Result<()> {
            match key {
                "seed" => self.seed = as_u64(v)?,
                "data.n_nodes" => self.data.n_nodes = as_usize(v)?,
                "data.attachment_degree" => self.data.attachment_degree = as_usize(v)?,
                "data.activation_base" => self.data.activation_base = as_f64(v)?,
                "data.t_steps" => self.data.t_steps = as_u64(v)? as u32,
                "data.horizon_steps" => self.data.horizon_steps = as_list(v, |x| Ok(as_u64(x)? as u32))?,
                "data.n_cascades" => self.data.n_cascades = as_usize(v)?,
                "data.split" => {
                    let s = as_list(v, as_f64)?;
                    if s.len() != 3 {
                        bail!("expected three ratios");
                    }
                    self.split = [s[0], s[1], s[2]];
                }
                "data.zero_growth_fraction" => self.zero_growth_fraction = as_f64(v)?,
                "walk.K" => self.walk_k = as_usize(v)?,
                "walk.T" => self.walk_t = as_usize(v)?,
                "walk.alpha" => self.alpha = as_f64(v)?,
                "walk.scorer" => self.scorer = ScorerKind::from_short_name(&as_str(v)?)?,
                "model.H" => self.hidden = as_usize(v)?,
                "model.B" => self.batch = as_usize(v)?,
                "model.n_buckets" => self.n_buckets = as_usize(v)?,
                "model.variant" => {
                    let s = as_str(v)?;
                    variant_from_name(&s, 1, 1)?;
                    self.variant = s;
                }
                "model.fixed_k" => self.fixed_k = as_usize(v)?,
                "model.fixed_t" => self.fixed_t = as_usize(v)?,
                "model.normalize_attention" => self.normalize_attention = as_bool(v)?,
                "model.mlp_hidden" => self.mlp_hidden = as_usize(v)?,
                "model.gru_update" => {
                    self.gru_update = match as_str(v)?.as_str() {
                        "standard" => GruUpdate::Standard,
                        "previous_candidate" => GruUpdate::PreviousCandidate,
                        other => bail!("unknown GRU update {other:?}"),
                    }
                }
                "model.embedding_init" => self.embedding_init = as_str(v)?,
                "train.learning_rate" => self.train.learning_rate = as_f64(v)?,
                "train.adam_beta1" => self.train.adam_beta1 = as_f64(v)?,
                "train.adam_beta2" => self.train.adam_beta2 = as_f64(v)?,
                "train.adam_eps" => self.train.adam_eps = as_f64(v)?,
                "train.epochs_max" => self.train.epochs_max = as_usize(v)?,
                "train.patience" => self.train.patience = as_usize(v)?,
                "train.grad_clip_norm" => self.train.grad_clip_norm = as_f64(v)?,
                "train.l2_coeff" => self.train.l2_coeff = as_f64(v)?,
                "train.batch_cascades" => self.train.batch_cascades = as_usize(v)?,
                "train.optimizer" => {
                    self.train.optimizer = match as_str(v)?.as_str() {
                        "adam" => Optimizer::Adam,
                        "sgd" => Optimizer::Sgd,
                        other => bail!("unknown optimizer {other:?}"),
                    }
                }
                "train.resample_paths" => self.train.resample_paths = as_bool(v)?,
                "baseline.l2_grid" => self.l2_grid = as_list(v, as_f64)?,
                "baseline.identity" => {
                    let s = as_str(v)?;
                    if !["none", "hashed", "exact"].contains(&s.as_str()) {
                        bail!("expected none, hashed or exact");
                    }
                    self.identity = s;
                }
                "baseline.hash_dim" => self.hash_dim = as_usize(v)?,
                "ablate.variants" => self.ablate_variants = as_list(v, as_str)?,
                "ablate.scorers" => self.ablate_scorers = as_list(v, as_str)?,
                "ablate.variant_scorer" => self.ablate_variant_scorer = ScorerKind::from_short_name(&as_str(v)?)?,
                _ => bail!("unknown key"),
            }
            Ok(())
        })()
        .with_context(ctx)
    }

    /// Every setting under its dotted key.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let t = &self.train;
        let pairs = [
            ("seed", json!(self.seed)),
            ("data.n_nodes", json!(self.data.n_nodes)),
            ("data.attachment_degree", json!(self.data.attachment_degree)),
            ("data.activation_base", json!(self.data.activation_base)),
            ("data.t_steps", json!(self.data.t_steps)),
            ("data.horizon_steps", json!(self.data.horizon_steps)),
            ("data.n_cascades", json!(self.data.n_cascades)),
            ("data.split", json!(self.split)),
            ("data.zero_growth_fraction", json!(self.zero_growth_fraction)),
            ("walk.K", json!(self.walk_k)),
            ("walk.T", json!(self.walk_t)),
            ("walk.alpha", json!(self.alpha)),
            ("walk.scorer", json!(self.scorer.short_name())),
            ("model.H", json!(self.hidden)),
            ("model.B", json!(self.batch)),
            ("model.n_buckets", json!(self.n_buckets)),
            ("model.variant", json!(self.variant)),
            ("model.fixed_k", json!(self.fixed_k)),
            ("model.fixed_t", json!(self.fixed_t)),
            ("model.normalize_attention", json!(self.normalize_attention)),
            ("model.mlp_hidden", json!(self.mlp_hidden)),
            ("model.gru_update", json!(gru_name(self.gru_update))),
            ("model.embedding_init", json!(self.embedding_init)),
            ("train.learning_rate", json!(t.learning_rate)),
            ("train.adam_beta1", json!(t.adam_beta1)),
            ("train.adam_beta2", json!(t.adam_beta2)),
            ("train.adam_eps", json!(t.adam_eps)),
            ("train.epochs_max", json!(t.epochs_max)),
            ("train.patience", json!(t.patience)),
            ("train.grad_clip_norm", json!(t.grad_clip_norm)),
            ("train.l2_coeff", json!(t.l2_coeff)),
            ("train.batch_cascades", json!(t.batch_cascades)),
            ("train.optimizer", json!(optimizer_name(t.optimizer))),
            ("train.resample_paths", json!(t.resample_paths)),
            ("baseline.l2_grid", json!(self.l2_grid)),
            ("baseline.identity", json!(self.identity)),
            ("baseline.hash_dim", json!(self.hash_dim)),
            ("ablate.variants", json!(self.ablate_variants)),
            ("ablate.scorers", json!(self.ablate_scorers)),
            ("ablate.variant_scorer", json!(self.ablate_variant_scorer.short_name())),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.to_flat().into_iter().collect::<Map<_, _>>())
    }

    /// Reads a flat config object, or an output's `meta.json` carrying one
    /// under `"config"`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let obj = match v.get("config") {
            Some(Value::Object(o)) => o.clone(),
            _ => v.as_object().cloned().ok_or_else(|| anyhow!("config file must hold a JSON object"))?,
        };
        for (k, val) in &obj {
            self.set(k, val)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var("CASCADE_SEED") {
            self.seed = s.trim().parse().with_context(|| format!("CASCADE_SEED={s:?} is not an integer"))?;
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig { seed: self.seed, ..self.data.clone() }
    }

    pub fn walk(&self) -> WalkConfig {
        WalkConfig {
            k: self.walk_k,
            t: self.walk_t,
            alpha: self.alpha,
            scorer: self.scorer,
            start_mode: StartMode::Jump,
            seed: derive_seed(self.seed, "walk", ""),
        }
    }

    pub fn model(&self, n_nodes: usize) -> Result<ModelConfig> {
        let fk = if self.fixed_k == 0 { self.walk_k } else { self.fixed_k };
        let ft = if self.fixed_t == 0 { self.walk_t } else { self.fixed_t };
        let cfg = ModelConfig {
            hidden: self.hidden,
            k: self.walk_k,
            t: self.walk_t,
            batch: self.batch,
            n_buckets: self.n_buckets,
            n_nodes,
            variant: variant_from_name(&self.variant, fk, ft)?,
            normalize_attention: self.normalize_attention,
            mlp_hidden: (self.mlp_hidden > 0).then_some(self.mlp_hidden),
            gru_update: self.gru_update,
            seed: derive_seed(self.seed, "model", ""),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, "train", ""), ..self.train.clone() }
    }

    pub fn identity_block(&self, n_nodes: usize) -> IdentityBlock {
        match self.identity.as_str() {
            "hashed" => IdentityBlock::Hashed(self.hash_dim),
            "exact" => IdentityBlock::Exact(n_nodes),
            _ => IdentityBlock::None,
        }
    }
}

pub fn variant_from_name(name: &str, k: usize, t: usize) -> Result<Variant> {
    Ok(match name {
        "full" => Variant::Full,
        "bag" => Variant::Bag,
        "fixed" => Variant::Fixed { k, t },
        "root" => Variant::RootStart,
        other => bail!("unknown variant {other:?} (expected full, bag, fixed or root)"),
    })
}
