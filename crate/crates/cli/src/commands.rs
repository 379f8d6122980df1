use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use cascade_core::dataset::{load_jsonl, save_jsonl, CascadeRecord};
use cascade_core::features::{extract_all, fit_ridge, predict_ridge, write_features_csv, FeatureVector, RidgeModel};
use cascade_core::generate::{downsample_zero_growth, generate_global, make_dataset, split_dataset};
use cascade_core::graph::{load_global_graph, GlobalGraph};
use cascade_core::model::{sample_for_variant, Checkpoint, CheckpointConfig, ModelConfig, ModelParams, CHECKPOINT_FORMAT_VERSION};
use cascade_core::seed::derive_seed;
use cascade_core::train::{self as trainer, mse, prepare, Evaluation, TrainData, TrainReport};
use cascade_core::walk::{ScorerKind, WalkConfig};
use cascade_core::Error as CoreError;

use crate::config::RunConfig;

pub const OUTPUT_FORMAT_VERSION: u32 = 1;
const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Some ablation rows failed; the table was still written.
#[derive(Debug)]
pub struct PartialAblation {
    pub failed: usize,
    pub total: usize,
}

impl fmt::Display for PartialAblation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} ablation runs failed", self.failed, self.total)
    }
}

impl std::error::Error for PartialAblation {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<PartialAblation>().is_some() {
        return 4;
    }
    let numerical = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Numerical(_))));
    if numerical {
        3
    } else {
        2
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, v)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn meta(command: &str, cfg: &RunConfig) -> Value {
    json!({ "format_version": OUTPUT_FORMAT_VERSION, "command": command, "config": cfg.to_json() })
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = cfg.synthetic();
    sc.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let g = generate_global(&sc)?;
    let records = make_dataset(&g, &sc)?;
    let generated = records.len();
    let horizon = sc.primary_horizon();
    let (ratio_train, ratio_val, ratio_test) = (cfg.split[0], cfg.split[1], cfg.split[2]);
    let (train, val, test) =
        split_dataset(records, (ratio_train, ratio_val, ratio_test), derive_seed(cfg.seed, "split", ""))?;
    let mut counts = serde_json::Map::new();
    for (name, recs) in SPLITS.iter().zip([train, val, test]) {
        let kept = downsample_zero_growth(recs, horizon, cfg.zero_growth_fraction, derive_seed(cfg.seed, "downsample", name))?;
        save_jsonl(&kept, out.join(format!("{name}.jsonl")))?;
        counts.insert(name.to_string(), json!(kept.len()));
    }
    g.write_tsv(BufWriter::new(File::create(out.join("global.tsv"))?))?;
    let mut m = meta("gen-data", cfg);
    m["seed"] = json!(cfg.seed);
    m["horizon"] = json!(horizon);
    m["generated"] = json!(generated);
    m["counts"] = Value::Object(counts.clone());
    m["graph"] = json!({ "n_nodes": g.n_nodes(), "n_edges": g.n_edges() });
    write_json(&out.join("meta.json"), &m)?;
    eprintln!("wrote {} cascades to {}", generated, out.display());
    print_json(&json!({ "out": out.display().to_string(), "seed": cfg.seed, "counts": counts }))
}

pub struct Data {
    pub graph: GlobalGraph,
    pub splits: [Vec<CascadeRecord>; 3],
    pub horizon: u32,
}

impl Data {
    pub fn split(&self, name: &str) -> Result<&[CascadeRecord]> {
        match SPLITS.iter().position(|s| *s == name) {
            Some(i) => Ok(&self.splits[i]),
            None => bail!("unknown split {name:?} (expected train, val or test)"),
        }
    }
}

pub fn load_data(dir: &Path) -> Result<Data> {
    let graph = load_global_graph(dir.join("global.tsv")).with_context(|| format!("loading {}/global.tsv", dir.display()))?;
    let load = |name: &str| {
        let p = dir.join(format!("{name}.jsonl"));
        load_jsonl(&p).with_context(|| format!("loading {}", p.display()))
    };
    let splits = [load("train")?, load("val")?, load("test")?];
    if splits[0].is_empty() {
        bail!("{}: training split is empty", dir.display());
    }
    let meta_horizon = fs::read_to_string(dir.join("meta.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<Value>(&s).ok())
        .and_then(|m| m.get("horizon").and_then(Value::as_u64));
    let horizon = match meta_horizon {
        Some(h) => h as u32,
        None => *splits[0][0].y.keys().next().context("records carry no labels")?,
    };
    Ok(Data { graph, splits, horizon })
}

pub struct Trained {
    pub model: ModelConfig,
    pub walk: WalkConfig,
    pub params: ModelParams,
    pub report: TrainReport,
}

pub fn run_training(cfg: &RunConfig, data: &Data) -> Result<Trained> {
    let model = cfg.model(data.graph.n_nodes())?;
    let walk = cfg.walk();
    walk.validate()?;
    let tc = cfg.train_config();
    let mut init = ModelParams::init(&model)?;
    if !cfg.embedding_init.is_empty() {
        let n = init.load_embedding_init(&cfg.embedding_init)?;
        eprintln!("imported {n} embedding columns from {}", cfg.embedding_init);
    }
    let ex: Vec<_> = data
        .splits
        .iter()
        .map(|s| prepare(s, &data.graph, &model, &walk, data.horizon))
        .collect::<std::result::Result<_, _>>()?;
    eprintln!(
        "training {} ({} scorer) on {}/{}/{} cascades",
        model.variant.name(),
        walk.scorer.short_name(),
        ex[0].len(),
        ex[1].len(),
        ex[2].len()
    );
    let td = TrainData { graph: &data.graph, walk: &walk, train: &ex[0], val: &ex[1], test: &ex[2] };
    let (params, report) = trainer::train(&model, init, &td, &tc)?;
    eprintln!(
        "best epoch {} val {:.4} test {:?} ({:.1}s)",
        report.best_epoch, report.best_val_mse, report.test_mse, report.wall_clock_seconds
    );
    Ok(Trained { model, walk, params, report })
}

pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_data(data_dir)?;
    let t = run_training(cfg, &data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ck = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: CheckpointConfig { model: t.model.clone(), walk: t.walk.clone(), horizon: data.horizon },
        params: t.params,
    };
    ck.save(out.join("ckpt_best.json"))?;
    let mut m = meta("train", cfg);
    m["variant"] = json!(t.model.variant.name());
    m["scorer"] = json!(t.walk.scorer.short_name());
    m["horizon"] = json!(data.horizon);
    m["report"] = serde_json::to_value(&t.report)?;
    write_json(&out.join("report.json"), &m)?;
    print_json(&json!({
        "variant": t.model.variant.name(),
        "scorer": t.walk.scorer.short_name(),
        "best_epoch": t.report.best_epoch,
        "best_val_mse": t.report.best_val_mse,
        "test_mse": t.report.test_mse,
        "initial_test_mse": t.report.initial_test_mse,
    }))
}

pub fn eval(ckpt: &Path, data_dir: &Path, split: &str, residuals: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let data = load_data(data_dir)?;
    let model = &ck.config.model;
    if model.n_nodes != data.graph.n_nodes() {
        bail!(
            "checkpoint expects a {}-node graph, {} has {}",
            model.n_nodes,
            data_dir.display(),
            data.graph.n_nodes()
        );
    }
    let records = data.split(split)?;
    let ex = prepare(records, &data.graph, model, &ck.config.walk, ck.config.horizon)?;
    let Evaluation { mse, residuals: res } = trainer::evaluate(&ck.params, model, &ex)?;
    if let Some(path) = residuals {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &res {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    print_json(&json!({ "split": split, "n": res.len(), "mse": mse }))
}

#[derive(Serialize)]
pub struct GridPoint {
    pub l2: f64,
    pub val_mse: Option<f64>,
    pub error: Option<String>,
}

pub struct Baseline {
    pub model: RidgeModel,
    pub val_mse: f64,
    pub test_mse: Option<f64>,
    pub grid: Vec<GridPoint>,
    pub features: [Vec<FeatureVector>; 3],
}

fn ridge_mse(m: &RidgeModel, x: &[FeatureVector], y: &[f64]) -> Result<f64> {
    let p: Vec<f64> = x.iter().map(|f| predict_ridge(m, f)).collect::<std::result::Result<_, _>>()?;
    Ok(mse(&p, y)?)
}

pub fn run_baseline(cfg: &RunConfig, data: &Data) -> Result<Baseline> {
    if cfg.l2_grid.is_empty() {
        bail!("baseline.l2_grid is empty");
    }
    let identity = cfg.identity_block(data.graph.n_nodes());
    let features: Vec<Vec<FeatureVector>> = data
        .splits
        .iter()
        .map(|s| extract_all(s, &data.graph, identity))
        .collect::<std::result::Result<_, _>>()?;
    let labels: Vec<Vec<f64>> = data
        .splits
        .iter()
        .map(|s| s.iter().map(|r| r.label(data.horizon)).collect::<std::result::Result<_, _>>())
        .collect::<std::result::Result<_, _>>()?;
    let val_idx = if data.splits[1].is_empty() { 0 } else { 1 };
    let mut grid = Vec::new();
    let mut best: Option<(RidgeModel, f64)> = None;
    for &l2 in &cfg.l2_grid {
        match fit_ridge(&features[0], &labels[0], l2) {
            Ok(m) => {
                let v = ridge_mse(&m, &features[val_idx], &labels[val_idx])?;
                grid.push(GridPoint { l2, val_mse: Some(v), error: None });
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    best = Some((m, v));
                }
            }
            Err(e @ CoreError::Numerical(_)) => grid.push(GridPoint { l2, val_mse: None, error: Some(e.to_string()) }),
            Err(e) => return Err(e.into()),
        }
    }
    let (model, val_mse) = best.context("every L2 value in the grid gave a singular system")?;
    let test_mse = if data.splits[2].is_empty() { None } else { Some(ridge_mse(&model, &features[2], &labels[2])?) };
    let mut it = features.into_iter();
    let features = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    Ok(Baseline { model, val_mse, test_mse, grid, features })
}

pub fn features_baseline(cfg: &RunConfig, data_dir: &Path, out: Option<&Path>) -> Result<()> {
    let data = load_data(data_dir)?;
    let b = run_baseline(cfg, &data)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for (i, name) in SPLITS.iter().enumerate() {
            let ids: Vec<String> = data.splits[i].iter().map(|r| r.id.clone()).collect();
            let f = File::create(dir.join(format!("features_{name}.csv")))?;
            write_features_csv(&ids, &b.features[i], BufWriter::new(f))?;
        }
        let mut m = meta("features-baseline", cfg);
        m["model"] = serde_json::to_value(&b.model)?;
        m["grid"] = serde_json::to_value(&b.grid)?;
        m["val_mse"] = json!(b.val_mse);
        m["test_mse"] = json!(b.test_mse);
        write_json(&dir.join("baseline.json"), &m)?;
    }
    print_json(&json!({ "l2": b.model.l2, "val_mse": b.val_mse, "test_mse": b.test_mse, "grid": b.grid }))
}

#[derive(Serialize)]
pub struct AblationRow {
    pub name: String,
    pub variant: String,
    pub scorer: Option<String>,
    pub status: String,
    pub test_mse: Option<f64>,
    pub val_mse: Option<f64>,
    pub initial_test_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

fn planned_rows(cfg: &RunConfig) -> Result<Vec<(String, String, Option<ScorerKind>)>> {
    let mut rows = Vec::new();
    let vs = cfg.ablate_variant_scorer;
    for v in &cfg.ablate_variants {
        match v.as_str() {
            "full" => {
                for s in &cfg.ablate_scorers {
                    let k = ScorerKind::from_short_name(s)?;
                    rows.push((format!("DeepCas-{s}"), "full".to_string(), Some(k)));
                }
            }
            "bag" => rows.push(("GRU-bag".into(), "bag".into(), None)),
            "fixed" => rows.push(("GRU-fixed".into(), "fixed".into(), Some(vs))),
            "root" => rows.push(("GRU-root".into(), "root".into(), Some(vs))),
            "features" => rows.push(("Features-linear".into(), "features".into(), None)),
            other => bail!("unknown ablation variant {other:?}"),
        }
    }
    Ok(rows)
}

fn markdown_table(rows: &[AblationRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from("| Method | Variant | Scorer | Test MSE | Val MSE | Status |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.name,
            r.variant,
            r.scorer.as_deref().unwrap_or("-"),
            fmt(r.test_mse),
            fmt(r.val_mse),
            r.status
        ));
    }
    s
}

pub fn ablate(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_data(data_dir)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let plan = planned_rows(cfg)?;
    let mut rows = Vec::new();
    for (name, variant, scorer) in plan {
        eprintln!("ablation row {name}");
        let outcome = if variant == "features" {
            run_baseline(cfg, &data).map(|b| (b.test_mse, Some(b.val_mse), None, None))
        } else {
            let mut c = cfg.clone();
            c.variant = variant.clone();
            if let Some(s) = scorer {
                c.scorer = s;
            }
            run_training(&c, &data)
                .map(|t| (t.report.test_mse, Some(t.report.best_val_mse), t.report.initial_test_mse, Some(t.report.best_epoch)))
        };
        let scorer = scorer.map(|s| s.short_name().to_string());
        rows.push(match outcome {
            Ok((test_mse, val_mse, initial_test_mse, best_epoch)) => AblationRow {
                name,
                variant,
                scorer,
                status: "ok".into(),
                test_mse,
                val_mse,
                initial_test_mse,
                best_epoch,
                error: None,
            },
            Err(e) => {
                eprintln!("  failed: {e:#}");
                AblationRow {
                    name,
                    variant,
                    scorer,
                    status: "failed".into(),
                    test_mse: None,
                    val_mse: None,
                    initial_test_mse: None,
                    best_epoch: None,
                    error: Some(format!("{e:#}")),
                }
            }
        });
    }
    let mut m = meta("ablate", cfg);
    m["rows"] = serde_json::to_value(&rows)?;
    write_json(&out.join("ablation.json"), &m)?;
    fs::write(out.join("ablation.md"), markdown_table(&rows))?;
    print_json(&json!({ "rows": rows }))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        return Err(PartialAblation { failed, total: rows.len() }.into());
    }
    Ok(())
}

pub fn sample_walks(cfg: &RunConfig, data_dir: &Path, split: &str, out: Option<&Path>) -> Result<()> {
    let data = load_data(data_dir)?;
    let model = cfg.model(data.graph.n_nodes())?;
    let walk = cfg.walk();
    walk.validate()?;
    let records = data.split(split)?;
    let lines: Vec<String> = records
        .iter()
        .map(|r| {
            let c = r.graph(&data.graph)?;
            Ok(sample_for_variant(&r.id, &c, &data.graph, &model, &walk)?.to_json_line())
        })
        .collect::<Result<_>>()?;
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            for l in &lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
            print_json(&json!({ "split": split, "cascades": lines.len(), "out": path.display().to_string() }))
        }
        None => {
            let mut o = io::stdout().lock();
            for l in &lines {
                writeln!(o, "{l}")?;
            }
            Ok(())
        }
    }
}
