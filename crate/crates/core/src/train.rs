//! Fitting model parameters to the squared-error objective, evaluation, and
//! the residual comparison between two predictors.

use std::cmp::Ordering;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CascadeRecord;
use crate::error::{Error, Result};
use crate::graph::{CascadeGraph, GlobalGraph};
use crate::model::{loss_and_grad, predict, sample_for_variant, ModelConfig, ModelParams};
use crate::seed::{derive_seed, derived_rng};
use crate::walk::{PathSet, WalkConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub l2_coeff: f64,
    pub batch_cascades: usize,
    pub optimizer: Optimizer,
    /// Draw fresh paths every epoch instead of reusing the first sample.
    pub resample_paths: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs_max: 40,
            patience: 10,
            grad_clip_norm: 5.0,
            l2_coeff: 0.0,
            batch_cascades: 16,
            optimizer: Optimizer::Adam,
            resample_paths: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.patience == 0 || self.batch_cascades == 0 || self.epochs_max == 0 {
            return Err(Error::config("patience, batch_cascades and epochs_max must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(Error::config("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.grad_clip_norm > 0.0) || self.l2_coeff < 0.0 {
            return Err(Error::config("grad_clip_norm must be positive and l2_coeff non-negative"));
        }
        Ok(())
    }
}

/// A cascade ready for the model: its graph, sampled paths and label.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub cascade: CascadeGraph,
    pub paths: PathSet,
    pub label: f64,
}

/// Builds examples in input order, sampling paths with cascade-derived seeds.
pub fn prepare(
    records: &[CascadeRecord],
    g: &GlobalGraph,
    model: &ModelConfig,
    walk: &WalkConfig,
    horizon: u32,
) -> Result<Vec<Example>> {
    records
        .par_iter()
        .map(|r| {
            let cascade = r.graph(g)?;
            let paths = sample_for_variant(&r.id, &cascade, g, model, walk)?;
            Ok(Example { id: r.id.clone(), cascade, paths, label: r.label(horizon)? })
        })
        .collect()
}

pub fn mse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::domain(format!(
            "mse needs equal non-zero lengths, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    Ok(exact_sum(preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y))) / preds.len() as f64)
}

/// Correctly rounded sum of finite values (Shewchuk's partials), independent
/// of summation order.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // round half to even across the remaining partials
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: String,
    pub prediction: f64,
    pub label: f64,
}

impl Residual {
    pub fn error(&self) -> f64 {
        self.prediction - self.label
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    pub residuals: Vec<Residual>,
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty dataset"));
    }
    let preds: Vec<f64> = examples
        .par_iter()
        .map(|e| predict(&e.paths, &e.cascade, params, cfg))
        .collect::<Result<_>>()?;
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let residuals = examples
        .iter()
        .zip(&preds)
        .map(|(e, &p)| Residual { id: e.id.clone(), prediction: p, label: e.label })
        .collect();
    Ok(Evaluation { mse: mse(&preds, &labels)?, residuals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// MSE of the initial parameters.
    pub initial_train_mse: f64,
    pub initial_val_mse: f64,
    pub initial_test_mse: Option<f64>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// MSE of the restored parameters.
    pub final_train_mse: f64,
    pub test_mse: Option<f64>,
    pub steps: usize,
    pub wall_clock_seconds: f64,
    pub seed: u64,
}

/// Inputs to [`train`]. Validation falls back to the training set when empty.
pub struct TrainData<'a> {
    pub graph: &'a GlobalGraph,
    pub walk: &'a WalkConfig,
    pub train: &'a [Example],
    pub val: &'a [Example],
    pub test: &'a [Example],
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, theta: &mut [f64], g: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Mean gradient of one batch (plus the L2 term), clipped to the global norm.
///
/// Per-cascade gradients run in parallel and are summed in batch order.
pub fn batch_gradient(
    params: &ModelParams,
    flat: &[f64],
    cfg: &ModelConfig,
    batch: &[&Example],
    tc: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|e| {
            loss_and_grad(&e.paths, &e.cascade, e.label, params, cfg)
                .map(|ev| (ev.loss, ev.grad))
                .map_err(|err| match err {
                    Error::Numerical(msg) => Error::Numerical(format!("cascade {}: {msg}", e.id)),
                    other => other,
                })
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; flat.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss *= inv;
    grad.iter_mut().for_each(|a| *a *= inv);
    if tc.l2_coeff > 0.0 {
        loss += tc.l2_coeff * flat.iter().map(|v| v * v).sum::<f64>();
        for (a, v) in grad.iter_mut().zip(flat) {
            *a += 2.0 * tc.l2_coeff * v;
        }
    }
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite gradient norm".into()));
    }
    if norm > tc.grad_clip_norm {
        let s = tc.grad_clip_norm / norm;
        grad.iter_mut().for_each(|a| *a *= s);
    }
    Ok((loss, grad))
}

fn resampled(data: &TrainData, cfg: &ModelConfig, epoch: usize) -> Result<Vec<Example>> {
    let walk = WalkConfig { seed: derive_seed(data.walk.seed, "epoch", &epoch.to_string()), ..data.walk.clone() };
    data.train
        .par_iter()
        .map(|e| {
            let paths = sample_for_variant(&e.id, &e.cascade, data.graph, cfg, &walk)?;
            Ok(Example { paths, ..e.clone() })
        })
        .collect()
}

/// Trains from `init` and returns the parameters with the best validation MSE.
pub fn train(
    cfg: &ModelConfig,
    init: ModelParams,
    data: &TrainData,
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    tc.validate()?;
    cfg.validate()?;
    init.validate_shapes(cfg)?;
    if data.train.is_empty() {
        return Err(Error::domain("training split is empty"));
    }
    let start = Instant::now();
    let val = if data.val.is_empty() { data.train } else { data.val };

    let mut params = init;
    let mut flat = params.flatten();
    let initial_train_mse = evaluate(&params, cfg, data.train)?.mse;
    let initial_val_mse = evaluate(&params, cfg, val)?.mse;
    let initial_test_mse = if data.test.is_empty() { None } else { Some(evaluate(&params, cfg, data.test)?.mse) };

    let mut owned: Vec<Example>;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    order.sort_by(|&a, &b| data.train[a].id.cmp(&data.train[b].id));
    let by_id = order.clone();

    let mut adam = Adam { m: vec![0.0; flat.len()], v: vec![0.0; flat.len()], t: 0 };
    let mut history = Vec::new();
    let mut best = (0usize, f64::INFINITY, params.clone());
    let mut stall = 0;
    let mut steps = 0;
    for epoch in 1..=tc.epochs_max {
        let train_set: &[Example] = if tc.resample_paths && epoch > 1 {
            owned = resampled(data, cfg, epoch)?;
            &owned
        } else {
            data.train
        };
        order.clone_from(&by_id);
        order.shuffle(&mut derived_rng(tc.seed, "shuffle", &epoch.to_string()));
        for chunk in order.chunks(tc.batch_cascades) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (_, grad) = batch_gradient(&params, &flat, cfg, &batch, tc)?;
            match tc.optimizer {
                Optimizer::Adam => adam.step(&mut flat, &grad, tc),
                Optimizer::Sgd => flat.iter_mut().zip(&grad).for_each(|(p, g)| *p -= tc.learning_rate * g),
            }
            params.assign_flat(&flat)?;
            steps += 1;
        }
        let train_mse = evaluate(&params, cfg, train_set)?.mse;
        let val_mse = evaluate(&params, cfg, val)?.mse;
        history.push(EpochStats { epoch, train_mse, val_mse });
        if val_mse < best.1 {
            best = (epoch, val_mse, params.clone());
            stall = 0;
        } else {
            stall += 1;
            if stall >= tc.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_mse, params) = best;
    let final_train_mse = evaluate(&params, cfg, data.train)?.mse;
    let test_mse = if data.test.is_empty() { None } else { Some(evaluate(&params, cfg, data.test)?.mse) };
    let report = TrainReport {
        initial_train_mse,
        initial_val_mse,
        initial_test_mse,
        history,
        best_epoch,
        best_val_mse,
        final_train_mse,
        test_mse,
        steps,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        seed: tc.seed,
    };
    Ok((params, report))
}

/// Size and density of one cascade graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeStats {
    pub id: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub mean_out_degree: f64,
    pub edge_density: f64,
}

impl CascadeStats {
    pub fn of(id: &str, c: &CascadeGraph) -> Self {
        let n = c.n_nodes();
        let e = c.n_edges();
        CascadeStats {
            id: id.to_string(),
            n_nodes: n,
            n_edges: e,
            mean_out_degree: e as f64 / n as f64,
            edge_density: if n >= 2 { e as f64 / (n * (n - 1)) as f64 } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<String>,
    pub mean_n_nodes: Option<f64>,
    pub mean_n_edges: Option<f64>,
    pub mean_out_degree: Option<f64>,
    pub mean_edge_density: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    /// Cascades where the first predictor has the smaller squared error.
    pub a_better: Selection,
    pub b_better: Selection,
}

fn select(cands: Vec<(f64, usize)>, stats: &[CascadeStats], top_n: usize) -> Selection {
    let mut cands = cands;
    cands.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| stats[x.1].id.cmp(&stats[y.1].id))
    });
    cands.truncate(top_n);
    let picked: Vec<&CascadeStats> = cands.iter().map(|&(_, i)| &stats[i]).collect();
    let avg = |f: &dyn Fn(&CascadeStats) -> f64| {
        (!picked.is_empty()).then(|| picked.iter().map(|s| f(s)).sum::<f64>() / picked.len() as f64)
    };
    Selection {
        ids: picked.iter().map(|s| s.id.clone()).collect(),
        mean_n_nodes: avg(&|s| s.n_nodes as f64),
        mean_n_edges: avg(&|s| s.n_edges as f64),
        mean_out_degree: avg(&|s| s.mean_out_degree),
        mean_edge_density: avg(&|s| s.edge_density),
    }
}

/// Top `top_n` cascades by squared-error difference in each direction.
pub fn error_analysis(a: &[Residual], b: &[Residual], stats: &[CascadeStats], top_n: usize) -> Result<ErrorAnalysis> {
    if a.len() != b.len() || a.len() != stats.len() {
        return Err(Error::domain("residual lists and statistics differ in length"));
    }
    let mut a_wins = Vec::new();
    let mut b_wins = Vec::new();
    for (i, ((ra, rb), s)) in a.iter().zip(b).zip(stats).enumerate() {
        if ra.id != rb.id || ra.id != s.id {
            return Err(Error::domain(format!("misaligned cascades at position {i}: {} / {} / {}", ra.id, rb.id, s.id)));
        }
        let (ea, eb) = (ra.error().powi(2), rb.error().powi(2));
        match ea.partial_cmp(&eb) {
            Some(Ordering::Less) => a_wins.push((eb - ea, i)),
            Some(Ordering::Greater) => b_wins.push((ea - eb, i)),
            _ => {}
        }
    }
    Ok(ErrorAnalysis { a_better: select(a_wins, stats, top_n), b_better: select(b_wins, stats, top_n) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_global, make_dataset, SyntheticConfig};
    use crate::graph::{induce_cascade, NodeId};
    use crate::model::Variant;

    fn small_setup(n_cascades: usize) -> (GlobalGraph, Vec<CascadeRecord>) {
        let sc = SyntheticConfig { n_nodes: 300, n_cascades, seed: 5, ..SyntheticConfig::default() };
        let g = generate_global(&sc).unwrap();
        let recs = make_dataset(&g, &sc).unwrap();
        (g, recs)
    }

    fn small_model(n_nodes: usize) -> ModelConfig {
        ModelConfig { hidden: 6, k: 10, t: 4, batch: 5, n_nodes, seed: 2, ..ModelConfig::default() }
    }

    fn data<'a>(g: &'a GlobalGraph, walk: &'a WalkConfig, train: &'a [Example], val: &'a [Example]) -> TrainData<'a> {
        TrainData { graph: g, walk, train, val, test: &[] }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 2.5);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_sum_is_order_free() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
        let v: Vec<f64> = (1..200).map(|i| 1.0 / i as f64).collect();
        let mut r = v.clone();
        r.reverse();
        assert_eq!(exact_sum(v.iter().copied()), exact_sum(r));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (g, recs) = small_setup(12);
        let cfg = small_model(g.n_nodes());
        let walk = WalkConfig::default();
        let ex = prepare(&recs, &g, &cfg, &walk, 2).unwrap();
        let init = ModelParams::init(&cfg).unwrap();
        let tc = TrainConfig { learning_rate: 0.0, epochs_max: 3, batch_cascades: 4, ..TrainConfig::default() };
        let (p, report) = train(&cfg, init.clone(), &data(&g, &walk, &ex, &ex), &tc).unwrap();
        assert_eq!(p.flatten(), init.flatten());
        assert_eq!(report.steps, 9);
        assert!(report.history.len() <= 3);
    }

    #[test]
    fn first_adam_step_is_bounded_by_lr() {
        let (g, recs) = small_setup(8);
        let cfg = small_model(g.n_nodes());
        let walk = WalkConfig::default();
        let ex = prepare(&recs, &g, &cfg, &walk, 2).unwrap();
        let init = ModelParams::init(&cfg).unwrap();
        let tc = TrainConfig { learning_rate: 0.05, epochs_max: 1, batch_cascades: 8, ..TrainConfig::default() };
        let (p, report) = train(&cfg, init.clone(), &data(&g, &walk, &ex, &ex), &tc).unwrap();
        assert_eq!(report.steps, 1);
        let moved = p.flatten().iter().zip(init.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved > 0.0 && moved <= 0.05 * 1.0000001, "{moved}");
    }

    #[test]
    fn single_cascade_is_memorized() {
        let (g, recs) = small_setup(4);
        let cfg = small_model(g.n_nodes());
        let walk = WalkConfig::default();
        let ex = prepare(&recs[..1], &g, &cfg, &walk, 2).unwrap();
        let init = ModelParams::init(&cfg).unwrap();
        let tc = TrainConfig { epochs_max: 200, patience: 200, ..TrainConfig::default() };
        let (p, report) = train(&cfg, init, &data(&g, &walk, &ex, &ex), &tc).unwrap();
        assert!(report.final_train_mse < 1e-3, "{}", report.final_train_mse);
        let again = evaluate(&p, &cfg, &ex).unwrap().mse;
        assert!((again - report.final_train_mse).abs() < 1e-12);
        assert!(report.history.iter().all(|h| report.best_val_mse <= h.val_mse));
    }

    #[test]
    fn training_reduces_error_and_is_order_invariant() {
        let (g, recs) = small_setup(48);
        let cfg = small_model(g.n_nodes());
        let walk = WalkConfig::default();
        let ex = prepare(&recs, &g, &cfg, &walk, 2).unwrap();
        let init = ModelParams::init(&cfg).unwrap();
        let tc = TrainConfig { epochs_max: 15, batch_cascades: 8, ..TrainConfig::default() };
        let (p, report) = train(&cfg, init.clone(), &data(&g, &walk, &ex, &ex), &tc).unwrap();
        assert!(report.final_train_mse <= 0.5 * report.initial_train_mse);

        let mut rev = ex.clone();
        rev.reverse();
        let (q, _) = train(&cfg, init, &data(&g, &walk, &rev, &rev), &tc).unwrap();
        assert_eq!(p.flatten(), q.flatten());
    }

    #[test]
    fn evaluation_of_duplicated_data() {
        let (g, recs) = small_setup(10);
        let cfg = small_model(g.n_nodes());
        let ex = prepare(&recs, &g, &cfg, &WalkConfig::default(), 2).unwrap();
        let p = ModelParams::init(&cfg).unwrap();
        let one = evaluate(&p, &cfg, &ex).unwrap();
        let twice: Vec<Example> = ex.iter().chain(ex.iter()).cloned().collect();
        assert_eq!(evaluate(&p, &cfg, &twice).unwrap().mse, one.mse);
        assert_eq!(one.residuals.len(), ex.len());
        assert!(evaluate(&p, &cfg, &[]).is_err());
    }

    #[test]
    fn variants_train() {
        let (g, recs) = small_setup(8);
        let walk = WalkConfig::default();
        for v in [Variant::Bag, Variant::RootStart, Variant::Fixed { k: 10, t: 4 }] {
            let cfg = ModelConfig { variant: v, ..small_model(g.n_nodes()) };
            let ex = prepare(&recs, &g, &cfg, &walk, 2).unwrap();
            let tc = TrainConfig { epochs_max: 2, resample_paths: true, ..TrainConfig::default() };
            let (_, r) = train(&cfg, ModelParams::init(&cfg).unwrap(), &data(&g, &walk, &ex, &[]), &tc).unwrap();
            assert!(r.best_val_mse.is_finite());
        }
    }

    fn res(id: &str, prediction: f64, label: f64) -> Residual {
        Residual { id: id.into(), prediction, label }
    }

    fn fixture_stats() -> Vec<CascadeStats> {
        let g = GlobalGraph::from_edges(
            6,
            [(0, 1), (1, 2), (2, 0), (3, 4), (0, 5)].iter().map(|&(s, d)| (NodeId(s), NodeId(d), 1.0)),
        )
        .unwrap();
        let sets: [&[u32]; 5] = [&[0, 1], &[0, 1, 2], &[3, 4], &[0, 1, 2, 5], &[5]];
        sets.iter()
            .enumerate()
            .map(|(i, s)| {
                let a: Vec<NodeId> = s.iter().map(|&v| NodeId(v)).collect();
                CascadeStats::of(&format!("c{i}"), &induce_cascade(&g, &a, &a[..1]).unwrap())
            })
            .collect()
    }

    #[test]
    fn error_analysis_fixture() {
        let stats = fixture_stats();
        assert_eq!((stats[1].n_nodes, stats[1].n_edges), (3, 3));
        assert_eq!(stats[1].edge_density, 0.5);
        // squared errors a: 0,1,4,0,9 ; b: 1,0,9,4,9
        let a = vec![res("c0", 0.0, 0.0), res("c1", 1.0, 0.0), res("c2", 2.0, 0.0), res("c3", 1.0, 1.0), res("c4", 3.0, 0.0)];
        let b = vec![res("c0", 1.0, 0.0), res("c1", 0.0, 0.0), res("c2", 3.0, 0.0), res("c3", 3.0, 1.0), res("c4", -3.0, 0.0)];
        let out = error_analysis(&a, &b, &stats, 2).unwrap();
        // a wins: c0 (1), c2 (5), c3 (4) -> top 2 = c2, c3
        assert_eq!(out.a_better.ids, vec!["c2", "c3"]);
        assert_eq!(out.a_better.mean_n_nodes, Some(3.0));
        assert_eq!(out.a_better.mean_n_edges, Some(2.5));
        assert_eq!(out.a_better.mean_out_degree, Some(0.75));
        assert_eq!(out.b_better.ids, vec!["c1"]);
        assert_eq!(out.b_better.mean_edge_density, Some(0.5));

        let all = error_analysis(&a, &b, &stats, 100).unwrap();
        assert_eq!(all.a_better.ids.len(), 3);

        let same = error_analysis(&a, &a, &stats, 100).unwrap();
        assert!(same.a_better.ids.is_empty() && same.b_better.ids.is_empty());
        assert_eq!(same.a_better.mean_n_nodes, None);

        let mut shifted = b.clone();
        shifted.swap(0, 1);
        assert!(error_analysis(&a, &shifted, &stats, 5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_cascades: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
