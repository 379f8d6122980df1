//! Synthetic networks and cascades.
//!
//! The global network is a directed preferential-attachment graph and cascades
//! are independent-cascade (IC) processes on it: every new adopter gets one
//! chance to activate each out-neighbor `u` with probability
//! `min(1, activation_base * weight(v, u))`.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CascadeRecord;
use crate::error::{Error, Result};
use crate::graph::{GlobalGraph, NodeId};
use crate::seed::{derived_rng, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub attachment_degree: usize,
    pub activation_base: f64,
    /// Simulation rounds observed before prediction (earliness).
    pub t_steps: u32,
    /// Further rounds at which growth is measured.
    pub horizon_steps: Vec<u32>,
    pub n_cascades: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_nodes: 2000,
            attachment_degree: 3,
            activation_base: 0.15,
            t_steps: 2,
            horizon_steps: vec![2],
            n_cascades: 500,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attachment_degree == 0 {
            return Err(Error::domain("attachment_degree must be at least 1"));
        }
        if self.n_nodes < self.attachment_degree + 1 {
            return Err(Error::domain(format!(
                "n_nodes ({}) must exceed attachment_degree ({})",
                self.n_nodes, self.attachment_degree
            )));
        }
        if !(self.activation_base > 0.0 && self.activation_base < 1.0) {
            return Err(Error::domain(format!(
                "activation_base must lie in (0, 1), got {}",
                self.activation_base
            )));
        }
        if self.t_steps < 1 {
            return Err(Error::domain("t_steps must be at least 1"));
        }
        if self.horizon_steps.is_empty() || self.horizon_steps.iter().any(|&h| h < 1) {
            return Err(Error::domain("horizon_steps must be a non-empty list of values >= 1"));
        }
        Ok(())
    }

    /// The horizon used for zero-growth filtering.
    pub fn primary_horizon(&self) -> u32 {
        self.horizon_steps[0]
    }
}

/// Directed preferential attachment: node `v >= d` draws `d` distinct
/// out-edges to earlier nodes with probability proportional to
/// `in_degree + 1`; weights are uniform on `{1, ..., 5}`.
pub fn generate_global(cfg: &SyntheticConfig) -> Result<GlobalGraph> {
    cfg.validate()?;
    let d = cfg.attachment_degree;
    let mut rng = derived_rng(cfg.seed, "global", "");
    // each node appears once for the +1 and once more per in-edge
    let mut urn: Vec<u32> = (0..d as u32).collect();
    let mut edges = Vec::with_capacity((cfg.n_nodes - d) * d);
    let mut targets: Vec<u32> = Vec::with_capacity(d);
    for v in d..cfg.n_nodes {
        targets.clear();
        while targets.len() < d {
            let t = urn[rng.gen_range(0..urn.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            let w = rng.gen_range(1..=5u32) as f64;
            edges.push((NodeId(v as u32), NodeId(t), w));
            urn.push(t);
        }
        urn.push(v as u32);
    }
    GlobalGraph::from_edges(cfg.n_nodes, edges)
}

/// A running IC process that can be advanced round by round.
pub struct IcProcess<'g> {
    g: &'g GlobalGraph,
    activation_base: f64,
    adopted: Vec<bool>,
    order: Vec<NodeId>,
    fresh: Vec<NodeId>,
    rng: ChaCha8Rng,
}

impl<'g> IcProcess<'g> {
    pub fn new(g: &'g GlobalGraph, roots: &[NodeId], activation_base: f64, rng: ChaCha8Rng) -> Result<Self> {
        if roots.is_empty() {
            return Err(Error::domain("independent cascade needs at least one root"));
        }
        if !(activation_base >= 0.0) {
            return Err(Error::domain("activation_base must be non-negative"));
        }
        let mut adopted = vec![false; g.n_nodes()];
        let mut order = Vec::with_capacity(roots.len());
        for &r in roots {
            if !g.contains(r) {
                return Err(Error::domain(format!("root {r} out of range")));
            }
            if !adopted[r.index()] {
                adopted[r.index()] = true;
                order.push(r);
            }
        }
        let fresh = order.clone();
        Ok(IcProcess { g, activation_base, adopted, order, fresh, rng })
    }

    /// Runs one synchronous round; returns the number of new adopters.
    pub fn step(&mut self) -> usize {
        let mut next = Vec::new();
        for &v in &self.fresh {
            for &(u, w) in self.g.out_edges(v) {
                if self.adopted[u.index()] {
                    continue;
                }
                let p = (self.activation_base * w).min(1.0);
                if self.rng.gen::<f64>() < p {
                    self.adopted[u.index()] = true;
                    next.push(u);
                }
            }
        }
        self.order.extend_from_slice(&next);
        let n = next.len();
        self.fresh = next;
        n
    }

    pub fn halted(&self) -> bool {
        self.fresh.is_empty()
    }

    pub fn adopters(&self) -> &[NodeId] {
        &self.order
    }

    pub fn into_adopters(self) -> Vec<NodeId> {
        self.order
    }
}

/// Runs `steps` IC rounds and returns the roots followed by every adopter in
/// adoption order.
pub fn simulate_ic(
    g: &GlobalGraph,
    roots: &[NodeId],
    steps: u32,
    activation_base: f64,
    rng_seed: u64,
) -> Result<Vec<NodeId>> {
    let mut p = IcProcess::new(g, roots, activation_base, rng_from_seed(rng_seed))?;
    for _ in 0..steps {
        if p.halted() {
            break;
        }
        p.step();
    }
    Ok(p.into_adopters())
}

fn cascade_id(attempt: usize) -> String {
    format!("c{attempt:06}")
}

fn simulate_record(g: &GlobalGraph, cfg: &SyntheticConfig, attempt: usize) -> Result<Option<CascadeRecord>> {
    let id = cascade_id(attempt);
    let mut rng = derived_rng(cfg.seed, "cascade", &id);
    let n_roots = rng.gen_range(1..=2usize).min(g.n_nodes());
    let roots: Vec<NodeId> = sample(&mut rng, g.n_nodes(), n_roots)
        .into_iter()
        .map(|i| NodeId(i as u32))
        .collect();
    let mut process = IcProcess::new(g, &roots, cfg.activation_base, rng)?;
    for _ in 0..cfg.t_steps {
        process.step();
    }
    let adopters = process.adopters().to_vec();
    if adopters.len() < 2 {
        return Ok(None);
    }
    let max_h = cfg.horizon_steps.iter().copied().max().unwrap_or(0);
    let mut sizes = Vec::with_capacity(max_h as usize + 1);
    sizes.push(adopters.len());
    for _ in 0..max_h {
        process.step();
        sizes.push(process.adopters().len());
    }
    let growth: BTreeMap<u32, u64> = cfg
        .horizon_steps
        .iter()
        .map(|&h| (h, (sizes[h as usize] - adopters.len()) as u64))
        .collect();
    Ok(Some(CascadeRecord::new(id, roots, adopters, growth)))
}

/// Simulates cascades until `cfg.n_cascades` records with at least two
/// adopters at time `t` exist (or the attempt budget runs out). Each attempt
/// has its own derived seed and results are kept in attempt order, so the
/// output does not depend on the thread count.
pub fn make_dataset(g: &GlobalGraph, cfg: &SyntheticConfig) -> Result<Vec<CascadeRecord>> {
    cfg.validate()?;
    if g.n_nodes() == 0 {
        return Err(Error::Generation("global graph has no nodes".into()));
    }
    let max_attempts = cfg.n_cascades.saturating_mul(20) + 100;
    let mut records = Vec::with_capacity(cfg.n_cascades);
    let mut next = 0;
    while records.len() < cfg.n_cascades && next < max_attempts {
        let chunk = (cfg.n_cascades - records.len()).max(64).min(max_attempts - next);
        let batch: Vec<Option<CascadeRecord>> = (next..next + chunk)
            .into_par_iter()
            .map(|a| simulate_record(g, cfg, a))
            .collect::<Result<_>>()?;
        next += chunk;
        for r in batch.into_iter().flatten() {
            if records.len() < cfg.n_cascades {
                records.push(r);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Generation("zero usable cascades after filtering".into()));
    }
    Ok(records)
}

/// Keeps `ceil((1 - fraction) * Z)` of the `Z` records with zero growth at
/// `horizon`; every other record is kept. Input order is preserved.
pub fn downsample_zero_growth(
    records: Vec<CascadeRecord>,
    horizon: u32,
    fraction: f64,
    rng_seed: u64,
) -> Result<Vec<CascadeRecord>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::domain(format!("downsampling fraction {fraction} outside [0, 1]")));
    }
    let mut zero = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.growth_at(horizon)? == 0 {
            zero.push(i);
        }
    }
    let keep_n = (((1.0 - fraction) * zero.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = rng_from_seed(rng_seed);
    let mut keep = vec![true; records.len()];
    for &i in &zero {
        keep[i] = false;
    }
    for j in sample(&mut rng, zero.len(), keep_n.min(zero.len())) {
        keep[zero[j]] = true;
    }
    Ok(records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect())
}

pub type Split = (Vec<CascadeRecord>, Vec<CascadeRecord>, Vec<CascadeRecord>);

/// Shuffled train/val/test assignment; each split keeps input order.
pub fn split_dataset(records: Vec<CascadeRecord>, ratios: (f64, f64, f64), rng_seed: u64) -> Result<Split> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = records.len();
    let n_train = ((a * n as f64) + 0.5).floor() as usize;
    let n_train = n_train.min(n);
    let n_val = (((b * n as f64) + 0.5).floor() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng_from_seed(rng_seed));
    // 0 = train, 1 = val, 2 = test
    let mut bucket = vec![2u8; n];
    for &i in &order[..n_train] {
        bucket[i] = 0;
    }
    for &i in &order[n_train..n_train + n_val] {
        bucket[i] = 1;
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (r, k) in records.into_iter().zip(bucket) {
        match k {
            0 => train.push(r),
            1 => val.push(r),
            _ => test.push(r),
        }
    }
    Ok((train, val, test))
}
