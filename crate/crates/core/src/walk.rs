//! Random-walk path sampling over cascade graphs.
//!
//! A path starts at a node drawn from the jump distribution (or from the
//! cascade roots), then repeatedly moves to an out-neighbor drawn from the
//! transition distribution. It stops after `T` nodes or at a node without
//! out-neighbors, and the remainder of the row is padding.
//!
//! Both distributions are `(score + alpha) / sum(score + alpha)` over the
//! candidate set. Transition scores are the candidate's out-degree in the
//! cascade, its out-degree in the global graph, or the weight of the edge
//! being traversed. Jump scores use the same degrees, with the edge-weight
//! scorer replaced by the candidate's total out-weight inside the cascade.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::{CascadeGraph, GlobalGraph, NodeId};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    EdgeWeight,
    LocalDegree,
    GlobalDegree,
}

impl ScorerKind {
    /// Short name used by the command line and result tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ScorerKind::EdgeWeight => "edge",
            ScorerKind::LocalDegree => "deg",
            ScorerKind::GlobalDegree => "DEG",
        }
    }

    pub fn from_short_name(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(ScorerKind::EdgeWeight),
            "deg" => Ok(ScorerKind::LocalDegree),
            "DEG" => Ok(ScorerKind::GlobalDegree),
            other => Err(Error::config(format!("unknown scorer {other:?} (expected edge, deg or DEG)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartMode {
    Jump,
    RootsOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub k: usize,
    pub t: usize,
    pub alpha: f64,
    pub scorer: ScorerKind,
    pub start_mode: StartMode,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            k: 200,
            t: 10,
            alpha: 0.01,
            scorer: ScorerKind::LocalDegree,
            start_mode: StartMode::Jump,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t == 0 {
            return Err(Error::config("walk K and T must both be at least 1"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("smoother alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// The same configuration reseeded for one cascade.
    pub fn for_cascade(&self, cascade_id: &str) -> WalkConfig {
        WalkConfig { seed: derive_seed(self.seed, "walk", cascade_id), ..self.clone() }
    }
}

/// `K` rows of `T` entries; `None` is padding and only ever forms a suffix.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub cascade_id: String,
    t: usize,
    cells: Vec<Option<NodeId>>,
}

impl PathSet {
    pub fn from_rows(cascade_id: impl Into<String>, rows: Vec<Vec<Option<NodeId>>>) -> Result<Self> {
        let t = rows.first().map(|r| r.len()).unwrap_or(0);
        if t == 0 {
            return Err(Error::domain("path set needs at least one non-empty row"));
        }
        let mut cells = Vec::with_capacity(rows.len() * t);
        for row in rows {
            if row.len() != t {
                return Err(Error::domain("path rows differ in length"));
            }
            if row.windows(2).any(|w| w[0].is_none() && w[1].is_some()) {
                return Err(Error::domain("padding must form a suffix of each row"));
            }
            cells.extend(row);
        }
        Ok(PathSet { cascade_id: cascade_id.into(), t, cells })
    }

    pub fn k(&self) -> usize {
        self.cells.len() / self.t
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn row(&self, k: usize) -> &[Option<NodeId>] {
        &self.cells[k * self.t..(k + 1) * self.t]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<NodeId>]> {
        self.cells.chunks(self.t)
    }

    /// Entry `i` of every row, i.e. one time step across all paths.
    pub fn column(&self, i: usize) -> impl Iterator<Item = Option<NodeId>> + '_ {
        self.rows().map(move |r| r[i])
    }

    /// JSON Lines debug record; padding is written as -1.
    pub fn to_json_line(&self) -> String {
        let paths: Vec<Vec<i64>> = self
            .rows()
            .map(|r| r.iter().map(|c| c.map_or(-1, |v| v.0 as i64)).collect())
            .collect();
        json!({ "cascade": self.cascade_id, "paths": paths }).to_string()
    }
}

fn node_score(c: &CascadeGraph, g: &GlobalGraph, scorer: ScorerKind, local: usize) -> f64 {
    match scorer {
        ScorerKind::LocalDegree => c.out_local(local).len() as f64,
        ScorerKind::GlobalDegree => g.out_edges(c.node_at(local)).len() as f64,
        ScorerKind::EdgeWeight => c.out_local(local).iter().map(|&(_, w)| w).sum(),
    }
}

fn normalize(scores: &mut [f64], alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) {
        return Err(Error::config(format!("smoother alpha must be >= 0, got {alpha}")));
    }
    let total: f64 = scores.iter().map(|s| s + alpha).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateDistribution(
            "every candidate scores 0 and alpha is 0".into(),
        ));
    }
    for s in scores.iter_mut() {
        *s = (*s + alpha) / total;
    }
    Ok(())
}

fn transition_local(
    c: &CascadeGraph,
    g: &GlobalGraph,
    local: usize,
    scorer: ScorerKind,
    alpha: f64,
) -> Result<Option<Vec<f64>>> {
    let nbrs = c.out_local(local);
    if nbrs.is_empty() {
        return Ok(None);
    }
    if nbrs.len() == 1 {
        return Ok(Some(vec![1.0]));
    }
    let mut p: Vec<f64> = nbrs
        .iter()
        .map(|&(u, w)| match scorer {
            ScorerKind::EdgeWeight => w,
            _ => node_score(c, g, scorer, u),
        })
        .collect();
    normalize(&mut p, alpha)?;
    Ok(Some(p))
}

/// Distribution over the out-neighbors of `v` inside the cascade, or `None`
/// when `v` is a dead end.
pub fn transition_probs(
    c: &CascadeGraph,
    g: &GlobalGraph,
    v: NodeId,
    scorer: ScorerKind,
    alpha: f64,
) -> Result<Option<Vec<(NodeId, f64)>>> {
    let local = c
        .local_index(v)
        .ok_or_else(|| Error::domain(format!("node {v} not in cascade")))?;
    Ok(transition_local(c, g, local, scorer, alpha)?.map(|p| {
        c.out_local(local)
            .iter()
            .zip(p)
            .map(|(&(u, _), p)| (c.node_at(u), p))
            .collect()
    }))
}

fn jump_local(c: &CascadeGraph, g: &GlobalGraph, scorer: ScorerKind, alpha: f64) -> Result<Vec<f64>> {
    let mut p: Vec<f64> = (0..c.n_nodes()).map(|i| node_score(c, g, scorer, i)).collect();
    normalize(&mut p, alpha)?;
    Ok(p)
}

/// Distribution over all cascade nodes used to pick a path's first node.
pub fn jump_probs(c: &CascadeGraph, g: &GlobalGraph, scorer: ScorerKind, alpha: f64) -> Result<Vec<(NodeId, f64)>> {
    let p = jump_local(c, g, scorer, alpha)?;
    Ok(c.nodes().iter().copied().zip(p).collect())
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cdf.last().expect("non-empty distribution");
    let x = rng.gen::<f64>() * total;
    cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
}

/// Precomputed cumulative distributions for one cascade.
struct Tables {
    jump: Vec<f64>,
    step: Vec<Option<Vec<f64>>>,
}

impl Tables {
    fn new(c: &CascadeGraph, g: &GlobalGraph, scorer: ScorerKind, alpha: f64, need_jump: bool) -> Result<Self> {
        let jump = if need_jump { cumulative(&jump_local(c, g, scorer, alpha)?) } else { Vec::new() };
        let step = (0..c.n_nodes())
            .map(|i| Ok(transition_local(c, g, i, scorer, alpha)?.map(|p| cumulative(&p))))
            .collect::<Result<_>>()?;
        Ok(Tables { jump, step })
    }
}

/// Samples `cfg.k` padded paths of length `cfg.t` using `cfg.seed`.
pub fn sample_paths(c: &CascadeGraph, g: &GlobalGraph, cfg: &WalkConfig) -> Result<PathSet> {
    cfg.validate()?;
    if cfg.start_mode == StartMode::RootsOnly && c.roots().is_empty() {
        return Err(Error::domain("root-only sampling on a cascade without roots"));
    }
    let tables = Tables::new(c, g, cfg.scorer, cfg.alpha, cfg.start_mode == StartMode::Jump)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut root_order: Vec<usize> = Vec::new();
    let mut cells = Vec::with_capacity(cfg.k * cfg.t);
    for k in 0..cfg.k {
        let start = match cfg.start_mode {
            StartMode::Jump => draw(&tables.jump, &mut rng),
            StartMode::RootsOnly => {
                let n = c.roots().len();
                if k % n == 0 {
                    root_order = c.roots().iter().map(|r| c.local_index(*r).expect("root in cascade")).collect();
                    root_order.shuffle(&mut rng);
                }
                root_order[k % n]
            }
        };
        let mut cur = start;
        cells.push(Some(c.node_at(cur)));
        let mut len = 1;
        while len < cfg.t {
            let Some(cdf) = &tables.step[cur] else { break };
            cur = c.out_local(cur)[draw(cdf, &mut rng)].0;
            cells.push(Some(c.node_at(cur)));
            len += 1;
        }
        cells.extend(std::iter::repeat(None).take(cfg.t - len));
    }
    Ok(PathSet { cascade_id: String::new(), t: cfg.t, cells })
}

/// Samples with the cascade-specific seed and tags the result with its id.
pub fn sample_for_cascade(cascade_id: &str, c: &CascadeGraph, g: &GlobalGraph, cfg: &WalkConfig) -> Result<PathSet> {
    let mut p = sample_paths(c, g, &cfg.for_cascade(cascade_id))?;
    p.cascade_id = cascade_id.to_string();
    Ok(p)
}

/// Length-1 paths listing the cascade's nodes: each pass over the nodes uses
/// a fresh random order, and passes repeat until `k` rows exist. With
/// `k == |V_c|` every node appears exactly once.
pub fn bag_of_nodes(c: &CascadeGraph, k: usize, seed: u64) -> Result<PathSet> {
    if k == 0 {
        return Err(Error::config("bag size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<NodeId> = Vec::new();
    let mut cells = Vec::with_capacity(k);
    for i in 0..k {
        let n = c.n_nodes();
        if i % n == 0 {
            order = c.nodes().to_vec();
            order.shuffle(&mut rng);
        }
        cells.push(Some(order[i % n]));
    }
    Ok(PathSet { cascade_id: String::new(), t: 1, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::induce_cascade;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn setup(n_nodes: usize, edges: &[(u32, u32, f64)], adopters: &[u32], roots: &[u32]) -> (GlobalGraph, CascadeGraph) {
        let g = GlobalGraph::from_edges(n_nodes, edges.iter().map(|&(s, d, w)| (n(s), n(d), w))).unwrap();
        let a: Vec<NodeId> = adopters.iter().map(|&i| n(i)).collect();
        let r: Vec<NodeId> = roots.iter().map(|&i| n(i)).collect();
        let c = induce_cascade(&g, &a, &r).unwrap();
        (g, c)
    }

    #[test]
    fn single_neighbor_is_forced() {
        let (g, c) = setup(3, &[(0, 1, 3.0)], &[0, 1], &[0]);
        for s in [ScorerKind::EdgeWeight, ScorerKind::LocalDegree, ScorerKind::GlobalDegree] {
            for alpha in [0.0, 0.01, 5.0] {
                let p = transition_probs(&c, &g, n(0), s, alpha).unwrap().unwrap();
                assert_eq!(p, vec![(n(1), 1.0)]);
            }
        }
    }

    #[test]
    fn local_degree_transition_example() {
        // 1 -> {2, 3}; 2 -> 3 gives deg_c(2) = 1, deg_c(3) = 0
        let (g, c) = setup(4, &[(1, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)], &[1, 2, 3], &[1]);
        let p = transition_probs(&c, &g, n(1), ScorerKind::LocalDegree, 0.01).unwrap().unwrap();
        assert_eq!(p[0].0, n(2));
        assert!((p[0].1 - 1.01 / 1.02).abs() < 1e-15);
        assert!((p[1].1 - 0.01 / 1.02).abs() < 1e-15);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let (g, c) = setup(3, &[(0, 1, 2.0), (0, 2, 2.0)], &[0, 1, 2], &[0]);
        let p = transition_probs(&c, &g, n(0), ScorerKind::EdgeWeight, 0.01).unwrap().unwrap();
        assert_eq!(p[0].1, 0.5);
        assert_eq!(p[1].1, 0.5);
    }

    #[test]
    fn dead_end_and_degenerate_cases() {
        let (g, c) = setup(3, &[(0, 1, 1.0), (0, 2, 1.0)], &[0, 1, 2], &[0]);
        assert!(transition_probs(&c, &g, n(1), ScorerKind::LocalDegree, 0.01).unwrap().is_none());
        assert!(matches!(
            transition_probs(&c, &g, n(0), ScorerKind::LocalDegree, 0.0),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(transition_probs(&c, &g, n(9), ScorerKind::LocalDegree, 0.01).is_err());
    }

    #[test]
    fn jump_examples() {
        let (g, c) = setup(2, &[(0, 1, 1.0), (1, 0, 1.0)], &[0, 1], &[0]);
        let p = jump_probs(&c, &g, ScorerKind::LocalDegree, 0.01).unwrap();
        assert_eq!(p, vec![(n(0), 0.5), (n(1), 0.5)]);

        // V_c = {a, b}: a has degree 2, b degree 0. Inside a two-node cascade
        // a local degree of 2 is impossible, so the global degree supplies it.
        let (g, c) = setup(4, &[(0, 1, 1.0), (0, 3, 1.0)], &[0, 2], &[0]);
        let p = jump_probs(&c, &g, ScorerKind::GlobalDegree, 0.01).unwrap();
        assert!((p[0].1 - 2.01 / 2.02).abs() < 1e-15);
        assert!((p[1].1 - 0.01 / 2.02).abs() < 1e-15);
        // local degrees 2, 0, 0
        let (g, c) = setup(3, &[(0, 1, 1.0), (0, 2, 1.0)], &[0, 1, 2], &[0]);
        let p = jump_probs(&c, &g, ScorerKind::LocalDegree, 0.01).unwrap();
        assert!((p[0].1 - 2.01 / 2.03).abs() < 1e-15);

        let (g, c) = setup(2, &[(0, 1, 1.0)], &[1], &[1]);
        assert_eq!(jump_probs(&c, &g, ScorerKind::GlobalDegree, 0.01).unwrap(), vec![(n(1), 1.0)]);
    }

    #[test]
    fn jump_edge_scorer_uses_out_weight_sum() {
        let (g, c) = setup(3, &[(0, 1, 2.0), (0, 2, 3.0), (1, 2, 1.0)], &[0, 1, 2], &[0]);
        let p = jump_probs(&c, &g, ScorerKind::EdgeWeight, 0.0).unwrap();
        assert_eq!(p, vec![(n(0), 5.0 / 6.0), (n(1), 1.0 / 6.0), (n(2), 0.0)]);
    }

    #[test]
    fn huge_alpha_is_uniform() {
        let (g, c) = setup(5, &[(0, 1, 5.0), (0, 2, 1.0), (0, 3, 2.0), (1, 2, 1.0)], &[0, 1, 2, 3], &[0]);
        for s in [ScorerKind::EdgeWeight, ScorerKind::LocalDegree, ScorerKind::GlobalDegree] {
            let p = transition_probs(&c, &g, n(0), s, 1e9).unwrap().unwrap();
            assert!(p.iter().all(|(_, q)| (q - 1.0 / 3.0).abs() < 1e-6));
        }
    }

    #[test]
    fn isolated_node_pads() {
        let (g, c) = setup(3, &[(1, 2, 1.0)], &[0], &[0]);
        let cfg = WalkConfig { k: 3, t: 4, ..WalkConfig::default() };
        let p = sample_paths(&c, &g, &cfg).unwrap();
        for row in p.rows() {
            assert_eq!(row, &[Some(n(0)), None, None, None]);
        }
    }

    #[test]
    fn bag_covers_nodes_once() {
        let (_, c) = setup(6, &[(0, 1, 1.0), (2, 3, 1.0)], &[0, 1, 2, 3, 5], &[0]);
        let p = bag_of_nodes(&c, 5, 1).unwrap();
        assert_eq!(p.t(), 1);
        let mut seen: Vec<NodeId> = p.rows().map(|r| r[0].unwrap()).collect();
        seen.sort();
        assert_eq!(seen, c.nodes());
        let p = bag_of_nodes(&c, 12, 1).unwrap();
        assert_eq!(p.k(), 12);
    }

    #[test]
    fn json_dump_marks_padding() {
        let p = PathSet::from_rows("c7", vec![vec![Some(n(3)), None]]).unwrap();
        assert_eq!(p.to_json_line(), r#"{"cascade":"c7","paths":[[3,-1]]}"#);
        assert!(PathSet::from_rows("x", vec![vec![None, Some(n(1))]]).is_err());
    }

    fn random_cascade(seed: u64) -> (GlobalGraph, CascadeGraph) {
        let mut rng = rng_from_seed(seed);
        let mut edges = Vec::new();
        for s in 0..12u32 {
            for d in 0..12u32 {
                if s != d && rng.gen_bool(0.25) {
                    edges.push((n(s), n(d), rng.gen_range(1..=5) as f64));
                }
            }
        }
        let g = GlobalGraph::from_edges(12, edges).unwrap();
        let adopters: Vec<NodeId> = (0..12u32).filter(|_| rng.gen_bool(0.6)).map(NodeId).collect();
        let adopters = if adopters.is_empty() { vec![n(0)] } else { adopters };
        let roots = vec![adopters[0]];
        let c = induce_cascade(&g, &adopters, &roots).unwrap();
        (g, c)
    }

    proptest! {
        #[test]
        fn path_invariants(seed in any::<u64>(), k in 1usize..30, t in 1usize..12, roots_only in any::<bool>(), which in 0usize..3) {
            let (g, c) = random_cascade(seed);
            let scorer = [ScorerKind::EdgeWeight, ScorerKind::LocalDegree, ScorerKind::GlobalDegree][which];
            let start_mode = if roots_only { StartMode::RootsOnly } else { StartMode::Jump };
            let cfg = WalkConfig { k, t, alpha: 0.01, scorer, start_mode, seed };
            let p = sample_paths(&c, &g, &cfg).unwrap();
            prop_assert_eq!((p.k(), p.t()), (k, t));
            prop_assert!(p.row(0)[0].is_some());
            for row in p.rows() {
                prop_assert!(row.windows(2).all(|w| !(w[0].is_none() && w[1].is_some())));
                for w in row.windows(2) {
                    if let (Some(a), Some(b)) = (w[0], w[1]) {
                        prop_assert!(c.has_edge(a, b));
                    }
                }
                prop_assert!(row.iter().flatten().all(|v| c.contains(*v)));
                if roots_only {
                    prop_assert!(c.roots().contains(&row[0].unwrap()));
                }
            }
            prop_assert_eq!(&p, &sample_paths(&c, &g, &cfg).unwrap());
            for v in c.nodes() {
                if let Some(dist) = transition_probs(&c, &g, *v, scorer, 0.01).unwrap() {
                    let s: f64 = dist.iter().map(|x| x.1).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12 && dist.iter().all(|x| x.1 >= 0.0));
                }
            }
            let s: f64 = jump_probs(&c, &g, scorer, 0.01).unwrap().iter().map(|x| x.1).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
