//! Structural features of cascade and frontier graphs, and the ridge
//! regression baseline fitted on them.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CascadeRecord;
use crate::error::{Error, Result};
use crate::graph::{frontier, CascadeGraph, FrontierGraph, GlobalGraph};
use crate::seed::splitmix64;

/// Names of the structural block, in layout order.
pub const BASE_FEATURES: [&str; 13] = [
    "n_nodes",
    "n_edges",
    "edge_density",
    "n_leaves",
    "mean_local_out_degree",
    "p90_local_out_degree",
    "mean_global_out_degree",
    "p90_global_out_degree",
    "frontier_n_nodes",
    "frontier_n_edges",
    "frontier_boundary_edges",
    "open_triangles",
    "closed_triangles",
];

pub const DEFAULT_HASH_DIM: usize = 4096;

/// Node-identity indicators appended after the structural block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "snake_case")]
pub enum IdentityBlock {
    None,
    /// Node ids hashed into this many buckets.
    Hashed(usize),
    /// One indicator per global node.
    Exact(usize),
}

impl IdentityBlock {
    pub fn dim(&self) -> usize {
        match *self {
            IdentityBlock::None => 0,
            IdentityBlock::Hashed(d) | IdentityBlock::Exact(d) => d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub identity: IdentityBlock,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        BASE_FEATURES.len() + self.identity.dim()
    }

    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = BASE_FEATURES.iter().map(|s| s.to_string()).collect();
        let prefix = match self.identity {
            IdentityBlock::None => return out,
            IdentityBlock::Hashed(_) => "id_hash_",
            IdentityBlock::Exact(_) => "id_",
        };
        out.extend((0..self.identity.dim()).map(|j| format!("{prefix}{j}")));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub layout: FeatureLayout,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        BASE_FEATURES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

/// Closed and open triangles of the undirected simple projection of `c`.
pub fn triangle_counts(c: &CascadeGraph) -> (u64, u64) {
    let nbrs = undirected_neighbors(c);
    let mut closed = 0u64;
    for (u, nu) in nbrs.iter().enumerate() {
        for &v in nu.iter().filter(|&&v| v > u) {
            closed += sorted_intersection_above(nu, &nbrs[v], v);
        }
    }
    let wedges: u64 = nbrs.iter().map(|n| choose2(n.len() as u64)).sum();
    (wedges - 3 * closed, closed)
}

fn choose2(d: u64) -> u64 {
    d * d.saturating_sub(1) / 2
}

/// Sorted, deduplicated undirected neighbor lists over local indices.
pub fn undirected_neighbors(c: &CascadeGraph) -> Vec<Vec<usize>> {
    let mut nbrs = vec![Vec::new(); c.n_nodes()];
    for u in 0..c.n_nodes() {
        for &(v, _) in c.out_local(u) {
            nbrs[u].push(v);
            nbrs[v].push(u);
        }
    }
    for n in &mut nbrs {
        n.sort_unstable();
        n.dedup();
    }
    nbrs
}

fn sorted_intersection_above(a: &[usize], b: &[usize], floor: usize) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if a[i] > floor {
                    n += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Nearest-rank 90th percentile: index `ceil(0.9 n) - 1` of the sorted list.
pub fn p90(values: &mut [usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let rank = (9 * values.len()).div_ceil(10);
    values[rank - 1] as f64
}

fn mean(values: &[usize]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<usize>() as f64 / values.len() as f64
    }
}

pub fn extract_features(
    c: &CascadeGraph,
    f: &FrontierGraph,
    g: &GlobalGraph,
    identity: IdentityBlock,
) -> Result<FeatureVector> {
    if !f.matches(c) {
        return Err(Error::domain("frontier graph was built for a different cascade"));
    }
    let n = c.n_nodes();
    let density = if n >= 2 { c.n_edges() as f64 / (n * (n - 1)) as f64 } else { 0.0 };
    let leaves = (0..n)
        .filter(|&i| c.in_degree_local(i) == 1 && c.out_local(i).is_empty())
        .count();
    let mut local: Vec<usize> = (0..n).map(|i| c.out_local(i).len()).collect();
    let mut global: Vec<usize> = c.nodes().iter().map(|&v| g.out_edges(v).len()).collect();
    let (open, closed) = triangle_counts(c);
    let mut values = vec![
        n as f64,
        c.n_edges() as f64,
        density,
        leaves as f64,
        mean(&local),
        p90(&mut local),
        mean(&global),
        p90(&mut global),
        f.n_nodes() as f64,
        f.n_edges() as f64,
        f.boundary_edges() as f64,
        open as f64,
        closed as f64,
    ];
    let mut block = vec![0.0; identity.dim()];
    for &v in c.nodes() {
        let j = match identity {
            IdentityBlock::None => break,
            IdentityBlock::Hashed(d) => (splitmix64(v.0 as u64) % d as u64) as usize,
            IdentityBlock::Exact(d) => {
                if v.index() >= d {
                    return Err(Error::Index(format!("node {v} outside the {d}-wide identity block")));
                }
                v.index()
            }
        };
        block[j] = 1.0;
    }
    values.extend(block);
    Ok(FeatureVector { layout: FeatureLayout { identity }, values })
}

/// Features of every record, in input order.
pub fn extract_all(records: &[CascadeRecord], g: &GlobalGraph, identity: IdentityBlock) -> Result<Vec<FeatureVector>> {
    records
        .par_iter()
        .map(|r| {
            let c = r.graph(g)?;
            let f = frontier(g, &c);
            extract_features(&c, &f, g, identity)
        })
        .collect()
}

/// CSV with a header row; one cascade per line.
pub fn write_features_csv<W: Write>(ids: &[String], rows: &[FeatureVector], mut w: W) -> Result<()> {
    if ids.len() != rows.len() {
        return Err(Error::domain("ids and feature rows differ in length"));
    }
    let Some(first) = rows.first() else {
        return Ok(());
    };
    writeln!(w, "id,{}", first.layout.names().join(","))?;
    for (id, r) in ids.iter().zip(rows) {
        if r.layout != first.layout {
            return Err(Error::domain(format!("cascade {id}: feature layout differs")));
        }
        let vals: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id},{}", vals.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RidgeOptions {
    /// Scale each column to unit standard deviation before solving.
    pub standardize: bool,
    /// Fit an unpenalized bias by centering.
    pub fit_intercept: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions { standardize: true, fit_intercept: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub layout: FeatureLayout,
    /// Weights on raw feature values.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

/// Minimizes `sum (x w + b - y)^2 + l2 |w|^2` on raw rows.
///
/// Columns with zero spread get weight zero when standardizing.
pub fn fit_ridge_rows(x: &[Vec<f64>], y: &[f64], l2: f64, opts: RidgeOptions) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::domain(format!("ridge needs equal non-zero rows, got {n} rows and {} labels", y.len())));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::domain(format!("l2 must be finite and non-negative, got {l2}")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::domain("ragged feature rows"));
    }
    let nf = n as f64;
    let center: Vec<f64> = if opts.fit_intercept {
        (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect()
    } else {
        vec![0.0; d]
    };
    let y_center = if opts.fit_intercept { y.iter().sum::<f64>() / nf } else { 0.0 };
    let scale: Vec<f64> = if opts.standardize {
        (0..d)
            .map(|j| (x.iter().map(|r| (r[j] - center[j]).powi(2)).sum::<f64>() / nf).sqrt())
            .collect()
    } else {
        vec![1.0; d]
    };
    let active: Vec<usize> = (0..d).filter(|&j| scale[j] > 0.0).collect();
    let da = active.len();
    let xt = DMatrix::from_fn(n, da, |i, k| {
        let j = active[k];
        (x[i][j] - center[j]) / scale[j]
    });
    let yt = DVector::from_iterator(n, y.iter().map(|v| v - y_center));
    let singular = || Error::Numerical(format!("singular ridge system at l2={l2}; use l2 > 0"));
    let wt = if da == 0 {
        DVector::zeros(0)
    } else if da <= n {
        let a = xt.transpose() * &xt + DMatrix::identity(da, da) * l2;
        let b = xt.transpose() * &yt;
        a.cholesky().ok_or_else(singular)?.solve(&b)
    } else {
        let a = &xt * xt.transpose() + DMatrix::identity(n, n) * l2;
        let alpha = a.cholesky().ok_or_else(singular)?.solve(&yt);
        xt.transpose() * alpha
    };
    if wt.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let mut w = vec![0.0; d];
    for (k, &j) in active.iter().enumerate() {
        w[j] = wt[k] / scale[j];
    }
    let bias = y_center - (0..d).map(|j| w[j] * center[j]).sum::<f64>();
    Ok((w, bias))
}

pub fn fit_ridge(x: &[FeatureVector], y: &[f64], l2: f64) -> Result<RidgeModel> {
    fit_ridge_with(x, y, l2, RidgeOptions::default())
}

pub fn fit_ridge_with(x: &[FeatureVector], y: &[f64], l2: f64, opts: RidgeOptions) -> Result<RidgeModel> {
    let layout = x.first().ok_or_else(|| Error::domain("ridge needs at least one row"))?.layout;
    if x.iter().any(|v| v.layout != layout) {
        return Err(Error::domain("feature rows with different layouts"));
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|v| v.values.clone()).collect();
    let (weights, bias) = fit_ridge_rows(&rows, y, l2, opts)?;
    Ok(RidgeModel { layout, weights, bias, l2 })
}

pub fn predict_ridge(m: &RidgeModel, x: &FeatureVector) -> Result<f64> {
    if x.layout != m.layout || x.values.len() != m.weights.len() {
        return Err(Error::domain(format!(
            "feature layout {:?} does not match the model's {:?}",
            x.layout, m.layout
        )));
    }
    Ok(m.weights.iter().zip(&x.values).map(|(w, v)| w * v).sum::<f64>() + m.bias)
}

/// Nonzero entries of the identity block.
pub fn identity_nonzeros(x: &FeatureVector) -> usize {
    x.values[BASE_FEATURES.len()..].iter().filter(|v| **v != 0.0).count()
}
