//! The path-based cascade regressor.
//!
//! Each sampled path is embedded node by node (padding has its own trainable
//! embedding column), read left-to-right and right-to-left by two GRUs, and
//! the concatenated hidden states `h[k][i]` (path `k`, position `i`) are pooled
//! into one graph vector
//!
//! ```text
//! h(g) = sum_k sum_i (1 - a)^(k / B) * a * lambda[i] * h[k][i]
//! ```
//!
//! where `a = sigmoid(geo_logits[bucket(|V_c|)])` decays the attention paid to
//! successive groups of `B` paths and `lambda = softmax(lambda_logits)` is
//! shared over positions. A linear head maps `h(g)` to the predicted scaled
//! growth.
//!
//! All paths of a cascade are processed together: at step `i` the inputs form
//! an `H x K` matrix whose columns are the paths.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CascadeGraph, GlobalGraph, NodeId};
use crate::seed::{derive_seed, derived_rng};
use crate::tensor::{Tape, Tensor, Var};
use crate::walk::{bag_of_nodes, sample_paths, PathSet, StartMode, WalkConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// Jump-started walks with learned attention.
    Full,
    /// Length-1 paths listing cascade nodes.
    Bag,
    /// `k` paths of length `t`, pooled with uniform weights.
    Fixed { k: usize, t: usize },
    /// Walks started only at the cascade roots.
    RootStart,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Bag => "bag",
            Variant::Fixed { .. } => "fixed",
            Variant::RootStart => "root",
        }
    }
}

/// Form of the GRU state update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruUpdate {
    /// `h_i = u_i * c_i + (1 - u_i) * h_{i-1}`
    Standard,
    /// `h_i = u_i * c_{i-1} + (1 - u_i) * h_{i-1}`, with `c_0 = 0`.
    PreviousCandidate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden size `H`; node embeddings have the same width.
    pub hidden: usize,
    pub k: usize,
    pub t: usize,
    /// Paths per attention group (`B`).
    pub batch: usize,
    pub n_buckets: usize,
    /// Nodes in the global graph; the embedding has one extra padding column.
    pub n_nodes: usize,
    pub variant: Variant,
    pub normalize_attention: bool,
    pub mlp_hidden: Option<usize>,
    pub gru_update: GruUpdate,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 16,
            k: 200,
            t: 10,
            batch: 5,
            n_buckets: 12,
            n_nodes: 0,
            variant: Variant::Full,
            normalize_attention: false,
            mlp_hidden: None,
            gru_update: GruUpdate::Standard,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.k == 0 || self.t == 0 {
            return Err(Error::config("hidden size, K and T must be at least 1"));
        }
        if self.batch == 0 || self.batch > self.k {
            return Err(Error::config(format!("mini-batch size B={} must lie in [1, K={}]", self.batch, self.k)));
        }
        if self.k % self.batch != 0 {
            return Err(Error::config(format!("K={} is not a multiple of B={}", self.k, self.batch)));
        }
        if self.n_buckets == 0 {
            return Err(Error::config("n_buckets must be at least 1"));
        }
        if let Variant::Fixed { k, t } = self.variant {
            if k == 0 || t == 0 {
                return Err(Error::config("fixed variant needs k, t >= 1"));
            }
        }
        if self.mlp_hidden == Some(0) {
            return Err(Error::config("mlp hidden width must be at least 1"));
        }
        Ok(())
    }

    /// `(K, T)` of the path sets this configuration consumes.
    pub fn path_shape(&self) -> (usize, usize) {
        match self.variant {
            Variant::Full | Variant::RootStart => (self.k, self.t),
            Variant::Bag => (self.k, 1),
            Variant::Fixed { k, t } => (k, t),
        }
    }

    pub fn pad_column(&self) -> usize {
        self.n_nodes
    }
}

/// `floor(log2(size + 1))`, clamped to the last bucket.
pub fn size_bucket(size: usize, n_buckets: usize) -> usize {
    let b = (usize::BITS - 1 - (size + 1).leading_zeros()) as usize;
    b.min(n_buckets.saturating_sub(1))
}

/// Total geometric attention mass `B * (1 - (1 - a)^(K / B))`.
pub fn attention_mass(a: f64, k: usize, b: usize) -> f64 {
    b as f64 * (1.0 - (1.0 - a).powi((k / b) as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_u: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_u: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_u: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    fn init(h: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (h as f64).sqrt();
        let mut m = || {
            Tensor::matrix(h, h, (0..h * h).map(|_| rng.gen_range(-s..s)).collect()).expect("square")
        };
        GruParams {
            w_u: m(),
            w_r: m(),
            w_h: m(),
            u_u: m(),
            u_r: m(),
            u_h: m(),
            b_u: Tensor::zeros(&[h]),
            b_r: Tensor::zeros(&[h]),
            b_h: Tensor::zeros(&[h]),
        }
    }

    fn zeros(h: usize) -> Self {
        let m = || Tensor::zeros(&[h, h]);
        GruParams {
            w_u: m(),
            w_r: m(),
            w_h: m(),
            u_u: m(),
            u_r: m(),
            u_h: m(),
            b_u: Tensor::zeros(&[h]),
            b_r: Tensor::zeros(&[h]),
            b_h: Tensor::zeros(&[h]),
        }
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [&self.w_u, &self.w_r, &self.w_h, &self.u_u, &self.u_r, &self.u_h, &self.b_u, &self.b_r, &self.b_h]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_u,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_u,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_u,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

const GRU_NAMES: [&str; 9] = ["w_u", "w_r", "w_h", "u_u", "u_r", "u_h", "b_u", "b_r", "b_h"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Optional tanh layer: `(weight [M, 2H], bias [M])`.
    pub hidden: Option<(Tensor, Tensor)>,
    /// `[2H, 1]`, or `[M, 1]` with a hidden layer.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `H x (N_node + 1)`; the last column embeds padding.
    pub embedding: Tensor,
    pub fwd: GruParams,
    pub bwd: GruParams,
    pub lambda_logits: Tensor,
    pub geo_logits: Tensor,
    pub mlp: MlpParams,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let mut rng = derived_rng(cfg.seed, "init", "");
        let cols = cfg.n_nodes + 1;
        let embedding = Tensor::matrix(h, cols, (0..h * cols).map(|_| rng.gen_range(-0.05..0.05)).collect())?;
        let fwd = GruParams::init(h, &mut rng);
        let bwd = GruParams::init(h, &mut rng);
        // start with the attention spread over every group of paths
        let groups = cfg.k / cfg.batch;
        let a0 = if groups > 1 { 1.0 / groups as f64 } else { 0.5 };
        let geo_logits = Tensor::filled(&[cfg.n_buckets], logit(a0));
        let lambda_logits = Tensor::zeros(&[cfg.t]);
        let width = 2 * h;
        let (hidden, out_in) = match cfg.mlp_hidden {
            Some(m) => {
                let s = 1.0 / (width as f64).sqrt();
                let w = Tensor::matrix(m, width, (0..m * width).map(|_| rng.gen_range(-s..s)).collect())?;
                (Some((w, Tensor::zeros(&[m]))), m)
            }
            None => (None, width),
        };
        let s = 1.0 / (out_in as f64).sqrt();
        let weight = Tensor::matrix(out_in, 1, (0..out_in).map(|_| rng.gen_range(-s..s)).collect())?;
        Ok(ModelParams {
            embedding,
            fwd,
            bwd,
            lambda_logits,
            geo_logits,
            mlp: MlpParams { hidden, weight, bias: Tensor::zeros(&[1]) },
        })
    }

    /// All-zero parameters with the shapes `cfg` requires.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let out_in = cfg.mlp_hidden.unwrap_or(2 * h);
        ModelParams {
            embedding: Tensor::zeros(&[h, cfg.n_nodes + 1]),
            fwd: GruParams::zeros(h),
            bwd: GruParams::zeros(h),
            lambda_logits: Tensor::zeros(&[cfg.t]),
            geo_logits: Tensor::zeros(&[cfg.n_buckets]),
            mlp: MlpParams {
                hidden: cfg.mlp_hidden.map(|m| (Tensor::zeros(&[m, 2 * h]), Tensor::zeros(&[m]))),
                weight: Tensor::zeros(&[out_in, 1]),
                bias: Tensor::zeros(&[1]),
            },
        }
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (dir, p) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            for (n, t) in GRU_NAMES.iter().zip(p.tensors()) {
                out.push((format!("{dir}.{n}"), t));
            }
        }
        out.push(("lambda_logits".into(), &self.lambda_logits));
        out.push(("geo_logits".into(), &self.geo_logits));
        if let Some((w, b)) = &self.mlp.hidden {
            out.push(("mlp.hidden_weight".into(), w));
            out.push(("mlp.hidden_bias".into(), b));
        }
        out.push(("mlp.weight".into(), &self.mlp.weight));
        out.push(("mlp.bias".into(), &self.mlp.bias));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.fwd.tensors_mut());
        out.extend(self.bwd.tensors_mut());
        out.push(&mut self.lambda_logits);
        out.push(&mut self.geo_logits);
        if let Some((w, b)) = &mut self.mlp.hidden {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.mlp.weight);
        out.push(&mut self.mlp.bias);
        out
    }

    pub fn n_values(&self) -> usize {
        self.groups().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_values() {
            return Err(Error::domain(format!("expected {} values, got {}", self.n_values(), flat.len())));
        }
        let mut off = 0;
        for t in self.groups_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Checks every array against the shapes `cfg` implies.
    pub fn validate_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = ModelParams::zeros(cfg);
        let got = self.groups();
        let exp = want.groups();
        if got.len() != exp.len() {
            return Err(Error::config(format!("expected {} parameter groups, found {}", exp.len(), got.len())));
        }
        for ((name, t), (_, w)) in got.iter().zip(&exp) {
            if t.shape() != w.shape() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    detail: format!("{name}: expected {:?}, found {:?}", w.shape(), t.shape()),
                });
            }
            if !t.is_finite() {
                return Err(Error::Numerical(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }

    /// `lambda = softmax(lambda_logits)`.
    pub fn lambda(&self) -> Vec<f64> {
        let z = self.lambda_logits.data();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Geometric attention parameter for a size bucket.
    pub fn geo_a(&self, bucket: usize) -> f64 {
        1.0 / (1.0 + (-self.geo_logits.data()[bucket]).exp())
    }

    /// Overwrites embedding columns from a TSV file of `id` followed by `H`
    /// values per line.
    pub fn load_embedding_init(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let (h, cols) = self.embedding.dims2().expect("rank 2");
        let reader = BufReader::new(File::open(path)?);
        let mut n = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let id: usize = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("missing node id".into()))?;
            if id + 1 >= cols {
                return Err(bad(format!("node {id} outside the embedding table")));
            }
            let vals: Vec<f64> = fields
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?;
            if vals.len() != h {
                return Err(bad(format!("expected {h} values, found {}", vals.len())));
            }
            for (r, v) in vals.into_iter().enumerate() {
                self.embedding.data_mut()[r * cols + id] = v;
            }
            n += 1;
        }
        Ok(n)
    }
}

/// Samples the path set a variant consumes, with the cascade-derived seed.
pub fn sample_for_variant(
    cascade_id: &str,
    c: &CascadeGraph,
    g: &GlobalGraph,
    cfg: &ModelConfig,
    walk: &WalkConfig,
) -> Result<PathSet> {
    let (k, t) = cfg.path_shape();
    let mut wc = walk.for_cascade(cascade_id);
    wc.k = k;
    wc.t = t;
    let mut paths = match cfg.variant {
        Variant::Full | Variant::Fixed { .. } => sample_paths(c, g, &WalkConfig { start_mode: StartMode::Jump, ..wc })?,
        Variant::RootStart => sample_paths(c, g, &WalkConfig { start_mode: StartMode::RootsOnly, ..wc })?,
        Variant::Bag => bag_of_nodes(c, k, derive_seed(wc.seed, "bag", ""))?,
    };
    paths.cascade_id = cascade_id.to_string();
    Ok(paths)
}

/// Tape handles for one direction's GRU parameters.
#[derive(Clone, Copy)]
pub struct GruVars {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
}

/// Every parameter group recorded on a tape, in `ModelParams::groups` order.
pub struct ParamVars {
    pub embedding: Var,
    pub fwd: GruVars,
    pub bwd: GruVars,
    pub lambda_logits: Var,
    pub geo_logits: Var,
    pub mlp_hidden: Option<(Var, Var)>,
    pub mlp_weight: Var,
    pub mlp_bias: Var,
    all: Vec<Var>,
}

impl ParamVars {
    pub fn bind(tape: &mut Tape, p: &ModelParams, requires_grad: bool) -> Self {
        let mut all = Vec::new();
        let mut put = |tape: &mut Tape, t: &Tensor| {
            let v = tape.leaf(t.clone(), requires_grad);
            all.push(v);
            v
        };
        let embedding = put(tape, &p.embedding);
        let mut gru = |tape: &mut Tape, g: &GruParams| {
            let t = g.tensors();
            let v: Vec<Var> = t.iter().map(|x| put(tape, x)).collect();
            GruVars { w: [v[0], v[1], v[2]], u: [v[3], v[4], v[5]], b: [v[6], v[7], v[8]] }
        };
        let fwd = gru(tape, &p.fwd);
        let bwd = gru(tape, &p.bwd);
        let lambda_logits = put(tape, &p.lambda_logits);
        let geo_logits = put(tape, &p.geo_logits);
        let mlp_hidden = p.mlp.hidden.as_ref().map(|(w, b)| (put(tape, w), put(tape, b)));
        let mlp_weight = put(tape, &p.mlp.weight);
        let mlp_bias = put(tape, &p.mlp.bias);
        ParamVars { embedding, fwd, bwd, lambda_logits, geo_logits, mlp_hidden, mlp_weight, mlp_bias, all }
    }

    /// Gradients of every group, flattened in `ModelParams::flatten` order.
    pub fn flat_grad(&self, tape: &Tape) -> Vec<f64> {
        self.all
            .iter()
            .flat_map(|v| match tape.grad(*v) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; tape.value(*v).len()],
            })
            .collect()
    }
}

/// Embedding columns for each time step: `[H, K]` per position.
pub fn embed(tape: &mut Tape, embedding: Var, paths: &PathSet, pad: usize) -> Result<Vec<Var>> {
    let cols = tape.shape(embedding)[1];
    (0..paths.t())
        .map(|i| {
            let idx: Vec<usize> = paths
                .column(i)
                .map(|c| c.map_or(pad, NodeId::index))
                .collect();
            if let Some(bad) = idx.iter().find(|&&j| j >= cols) {
                return Err(Error::Index(format!("node {bad} outside the embedding table")));
            }
            tape.gather_cols(embedding, &idx)
        })
        .collect()
}

/// One GRU step on column-stacked inputs `x` and state `h_prev` (`[H, K]`).
///
/// `expanded_bias` holds the three biases already expanded to `[H, K]`.
/// Returns `(h, candidate)`.
pub fn gru_cell(
    tape: &mut Tape,
    gates: &GruVars,
    expanded_bias: &[Var; 3],
    x: Var,
    h_prev: Var,
    prev_candidate: Option<Var>,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape, j: usize| -> Result<Var> {
        let wx = tape.matmul(gates.w[j], x)?;
        let uh = tape.matmul(gates.u[j], h_prev)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, expanded_bias[j])
    };
    let u = gate(tape, 0)?;
    let u = tape.sigmoid(u);
    let r = gate(tape, 1)?;
    let r = tape.sigmoid(r);
    let wx = tape.matmul(gates.w[2], x)?;
    let uh = tape.matmul(gates.u[2], h_prev)?;
    let ruh = tape.mul(r, uh)?;
    let pre = tape.add(wx, ruh)?;
    let pre = tape.add(pre, expanded_bias[2])?;
    let cand = tape.tanh(pre);
    let blend = prev_candidate.unwrap_or(cand);
    // h_prev + u * (blend - h_prev)
    let d = tape.sub(blend, h_prev)?;
    let ud = tape.mul(u, d)?;
    let h = tape.add(h_prev, ud)?;
    Ok((h, cand))
}

fn run_gru(
    tape: &mut Tape,
    gates: &GruVars,
    xs: &[Var],
    order: impl Iterator<Item = usize>,
    update: GruUpdate,
) -> Result<Vec<Var>> {
    let (h, k) = (tape.shape(xs[0])[0], tape.shape(xs[0])[1]);
    let bias = [
        tape.expand_cols(gates.b[0], k)?,
        tape.expand_cols(gates.b[1], k)?,
        tape.expand_cols(gates.b[2], k)?,
    ];
    let zero = tape.constant(Tensor::zeros(&[h, k]));
    let mut state = zero;
    let mut cand_prev = zero;
    let mut out = vec![zero; xs.len()];
    for i in order {
        let prev = match update {
            GruUpdate::Standard => None,
            GruUpdate::PreviousCandidate => Some(cand_prev),
        };
        let (hn, cand) = gru_cell(tape, gates, &bias, xs[i], state, prev)?;
        state = hn;
        cand_prev = cand;
        out[i] = hn;
    }
    Ok(out)
}

/// Bidirectional encoding: position `i` maps to `[2H, K]`, forward state on
/// top of backward state.
pub fn encode_sequence(tape: &mut Tape, vars: &ParamVars, xs: &[Var], update: GruUpdate) -> Result<Vec<Var>> {
    let t = xs.len();
    let fwd = run_gru(tape, &vars.fwd, xs, 0..t, update)?;
    let bwd = run_gru(tape, &vars.bwd, xs, (0..t).rev(), update)?;
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b], 0))
        .collect()
}

/// Per-path geometric weights `(1 - a)^(k / B) * a`, shape `[K]`.
pub fn geometric_weights(tape: &mut Tape, geo_logits: Var, bucket: usize, k: usize, b: usize, normalize: bool) -> Result<Var> {
    if b == 0 || k % b != 0 {
        return Err(Error::config(format!("K={k} is not a multiple of B={b}")));
    }
    let logit = tape.slice(geo_logits, 0, bucket, 1)?;
    let a = tape.sigmoid(logit);
    let neg = tape.scale(a, -1.0);
    let keep = tape.add_scalar(neg, 1.0);
    let groups = k / b;
    let powers: Vec<Var> = (0..groups).map(|m| tape.pow(keep, m as f64)).collect();
    let per_group = tape.concat(&powers, 0)?;
    let idx: Vec<usize> = (0..k).map(|j| j / b).collect();
    let w = tape.gather_rows(per_group, &idx)?;
    let w = tape.mul_scalar(w, a)?;
    if !normalize {
        return Ok(w);
    }
    // divide by B * (1 - keep^groups)
    let tail = tape.pow(keep, groups as f64);
    let tail = tape.scale(tail, -(b as f64));
    let mass = tape.add_scalar(tail, b as f64);
    let inv = tape.pow(mass, -1.0);
    tape.mul_scalar(w, inv)
}

/// Pools encoded positions with path weights `[K]` and position weights `[T]`.
pub fn attention_assemble(tape: &mut Tape, encoded: &[Var], path_w: Var, pos_w: Var) -> Result<Var> {
    let per_pos: Vec<Var> = encoded
        .iter()
        .map(|h| tape.matmul(*h, path_w))
        .collect::<Result<_>>()?;
    let s = tape.concat(&per_pos, 1)?;
    tape.matmul(s, pos_w)
}

fn check_paths(cfg: &ModelConfig, paths: &PathSet) -> Result<()> {
    let want = cfg.path_shape();
    if (paths.k(), paths.t()) != want {
        return Err(Error::config(format!(
            "{} variant expects {}x{} paths, got {}x{}",
            cfg.variant.name(),
            want.0,
            want.1,
            paths.k(),
            paths.t()
        )));
    }
    if let Some(bad) = paths.rows().flatten().flatten().find(|v| v.index() >= cfg.n_nodes) {
        return Err(Error::Index(format!("node {bad} outside the {}-node embedding table", cfg.n_nodes)));
    }
    Ok(())
}

/// Records the full forward pass; returns the `[1]` prediction.
pub fn forward(tape: &mut Tape, vars: &ParamVars, cfg: &ModelConfig, paths: &PathSet, c: &CascadeGraph) -> Result<Var> {
    check_paths(cfg, paths)?;
    let xs = embed(tape, vars.embedding, paths, cfg.pad_column())?;
    let encoded = encode_sequence(tape, vars, &xs, cfg.gru_update)?;
    let (k, t) = (paths.k(), paths.t());
    let (path_w, pos_w) = match cfg.variant {
        Variant::Fixed { .. } => (
            tape.constant(Tensor::filled(&[k], 1.0 / k as f64)),
            tape.constant(Tensor::filled(&[t], 1.0 / t as f64)),
        ),
        _ => {
            let bucket = size_bucket(c.n_nodes(), cfg.n_buckets);
            let w = geometric_weights(tape, vars.geo_logits, bucket, k, cfg.batch, cfg.normalize_attention)?;
            let logits = tape.slice(vars.lambda_logits, 0, 0, t)?;
            (w, tape.softmax(logits, 0)?)
        }
    };
    let graph = attention_assemble(tape, &encoded, path_w, pos_w)?;
    let feat = match vars.mlp_hidden {
        Some((w, b)) => {
            let z = tape.matmul(w, graph)?;
            let m = tape.shape(b)[0];
            let b = tape.reshape(b, &[m, 1])?;
            let z = tape.add(z, b)?;
            tape.tanh(z)
        }
        None => graph,
    };
    let prod = tape.mul(vars.mlp_weight, feat)?;
    let s = tape.sum(prod);
    tape.add(s, vars.mlp_bias)
}

/// Prediction without gradient bookkeeping.
pub fn predict(paths: &PathSet, c: &CascadeGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, false);
    let out = forward(&mut tape, &vars, cfg, paths, c)?;
    let y = tape.value(out).data()[0];
    if !y.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite prediction; first offender: {}",
            tape.first_non_finite().unwrap_or_default()
        )));
    }
    Ok(y)
}

/// Squared error of one cascade and its gradient w.r.t. every parameter.
pub struct Evaluated {
    pub prediction: f64,
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn loss_and_grad(
    paths: &PathSet,
    c: &CascadeGraph,
    label: f64,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Evaluated> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, true);
    let pred = forward(&mut tape, &vars, cfg, paths, c)?;
    let diff = tape.add_scalar(pred, -label);
    let loss = tape.mul(diff, diff)?;
    let loss_v = tape.value(loss).data()[0];
    if !loss_v.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss; first offender: {}",
            tape.first_non_finite().unwrap_or_default()
        )));
    }
    tape.backward(loss)?;
    Ok(Evaluated { prediction: tape.value(pred).data()[0], loss: loss_v, grad: vars.flat_grad(&tape) })
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub params: ModelParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub walk: WalkConfig,
    pub horizon: u32,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint format {}", ck.format_version)));
        }
        ck.config.model.validate()?;
        ck.params.validate_shapes(&ck.config.model)?;
        Ok(ck)
    }
}
