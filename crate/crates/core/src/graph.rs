//! Global social network, induced cascade graphs and frontier graphs.
//!
//! Node ids are dense integers in `[0, n_nodes)`. The global graph is built
//! once (from a TSV edge list or the synthetic generator) and is read-only
//! afterwards, so it can be shared freely across threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::splitmix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

/// Degree queries shared by global and cascade graphs.
pub trait Degree {
    fn degree(&self, v: NodeId, direction: Direction) -> Result<usize>;

    fn out_degree(&self, v: NodeId) -> Result<usize> {
        self.degree(v, Direction::Out)
    }

    fn in_degree(&self, v: NodeId) -> Result<usize> {
        self.degree(v, Direction::In)
    }
}

/// Weighted directed network. Out-adjacency lists are sorted by target id.
#[derive(Clone, Debug)]
pub struct GlobalGraph {
    out: Vec<Vec<(NodeId, f64)>>,
    inc: Vec<Vec<NodeId>>,
    n_edges: usize,
}

impl GlobalGraph {
    /// Builds a graph from an edge list, enforcing the no-self-loop,
    /// positive-weight and single-edge-per-pair rules.
    pub fn from_edges<I>(n_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId, f64)>,
    {
        let mut builder = Builder::new(n_nodes);
        for (i, (s, d, w)) in edges.into_iter().enumerate() {
            builder
                .push(s, d, w, i + 1)
                .map_err(|msg| Error::domain(format!("edge {}: {msg}", i + 1)))?;
        }
        builder.finish().map_err(|(line, msg)| Error::domain(format!("edge {line}: {msg}")))
    }

    pub fn n_nodes(&self) -> usize {
        self.out.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.out.len()
    }

    pub fn out_edges(&self, v: NodeId) -> &[(NodeId, f64)] {
        &self.out[v.index()]
    }

    pub fn in_neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.inc[v.index()]
    }

    pub fn weight(&self, src: NodeId, dst: NodeId) -> Option<f64> {
        let row = self.out.get(src.index())?;
        row.binary_search_by_key(&dst, |&(d, _)| d).ok().map(|i| row[i].1)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().map(move |&(d, w)| (NodeId(s as u32), d, w)))
    }

    /// Writes the TSV edge-list format, including the `# nodes=N` header.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nodes={}", self.n_nodes())?;
        for (s, d, wt) in self.edges() {
            writeln!(w, "{s}\t{d}\t{wt}")?;
        }
        Ok(())
    }
}

impl Degree for GlobalGraph {
    fn degree(&self, v: NodeId, direction: Direction) -> Result<usize> {
        if !self.contains(v) {
            return Err(Error::domain(format!("node {v} not in global graph")));
        }
        Ok(match direction {
            Direction::Out => self.out[v.index()].len(),
            Direction::In => self.inc[v.index()].len(),
        })
    }
}

struct Builder {
    pinned: Option<usize>,
    out: Vec<Vec<(NodeId, f64, usize)>>,
}

impl Builder {
    fn new(pinned: usize) -> Self {
        Builder { pinned: Some(pinned), out: Vec::new() }
    }

    fn unpinned() -> Self {
        Builder { pinned: None, out: Vec::new() }
    }

    fn push(&mut self, s: NodeId, d: NodeId, w: f64, line: usize) -> std::result::Result<(), String> {
        if s == d {
            return Err(format!("self-loop on node {s}"));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(format!("weight must be positive and finite, got {w}"));
        }
        if let Some(n) = self.pinned {
            if s.index() >= n || d.index() >= n {
                return Err(format!("node id out of range for {n} nodes"));
            }
        }
        let hi = s.index().max(d.index());
        if self.out.len() <= hi {
            self.out.resize_with(hi + 1, Vec::new);
        }
        self.out[s.index()].push((d, w, line));
        Ok(())
    }

    fn finish(mut self) -> std::result::Result<GlobalGraph, (usize, String)> {
        let n = self.pinned.unwrap_or(self.out.len());
        self.out.resize_with(n, Vec::new);
        let mut inc = vec![Vec::new(); n];
        let mut out = Vec::with_capacity(n);
        let mut n_edges = 0;
        for (s, mut row) in self.out.into_iter().enumerate() {
            row.sort_by_key(|&(d, _, line)| (d, line));
            for pair in row.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err((pair[1].2, format!("duplicate edge {s} -> {}", pair[1].0)));
                }
            }
            for &(d, _, _) in &row {
                inc[d.index()].push(NodeId(s as u32));
            }
            n_edges += row.len();
            out.push(row.into_iter().map(|(d, w, _)| (d, w)).collect::<Vec<_>>());
        }
        // sources are visited in ascending order, so in-lists come out sorted
        Ok(GlobalGraph { out, inc, n_edges })
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("{what} is not a number: {field:?}") })
}

/// Parses the TSV edge list from any buffered reader, one line at a time.
pub fn parse_global_graph<R: BufRead>(reader: R) -> Result<GlobalGraph> {
    let mut builder = Builder::unpinned();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            match rest.strip_prefix("nodes=") {
                Some(n) if line_no == 1 => {
                    builder.pinned = Some(parse_field(n, line_no, "node count")?);
                    continue;
                }
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "only a leading `# nodes=<N>` header is allowed".into(),
                    })
                }
            }
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let s: u32 = parse_field(cols[0], line_no, "source id")?;
        let d: u32 = parse_field(cols[1], line_no, "target id")?;
        let w: f64 = parse_field(cols[2], line_no, "weight")?;
        builder
            .push(NodeId(s), NodeId(d), w, line_no)
            .map_err(|msg| Error::Parse { line: line_no, msg })?;
    }
    builder.finish().map_err(|(line, msg)| Error::Parse { line, msg })
}

pub fn load_global_graph(path: impl AsRef<Path>) -> Result<GlobalGraph> {
    let f = File::open(path)?;
    parse_global_graph(BufReader::new(f))
}

/// Reads an optional `id<TAB>label` node-name map.
pub fn load_node_labels(path: impl AsRef<Path>) -> Result<HashMap<NodeId, String>> {
    let f = BufReader::new(File::open(path)?);
    let mut labels = HashMap::new();
    for (idx, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "expected `id<TAB>label`".into(),
        })?;
        let id: u32 = parse_field(id, idx + 1, "node id")?;
        labels.insert(NodeId(id), label.to_string());
    }
    Ok(labels)
}

/// Subgraph of the global network induced on a cascade's adopters.
#[derive(Clone, Debug)]
pub struct CascadeGraph {
    nodes: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    // local indices, sorted by target
    out: Vec<Vec<(usize, f64)>>,
    in_degree: Vec<usize>,
    roots: Vec<NodeId>,
    n_edges: usize,
}

impl CascadeGraph {
    /// Nodes in ascending id order; local index `i` refers to `nodes()[i]`.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.index.contains_key(&v)
    }

    pub fn local_index(&self, v: NodeId) -> Option<usize> {
        self.index.get(&v).copied()
    }

    pub fn node_at(&self, local: usize) -> NodeId {
        self.nodes[local]
    }

    /// Out-neighbors of the node at a local index, as `(local index, weight)`.
    pub fn out_local(&self, local: usize) -> &[(usize, f64)] {
        &self.out[local]
    }

    pub fn in_degree_local(&self, local: usize) -> usize {
        self.in_degree[local]
    }

    pub fn has_edge(&self, src: NodeId, dst: NodeId) -> bool {
        match (self.local_index(src), self.local_index(dst)) {
            (Some(s), Some(d)) => self.out[s].binary_search_by_key(&d, |&(t, _)| t).is_ok(),
            _ => false,
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.out.iter().enumerate().flat_map(move |(s, row)| {
            row.iter().map(move |&(d, w)| (self.nodes[s], self.nodes[d], w))
        })
    }

    fn fingerprint(&self) -> u64 {
        node_set_fingerprint(&self.nodes)
    }
}

impl Degree for CascadeGraph {
    fn degree(&self, v: NodeId, direction: Direction) -> Result<usize> {
        let i = self
            .local_index(v)
            .ok_or_else(|| Error::domain(format!("node {v} not in cascade graph")))?;
        Ok(match direction {
            Direction::Out => self.out[i].len(),
            Direction::In => self.in_degree[i],
        })
    }
}

fn node_set_fingerprint(sorted: &[NodeId]) -> u64 {
    sorted
        .iter()
        .fold(splitmix64(sorted.len() as u64), |h, v| splitmix64(h ^ v.0 as u64))
}

/// Induces the cascade graph on `adopters`: its edges are exactly the global
/// edges with both endpoints among the adopters.
pub fn induce_cascade(g: &GlobalGraph, adopters: &[NodeId], roots: &[NodeId]) -> Result<CascadeGraph> {
    if adopters.is_empty() {
        return Err(Error::domain("adopter set is empty"));
    }
    if roots.is_empty() {
        return Err(Error::domain("cascade needs at least one root"));
    }
    if let Some(v) = adopters.iter().find(|v| !g.contains(**v)) {
        return Err(Error::domain(format!("adopter {v} out of range for {} nodes", g.n_nodes())));
    }
    let mut nodes = adopters.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    if let Some(r) = roots.iter().find(|r| !index.contains_key(r)) {
        return Err(Error::domain(format!("root {r} is not an adopter")));
    }
    let mut out = vec![Vec::new(); nodes.len()];
    let mut in_degree = vec![0; nodes.len()];
    let mut n_edges = 0;
    for (s, &v) in nodes.iter().enumerate() {
        for &(u, w) in g.out_edges(v) {
            if let Some(&d) = index.get(&u) {
                out[s].push((d, w));
                in_degree[d] += 1;
                n_edges += 1;
            }
        }
    }
    let mut root_list = Vec::with_capacity(roots.len());
    for &r in roots {
        if !root_list.contains(&r) {
            root_list.push(r);
        }
    }
    Ok(CascadeGraph { nodes, index, out, in_degree, roots: root_list, n_edges })
}

/// Non-adopter neighbors of a cascade and the edges among them.
#[derive(Clone, Debug)]
pub struct FrontierGraph {
    nodes: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId, f64)>,
    boundary_edges: usize,
    cascade_fingerprint: u64,
}

impl FrontierGraph {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId, f64)] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Edges among frontier nodes only.
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges between the cascade and its frontier, both directions.
    pub fn boundary_edges(&self) -> usize {
        self.boundary_edges
    }

    pub fn matches(&self, c: &CascadeGraph) -> bool {
        self.cascade_fingerprint == c.fingerprint()
    }
}

pub fn frontier(g: &GlobalGraph, c: &CascadeGraph) -> FrontierGraph {
    let mut set = HashSet::new();
    let mut boundary_edges = 0;
    for &v in c.nodes() {
        for &(u, _) in g.out_edges(v) {
            if !c.contains(u) {
                set.insert(u);
                boundary_edges += 1;
            }
        }
        for &u in g.in_neighbors(v) {
            if !c.contains(u) {
                set.insert(u);
                boundary_edges += 1;
            }
        }
    }
    let mut nodes: Vec<NodeId> = set.iter().copied().collect();
    nodes.sort_unstable();
    let mut edges = Vec::new();
    for &v in &nodes {
        for &(u, w) in g.out_edges(v) {
            if set.contains(&u) {
                edges.push((v, u, w));
            }
        }
    }
    FrontierGraph { nodes, edges, boundary_edges, cascade_fingerprint: c.fingerprint() }
}
