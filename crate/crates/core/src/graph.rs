//! Requirement transition graph, candidate path enumeration, and node2vec
//! node embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Requirement;
use crate::nn::Matrix;

/// Directed graph over requirement nodes with adjacent-pair counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionGraph {
    nodes: Vec<Requirement>,
    counts: Vec<Vec<u64>>,
    index: BTreeMap<Requirement, usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<Requirement>,
    counts: Vec<Vec<u64>>,
}

impl TransitionGraph {
    /// Zero-count graph over `nodes` (in the given order).
    pub fn empty(nodes: Vec<Requirement>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, &n) in nodes.iter().enumerate() {
            if index.insert(n, i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate graph node `{n}`")));
            }
        }
        let n = nodes.len();
        Ok(TransitionGraph {
            nodes,
            counts: vec![vec![0; n]; n],
            index,
        })
    }

    /// Counts adjacent pairs over all sequences. Nodes are all 20 labels in
    /// registry order.
    pub fn build(sequences: &[Vec<Requirement>]) -> Self {
        let mut g = TransitionGraph::empty(Requirement::ALL.to_vec()).expect("distinct labels");
        for seq in sequences {
            for pair in seq.windows(2) {
                g.add_transition(pair[0], pair[1]);
            }
        }
        g
    }

    /// Like [`TransitionGraph::build`] but from raw label strings.
    pub fn build_from_labels<S: AsRef<str>>(sequences: &[Vec<S>]) -> Result<Self> {
        let parsed = sequences
            .iter()
            .enumerate()
            .map(|(i, seq)| {
                seq.iter()
                    .map(|l| {
                        l.as_ref()
                            .parse::<Requirement>()
                            .map_err(|_| Error::UnknownLabelInSequence {
                                sequence: i,
                                label: l.as_ref().to_string(),
                            })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransitionGraph::build(&parsed))
    }

    fn add_transition(&mut self, from: Requirement, to: Requirement) {
        let (i, j) = (self.index[&from], self.index[&to]);
        self.counts[i][j] += 1;
    }

    pub fn nodes(&self) -> &[Requirement] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, r: Requirement) -> Option<usize> {
        self.index.get(&r).copied()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn count(&self, from: Requirement, to: Requirement) -> u64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.counts.iter().flatten().filter(|&&c| c > 0).count()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Successor indices with positive counts, ascending.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.counts[i]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, _)| j)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphJson {
            nodes: self.nodes.clone(),
            counts: self.counts.clone(),
        })
        .expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(text)?;
        let n = raw.nodes.len();
        if raw.counts.len() != n || raw.counts.iter().any(|r| r.len() != n) {
            return Err(Error::Schema(format!("counts must be a {n}x{n} matrix")));
        }
        let mut g = TransitionGraph::empty(raw.nodes)?;
        g.counts = raw.counts;
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TransitionGraph::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// All simple paths along positive-count edges from the query's start
    /// node, in lexicographic order of node indices.
    pub fn enumerate_paths(&self, query: &PathQuery) -> Result<Vec<Vec<Requirement>>> {
        let start = query.start.unwrap_or(DEFAULT_START);
        let s = self
            .index_of(start)
            .ok_or_else(|| Error::InvalidInput(format!("start node `{start}` is not in the graph")))?;
        let mut out = Vec::new();
        if query.max_len == 0 || query.min_len > query.max_len {
            return Ok(out);
        }
        let mut path = vec![s];
        let mut on_path = vec![false; self.len()];
        on_path[s] = true;
        self.dfs(query, &mut path, &mut on_path, &mut out);
        Ok(out)
    }

    fn dfs(&self, query: &PathQuery, path: &mut Vec<usize>, on_path: &mut [bool], out: &mut Vec<Vec<Requirement>>) {
        let last = *path.last().expect("non-empty path");
        if path.len() >= query.min_len && (!query.require_terminal || self.nodes[last] == Requirement::Goodbye) {
            out.push(path.iter().map(|&i| self.nodes[i]).collect());
        }
        if path.len() == query.max_len {
            return;
        }
        let next: Vec<usize> = self.successors(last).filter(|&j| !on_path[j]).collect();
        for j in next {
            path.push(j);
            on_path[j] = true;
            self.dfs(query, path, on_path, out);
            on_path[j] = false;
            path.pop();
        }
    }
}

pub const DEFAULT_START: Requirement = Requirement::DailyGreetings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathQuery {
    /// `None` starts from [`DEFAULT_START`].
    pub start: Option<Requirement>,
    pub min_len: usize,
    pub max_len: usize,
    /// Keep only paths ending at `goodbye`.
    pub require_terminal: bool,
}

impl Default for PathQuery {
    fn default() -> Self {
        PathQuery {
            start: None,
            min_len: 3,
            max_len: 6,
            require_terminal: false,
        }
    }
}

impl PathQuery {
    pub fn from(start: Requirement) -> Self {
        PathQuery {
            start: Some(start),
            ..PathQuery::default()
        }
    }
}

/// First-order walk sampler: with p = q = 1 the node2vec bias vanishes and
/// each step picks a successor proportionally to its edge count.
#[derive(Debug, Clone)]
pub struct WalkSampler {
    /// Per node: (successor indices, cumulative counts).
    table: Vec<(Vec<usize>, Vec<u64>)>,
}

impl WalkSampler {
    pub fn new(graph: &TransitionGraph) -> Self {
        let table = (0..graph.len())
            .map(|i| {
                let mut succ = Vec::new();
                let mut cum = Vec::new();
                let mut acc = 0;
                for (j, &c) in graph.counts[i].iter().enumerate() {
                    if c > 0 {
                        acc += c;
                        succ.push(j);
                        cum.push(acc);
                    }
                }
                (succ, cum)
            })
            .collect();
        WalkSampler { table }
    }

    pub fn step<R: Rng>(&self, node: usize, rng: &mut R) -> Option<usize> {
        let (succ, cum) = &self.table[node];
        let total = *cum.last()?;
        let x = rng.gen_range(0..total);
        let k = cum.partition_point(|&c| c <= x);
        Some(succ[k])
    }

    pub fn walk<R: Rng>(&self, start: usize, len: usize, rng: &mut R) -> Vec<usize> {
        let mut w = vec![start];
        while w.len() < len {
            match self.step(*w.last().expect("non-empty"), rng) {
                Some(n) => w.push(n),
                None => break,
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub return_p: f64,
    pub inout_q: f64,
    pub walks_per_node: usize,
    pub walk_len: usize,
    pub neg_samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 100,
            window: 3,
            return_p: 1.0,
            inout_q: 1.0,
            walks_per_node: 10,
            walk_len: 20,
            neg_samples: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<Requirement, Vec<f64>>,
    /// Used when there is no previous requirement.
    pub null_vector: Vec<f64>,
}

impl NodeEmbeddingTable {
    /// Vector for `r`, or the null vector for `None` and unknown nodes.
    pub fn get(&self, r: Option<Requirement>) -> &[f64] {
        r.and_then(|r| self.vectors.get(&r)).unwrap_or(&self.null_vector)
    }

    pub fn zeros(dim: usize) -> Self {
        NodeEmbeddingTable {
            dim,
            vectors: Requirement::ALL.iter().map(|&r| (r, vec![0.0; dim])).collect(),
            null_vector: vec![0.0; dim],
        }
    }

    /// Rows in registry order followed by the null vector.
    pub fn to_matrix(&self) -> Matrix {
        let mut rows: Vec<Vec<f64>> = Requirement::ALL.iter().map(|r| self.get(Some(*r)).to_vec()).collect();
        rows.push(self.null_vector.clone());
        Matrix::from_rows(&rows)
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows != Requirement::COUNT + 1 {
            return Err(Error::Shape(format!(
                "embedding matrix needs {} rows, got {}",
                Requirement::COUNT + 1,
                m.rows
            )));
        }
        Ok(NodeEmbeddingTable {
            dim: m.cols,
            vectors: Requirement::ALL
                .iter()
                .map(|&r| (r, m.row(r.index()).to_vec()))
                .collect(),
            null_vector: m.row(Requirement::COUNT).to_vec(),
        })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// node2vec embeddings. Only `p = q = 1` is supported, where walks are
/// first-order and count-weighted.
pub fn embed_nodes(graph: &TransitionGraph, cfg: &EmbedConfig) -> Result<NodeEmbeddingTable> {
    if graph.edge_count() == 0 {
        return Err(Error::InvalidInput("cannot embed an edgeless graph".into()));
    }
    if cfg.return_p != 1.0 || cfg.inout_q != 1.0 {
        return Err(Error::InvalidInput("only return_p = inout_q = 1 is supported".into()));
    }
    if cfg.dim == 0 {
        return Err(Error::InvalidInput("embedding dim must be positive".into()));
    }
    let n = graph.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampler = WalkSampler::new(graph);

    let connected: Vec<bool> = (0..n)
        .map(|i| (0..n).any(|j| graph.counts[i][j] > 0 || graph.counts[j][i] > 0))
        .collect();
    let mut walks = Vec::new();
    for _ in 0..cfg.walks_per_node {
        let mut order: Vec<usize> = (0..n).filter(|&i| connected[i]).collect();
        order.shuffle(&mut rng);
        for s in order {
            let w = sampler.walk(s, cfg.walk_len, &mut rng);
            if w.len() > 1 {
                walks.push(w);
            }
        }
    }

    // Negative-sampling distribution: occurrence counts to the 3/4 power.
    let mut freq = vec![0.0f64; n];
    for w in &walks {
        for &v in w {
            freq[v] += 1.0;
        }
    }
    let mut neg_cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for f in &freq {
        acc += f.powf(0.75);
        neg_cum.push(acc);
    }

    let dim = cfg.dim;
    let scale = 0.5 / dim as f64;
    let mut w_in: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    let mut w_out = vec![vec![0.0; dim]; n];

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| {
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window).min(w.len() - 1);
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut seen = 0usize;
    let mut grad_in = vec![0.0; dim];

    for _ in 0..cfg.epochs {
        for w in &walks {
            for i in 0..w.len() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(w.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let lr = (cfg.lr * (1.0 - seen as f64 / total)).max(cfg.lr * 1e-4);
                    seen += 1;
                    let (center, context) = (w[i], w[j]);
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.neg_samples {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let x = rng.gen_range(0.0..acc);
                            let t = neg_cum.partition_point(|&c| c <= x).min(n - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let score: f64 = w_in[center].iter().zip(&w_out[target]).map(|(a, b)| a * b).sum();
                        let g = lr * (label - crate::nn::sigmoid(score));
                        for d in 0..dim {
                            grad_in[d] += g * w_out[target][d];
                            w_out[target][d] += g * w_in[center][d];
                        }
                    }
                    for d in 0..dim {
                        w_in[center][d] += grad_in[d];
                    }
                }
            }
        }
    }

    // Isolated nodes never appear in walks; give them random unit vectors.
    for i in 0..n {
        if !connected[i] {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            w_in[i] = v.into_iter().map(|x| x / norm).collect();
        }
    }

    Ok(NodeEmbeddingTable {
        dim,
        vectors: graph.nodes.iter().copied().zip(w_in).collect(),
        null_vector: vec![0.0; dim],
    })
}
