//! Signed social network loading, validation, splitting, and neutral sampling.
//!
//! The directed edge list is kept verbatim as the set of labeled prediction
//! instances; neighbor lists used for aggregation are symmetrized and
//! deduplicated. Conflicting duplicate edges keep the last occurrence in
//! file order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One directed signed edge. `sign` is +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub sign: i8,
}

/// A signed network: directed labeled edges plus symmetrized neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedGraph {
    pub num_nodes: usize,
    /// Directed edges after (src, dst) deduplication, in file order.
    pub edges: Vec<Edge>,
    /// Symmetrized positive neighbor lists (aggregation view over all edges).
    pub pos_neighbors: Vec<Vec<usize>>,
    /// Symmetrized negative neighbor lists.
    pub neg_neighbors: Vec<Vec<usize>>,
    /// Self-loops dropped during load.
    pub dropped_self_loops: usize,
    /// Same-pair sign conflicts resolved by keeping the last occurrence.
    pub sign_conflicts: usize,
}

/// Symmetrized neighbor lists restricted to a subset of edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    pub pos: Vec<Vec<usize>>,
    pub neg: Vec<Vec<usize>>,
}

impl NeighborLists {
    /// Directed (i, j) pairs for every j in a neighbor list, grouped by i in
    /// ascending order. Used to drive attention over neighbor sets.
    pub fn pairs(lists: &[Vec<usize>]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, js) in lists.iter().enumerate() {
            for &j in js {
                out.push((i, j));
            }
        }
        out
    }
}

fn build_neighbor_lists(
    num_nodes: usize,
    edges: impl Iterator<Item = Edge>,
) -> (NeighborLists, usize) {
    // Unordered pair -> sign; later occurrences overwrite earlier ones.
    let mut pair_sign: HashMap<(usize, usize), i8> = HashMap::new();
    let mut conflicts = 0usize;
    for e in edges {
        let key = (e.src.min(e.dst), e.src.max(e.dst));
        if let Some(prev) = pair_sign.insert(key, e.sign) {
            if prev != e.sign {
                conflicts += 1;
            }
        }
    }
    let mut pos = vec![Vec::new(); num_nodes];
    let mut neg = vec![Vec::new(); num_nodes];
    for (&(a, b), &s) in &pair_sign {
        let lists = if s > 0 { &mut pos } else { &mut neg };
        lists[a].push(b);
        lists[b].push(a);
    }
    for l in pos.iter_mut().chain(neg.iter_mut()) {
        l.sort_unstable();
    }
    (NeighborLists { pos, neg }, conflicts)
}

impl SignedGraph {
    /// Build a graph from raw directed edges with already-dense node ids.
    pub fn from_edges(num_nodes: usize, raw: Vec<Edge>) -> Result<Self> {
        let mut dropped = 0usize;
        let mut by_pair: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::with_capacity(raw.len());
        for e in raw {
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::Contract(format!(
                    "edge ({}, {}) references node >= num_nodes {}",
                    e.src, e.dst, num_nodes
                )));
            }
            if e.sign != 1 && e.sign != -1 {
                return Err(Error::Contract(format!("edge sign {} not in {{-1, 1}}", e.sign)));
            }
            if e.src == e.dst {
                dropped += 1;
                continue;
            }
            // Duplicate (src, dst): last occurrence wins, position preserved.
            match by_pair.get(&(e.src, e.dst)) {
                Some(&idx) => edges[idx] = e,
                None => {
                    by_pair.insert((e.src, e.dst), edges.len());
                    edges.push(e);
                }
            }
        }
        let (lists, conflicts) = build_neighbor_lists(num_nodes, edges.iter().copied());
        Ok(SignedGraph {
            num_nodes,
            edges,
            pos_neighbors: lists.pos,
            neg_neighbors: lists.neg,
            dropped_self_loops: dropped,
            sign_conflicts: conflicts,
        })
    }

    /// Per-edge labels: 1.0 for a positive link, 0.0 for a negative one.
    pub fn labels(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| if e.sign > 0 { 1.0 } else { 0.0 })
            .collect()
    }

    /// Symmetrized neighbor lists built from a subset of the directed edges.
    /// Training aggregation passes the train indices here so test edges never
    /// leak into message passing.
    pub fn neighbor_view(&self, edge_indices: &[usize]) -> NeighborLists {
        let (lists, _) = build_neighbor_lists(
            self.num_nodes,
            edge_indices.iter().map(|&i| self.edges[i]),
        );
        lists
    }

    /// Serialize back to edge-list text (tab separated, sign as weight).
    pub fn to_edge_list_string(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            let _ = writeln!(s, "{}\t{}\t{}", e.src, e.dst, e.sign);
        }
        s
    }

    pub fn num_pos_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.sign > 0).count()
    }
}

fn detect_separator(line: &str) -> char {
    if line.contains(',') {
        ','
    } else if line.contains('\t') {
        '\t'
    } else {
        ' '
    }
}

/// Load a signed edge list. Lines are `src<sep>dst<sep>weight` with the
/// separator auto-detected among comma/tab/space; `#` and `%` lines are
/// skipped. Weights collapse to their sign; node ids are densely re-indexed
/// from zero in first-appearance order.
pub fn load_edge_list(path: &Path) -> Result<SignedGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_edge_list(&text)
}

/// Parse edge-list text. Separated from [`load_edge_list`] so it can be
/// exercised directly by tests and fuzzing.
pub fn parse_edge_list(text: &str) -> Result<SignedGraph> {
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let mut raw: Vec<Edge> = Vec::new();
    let dense = |orig: u64, ids: &mut HashMap<u64, usize>| -> usize {
        let next = ids.len();
        *ids.entry(orig).or_insert(next)
    };
    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let sep = detect_separator(trimmed);
        let mut fields = trimmed
            .split(sep)
            .map(str::trim)
            .filter(|f| !f.is_empty());
        let parse_err = |msg: &str| Error::Parse {
            line: line_num,
            msg: msg.to_string(),
        };
        let src: u64 = fields
            .next()
            .ok_or_else(|| parse_err("missing src"))?
            .parse()
            .map_err(|_| parse_err("src is not an integer"))?;
        let dst: u64 = fields
            .next()
            .ok_or_else(|| parse_err("missing dst"))?
            .parse()
            .map_err(|_| parse_err("dst is not an integer"))?;
        let weight: f64 = fields
            .next()
            .ok_or_else(|| parse_err("missing weight"))?
            .parse()
            .map_err(|_| parse_err("weight is not a number"))?;
        if weight == 0.0 || !weight.is_finite() {
            return Err(Error::Parse {
                line: line_num,
                msg: format!("weight {weight} has no sign"),
            });
        }
        let s = dense(src, &mut ids);
        let d = dense(dst, &mut ids);
        raw.push(Edge {
            src: s,
            dst: d,
            sign: if weight > 0.0 { 1 } else { -1 },
        });
    }
    SignedGraph::from_edges(ids.len(), raw)
}

/// Train/test assignment of directed edge indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub fraction: f64,
    pub test_edge_indices: Vec<usize>,
}

impl SplitPlan {
    /// Reject plans that do not fit the graph they are applied to.
    pub fn validate(&self, num_edges: usize) -> Result<()> {
        let mut in_test = vec![false; num_edges];
        for &i in &self.test_edge_indices {
            if i >= num_edges {
                return Err(Error::Contract(format!(
                    "split plan references edge {i} but the graph has {num_edges} edges"
                )));
            }
            if in_test[i] {
                return Err(Error::Contract(format!(
                    "split plan lists edge {i} twice"
                )));
            }
            in_test[i] = true;
        }
        Ok(())
    }

    pub fn train_edge_indices(&self, num_edges: usize) -> Vec<usize> {
        let mut in_test = vec![false; num_edges];
        for &i in &self.test_edge_indices {
            if i < num_edges {
                in_test[i] = true;
            }
        }
        (0..num_edges).filter(|&i| !in_test[i]).collect()
    }
}

/// Deterministic stratified split: |test| = floor(fraction * |edges|), with
/// both signs represented whenever fraction * |class| >= 1.
pub fn split(graph: &SignedGraph, fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x73706c69); // "spli"
    let mut pos_idx: Vec<usize> = Vec::new();
    let mut neg_idx: Vec<usize> = Vec::new();
    for (i, e) in graph.edges.iter().enumerate() {
        if e.sign > 0 {
            pos_idx.push(i)
        } else {
            neg_idx.push(i)
        }
    }
    pos_idx.shuffle(&mut rng);
    neg_idx.shuffle(&mut rng);

    let target = (fraction * graph.edges.len() as f64).floor() as usize;
    let mut take_pos = (fraction * pos_idx.len() as f64).floor() as usize;
    let mut take_neg = (fraction * neg_idx.len() as f64).floor() as usize;
    // Top up to the exact target from the class with the larger remainder.
    while take_pos + take_neg < target {
        let rem_pos = fraction * pos_idx.len() as f64 - take_pos as f64;
        let rem_neg = fraction * neg_idx.len() as f64 - take_neg as f64;
        if (rem_pos >= rem_neg && take_pos < pos_idx.len()) || take_neg >= neg_idx.len() {
            take_pos += 1;
        } else {
            take_neg += 1;
        }
    }
    let mut test: Vec<usize> = pos_idx[..take_pos.min(pos_idx.len())]
        .iter()
        .chain(neg_idx[..take_neg.min(neg_idx.len())].iter())
        .copied()
        .collect();
    test.sort_unstable();
    Ok(SplitPlan {
        seed,
        fraction,
        test_edge_indices: test,
    })
}

/// Uniformly sample a node with no link to `anchor` (and not `anchor` itself).
pub fn sample_neutral<R: Rng>(
    graph: &SignedGraph,
    lists: &NeighborLists,
    anchor: usize,
    rng: &mut R,
) -> Result<usize> {
    let pos = &lists.pos[anchor];
    let neg = &lists.neg[anchor];
    let linked = pos.len() + neg.len(); // disjoint by invariant
    let eligible = graph.num_nodes.saturating_sub(1 + linked);
    if eligible == 0 {
        return Err(Error::Sampling(format!(
            "node {anchor} is linked to every other node"
        )));
    }
    let is_linked = |k: usize| {
        k == anchor || pos.binary_search(&k).is_ok() || neg.binary_search(&k).is_ok()
    };
    // Rejection sampling first; fall back to enumeration for dense anchors.
    for _ in 0..64 {
        let k = rng.gen_range(0..graph.num_nodes);
        if !is_linked(k) {
            return Ok(k);
        }
    }
    let pool: Vec<usize> = (0..graph.num_nodes).filter(|&k| !is_linked(k)).collect();
    Ok(pool[rng.gen_range(0..pool.len())])
}
