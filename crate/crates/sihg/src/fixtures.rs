//! Deterministic synthetic inputs: separable toy graphs for training checks
//! and a noisy binary channel for mutual-information estimation checks.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Arr;
use crate::graph::{Edge, SignedGraph};

/// Two 6-node all-positive cliques, every cross pair negative: 15 + 15
/// positive edges and 36 negative edges over 12 nodes.
pub fn cliques() -> SignedGraph {
    let mut edges = Vec::new();
    for block in 0..2usize {
        let base = block * 6;
        for i in 0..6 {
            for j in (i + 1)..6 {
                edges.push(Edge { src: base + i, dst: base + j, sign: 1 });
            }
        }
    }
    for i in 0..6 {
        for j in 6..12 {
            edges.push(Edge { src: i, dst: j, sign: -1 });
        }
    }
    SignedGraph::from_edges(12, edges).expect("static fixture")
}

/// Four disjoint triangles covering every sign multiset:
/// (+,+,+), (+,+,-), (+,-,-), (-,-,-).
pub fn triangles() -> SignedGraph {
    let patterns: [[i8; 3]; 4] = [[1, 1, 1], [1, 1, -1], [1, -1, -1], [-1, -1, -1]];
    let mut edges = Vec::new();
    for (t, signs) in patterns.iter().enumerate() {
        let base = t * 3;
        let pairs = [(0, 1), (1, 2), (2, 0)];
        for (e, &(a, b)) in pairs.iter().enumerate() {
            edges.push(Edge { src: base + a, dst: base + b, sign: signs[e] });
        }
    }
    SignedGraph::from_edges(12, edges).expect("static fixture")
}

/// Binary symmetric channel: the sign s is a fair coin flip in {-1, +1}, the
/// channel output y flips s with probability eps, and the feature encodes y
/// as `y * mu` plus a small fixed jitter. The true mutual information between
/// feature and sign is `ln 2 - H(eps)` nats, approaching ln 2 as eps -> 0.
pub fn channel(n: usize, dim: usize, eps: f64, seed: u64) -> (Arr, Arr) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = 1.0 / (dim as f64).sqrt();
    let mut feats = Array2::zeros((n, dim));
    let mut signs = Array2::zeros((n, 1));
    for r in 0..n {
        let s: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        signs[(r, 0)] = s;
        let y = if rng.gen_bool(eps) { -s } else { s };
        for c in 0..dim {
            let g: f64 = rng.sample(StandardNormal);
            feats[(r, c)] = y * mu + 0.01 * g;
        }
    }
    (feats, signs)
}

/// Features drawn independently of the signs; the true mutual information
/// is exactly zero.
pub fn independent_channel(n: usize, dim: usize, seed: u64) -> (Arr, Arr) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Array2::zeros((n, dim));
    let mut signs = Array2::zeros((n, 1));
    for r in 0..n {
        signs[(r, 0)] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for c in 0..dim {
            let g: f64 = rng.sample(StandardNormal);
            feats[(r, c)] = g;
        }
    }
    (feats, signs)
}
