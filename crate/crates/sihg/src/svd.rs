//! Base-embedding initialization: truncated SVD of the symmetrized signed
//! adjacency matrix (+1 friend, -1 foe, 0 absent) by randomized subspace
//! iteration, followed by row scaling so the largest row norm is 1.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Arr;
use crate::error::{Error, Result};
use crate::graph::SignedGraph;

/// Sparse symmetric signed adjacency, stored as (neighbor, sign) rows.
pub struct SignedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SignedAdjacency {
    pub fn from_graph(graph: &SignedGraph) -> Self {
        let n = graph.num_nodes;
        let mut rows = vec![Vec::new(); n];
        for (i, js) in graph.pos_neighbors.iter().enumerate() {
            for &j in js {
                rows[i].push((j, 1.0));
            }
        }
        for (i, js) in graph.neg_neighbors.iter().enumerate() {
            for &j in js {
                rows[i].push((j, -1.0));
            }
        }
        for r in &mut rows {
            r.sort_unstable_by_key(|&(j, _)| j);
        }
        SignedAdjacency { rows }
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    /// A * X for a dense [N, d] block.
    pub fn matmul(&self, x: &Arr) -> Arr {
        let d = x.ncols();
        let mut out = Arr::zeros((self.rows.len(), d));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, s) in row {
                for c in 0..d {
                    out[(i, c)] += s * x[(j, c)];
                }
            }
        }
        out
    }

    pub fn dense(&self) -> Arr {
        let n = self.rows.len();
        let mut a = Arr::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, s) in row {
                a[(i, j)] = s;
            }
        }
        a
    }
}

/// Modified Gram-Schmidt in place. Columns that vanish after projection are
/// replaced with canonical basis vectors so the block keeps full rank.
fn orthonormalize(q: &mut Arr) {
    let (n, d) = q.dim();
    for c in 0..d {
        for prev in 0..c {
            let dot: f64 = (0..n).map(|r| q[(r, prev)] * q[(r, c)]).sum();
            for r in 0..n {
                q[(r, c)] -= dot * q[(r, prev)];
            }
        }
        let norm: f64 = (0..n).map(|r| q[(r, c)] * q[(r, c)]).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for r in 0..n {
                q[(r, c)] /= norm;
            }
        } else {
            // degenerate direction; restart from e_{c mod n} and re-project
            for r in 0..n {
                q[(r, c)] = if r == c % n { 1.0 } else { 0.0 };
            }
            for prev in 0..c {
                let dot: f64 = (0..n).map(|r| q[(r, prev)] * q[(r, c)]).sum();
                for r in 0..n {
                    q[(r, c)] -= dot * q[(r, prev)];
                }
            }
            let norm: f64 = (0..n).map(|r| q[(r, c)] * q[(r, c)]).sum::<f64>().sqrt().max(1e-12);
            for r in 0..n {
                q[(r, c)] /= norm;
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns
/// (eigenvalues, eigenvector columns).
fn jacobi_eigh(t: &Arr) -> (Vec<f64>, Arr) {
    let d = t.nrows();
    let mut a = t.clone();
    let mut v = Array2::eye(d);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let tt = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (tt * tt + 1.0).sqrt();
                let s = tt * c;
                for r in 0..d {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = c * arp - s * arq;
                    a[(r, q)] = s * arp + c * arq;
                }
                for col in 0..d {
                    let apc = a[(p, col)];
                    let aqc = a[(q, col)];
                    a[(p, col)] = c * apc - s * aqc;
                    a[(q, col)] = s * apc + c * aqc;
                }
                for r in 0..d {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }
    let vals = (0..d).map(|i| a[(i, i)]).collect();
    (vals, v)
}

/// Truncated eigendecomposition of the symmetric signed adjacency: singular
/// values are |eigenvalue|, sorted descending, and `u` holds the matching
/// eigenvector columns.
pub fn truncated_svd(adj: &SignedAdjacency, d: usize, max_iter: usize, seed: u64) -> Result<(Arr, Vec<f64>)> {
    let n = adj.num_nodes();
    if d == 0 || d > n {
        return Err(Error::Config(format!(
            "embedding dimension {d} must lie in 1..={n} (num_nodes)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    orthonormalize(&mut q);
    for _ in 0..max_iter {
        q = adj.matmul(&q);
        orthonormalize(&mut q);
    }
    // Rayleigh-Ritz on the subspace
    let aq = adj.matmul(&q);
    let t = q.t().dot(&aq);
    let sym = (&t + &t.t()) / 2.0;
    let (vals, vecs) = jacobi_eigh(&sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].abs().partial_cmp(&vals[a].abs()).unwrap());
    let u_full = q.dot(&vecs);
    let mut u = Arr::zeros((n, d));
    let mut sigma = Vec::with_capacity(d);
    for (c, &oi) in order.iter().enumerate() {
        sigma.push(vals[oi]);
        for r in 0..n {
            u[(r, c)] = u_full[(r, oi)];
        }
    }
    Ok((u, sigma))
}

/// Initial base embeddings: each row is `u_i * lambda` over the top-d
/// spectral directions, rescaled so the largest row norm is exactly 1.
pub fn init_embeddings(graph: &SignedGraph, d: usize, max_iter: usize, seed: u64) -> Result<Arr> {
    let adj = SignedAdjacency::from_graph(graph);
    let (u, sigma) = truncated_svd(&adj, d, max_iter, seed)?;
    let mut emb = u;
    for c in 0..d {
        let s = sigma[c];
        for r in 0..emb.nrows() {
            emb[(r, c)] *= s;
        }
    }
    let max_norm = emb
        .axis_iter(Axis(0))
        .map(|row| row.dot(&row).sqrt())
        .fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        emb /= max_norm;
    }
    Ok(emb)
}
