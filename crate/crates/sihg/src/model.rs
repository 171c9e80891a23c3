//! The SIHG network: hyperbolic lift of base embeddings, L layers of signed
//! attention aggregation over two branches, and the final concatenated node
//! representation.
//!
//! Weight matrices use the row-vector convention (`t_out = t_in * W`), so the
//! first aggregation matrix is `[2d, d]` and deeper ones `[3d, d]`; attention
//! vectors are `[2d, 1]` columns producing one scalar score per neighbor pair.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Arr, Tape, Var};
use crate::geometry::Geometry;
use crate::graph::NeighborLists;
use crate::mi::DiscParams;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Per-layer learnable weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wp: Arr,
    pub wn: Arr,
    pub ap: Arr,
    pub an: Arr,
    pub wpw: Arr,
    pub wnw: Arr,
}

/// All learnable state of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub x0: Arr,
    pub layers: Vec<LayerParams>,
    pub disc: DiscParams,
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Arr {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl ModelParams {
    /// Fresh parameters; `x0` starts at zero and is replaced by the SVD
    /// initializer before training.
    pub fn init<R: Rng>(num_nodes: usize, dim: usize, num_layers: usize, rng: &mut R) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { 2 * dim } else { 3 * dim };
                LayerParams {
                    wp: glorot(rng, in_dim, dim),
                    wn: glorot(rng, in_dim, dim),
                    ap: glorot(rng, 2 * dim, 1),
                    an: glorot(rng, 2 * dim, 1),
                    wpw: glorot(rng, dim, dim),
                    wnw: glorot(rng, dim, dim),
                }
            })
            .collect();
        ModelParams {
            dim,
            x0: Arr::zeros((num_nodes, dim)),
            layers,
            disc: DiscParams::init(4 * dim, rng),
        }
    }

    /// Stable (name, tensor) listing; defines the parameter order used by the
    /// optimizer, checkpoints, and gradient extraction.
    pub fn named(&self) -> Vec<(String, &Arr)> {
        let mut out: Vec<(String, &Arr)> = vec![("x0".into(), &self.x0)];
        for (l, lp) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.wp"), &lp.wp));
            out.push((format!("layer{l}.wn"), &lp.wn));
            out.push((format!("layer{l}.ap"), &lp.ap));
            out.push((format!("layer{l}.an"), &lp.an));
            out.push((format!("layer{l}.wpw"), &lp.wpw));
            out.push((format!("layer{l}.wnw"), &lp.wnw));
        }
        out.extend(self.disc.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Arr)> {
        let mut out: Vec<(String, &mut Arr)> = vec![("x0".into(), &mut self.x0)];
        for (l, lp) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.wp"), &mut lp.wp));
            out.push((format!("layer{l}.wn"), &mut lp.wn));
            out.push((format!("layer{l}.ap"), &mut lp.ap));
            out.push((format!("layer{l}.an"), &mut lp.an));
            out.push((format!("layer{l}.wpw"), &mut lp.wpw));
            out.push((format!("layer{l}.wnw"), &mut lp.wnw));
        }
        out.extend(self.disc.named_mut());
        out
    }
}

/// Tape handles for every parameter, in [`ModelParams::named`] order.
pub struct ParamVars {
    pub x0: Var,
    pub layers: Vec<LayerVars>,
    pub disc: crate::mi::DiscVars,
    /// Same order as `ModelParams::named`.
    pub ordered: Vec<Var>,
}

pub struct LayerVars {
    pub wp: Var,
    pub wn: Var,
    pub ap: Var,
    pub an: Var,
    pub wpw: Var,
    pub wnw: Var,
}

impl ModelParams {
    pub fn leaf_into(&self, t: &mut Tape) -> ParamVars {
        let mut ordered = Vec::new();
        let x0 = t.leaf(self.x0.clone());
        ordered.push(x0);
        let layers = self
            .layers
            .iter()
            .map(|lp| {
                let lv = LayerVars {
                    wp: t.leaf(lp.wp.clone()),
                    wn: t.leaf(lp.wn.clone()),
                    ap: t.leaf(lp.ap.clone()),
                    an: t.leaf(lp.an.clone()),
                    wpw: t.leaf(lp.wpw.clone()),
                    wnw: t.leaf(lp.wnw.clone()),
                };
                ordered.extend([lv.wp, lv.wn, lv.ap, lv.an, lv.wpw, lv.wnw]);
                lv
            })
            .collect();
        let disc = self.disc.leaf_into(t, &mut ordered);
        ParamVars {
            x0,
            layers,
            disc,
            ordered,
        }
    }
}

/// Flattened neighbor pairs driving attention and aggregation. Pairs are
/// grouped by source node in ascending order; the source id doubles as the
/// softmax segment id.
#[derive(Debug, Clone)]
pub struct EdgeSets {
    pub num_nodes: usize,
    pub pos_src: Rc<Vec<usize>>,
    pub pos_dst: Rc<Vec<usize>>,
    pub neg_src: Rc<Vec<usize>>,
    pub neg_dst: Rc<Vec<usize>>,
}

impl EdgeSets {
    pub fn from_lists(num_nodes: usize, lists: &NeighborLists) -> Self {
        let pos = NeighborLists::pairs(&lists.pos);
        let neg = NeighborLists::pairs(&lists.neg);
        EdgeSets {
            num_nodes,
            pos_src: Rc::new(pos.iter().map(|p| p.0).collect()),
            pos_dst: Rc::new(pos.iter().map(|p| p.1).collect()),
            neg_src: Rc::new(neg.iter().map(|p| p.0).collect()),
            neg_dst: Rc::new(neg.iter().map(|p| p.1).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    pub fn letter(&self) -> char {
        match self {
            Branch::Positive => 'P',
            Branch::Negative => 'N',
        }
    }
}

/// One attention weight column plus the pairs it scores.
pub struct AttentionBlock {
    pub layer: usize,
    pub branch: Branch,
    pub neighbor_sign: i8,
    pub weights: Var,
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
}

pub struct ForwardOut {
    /// Final node representations as points on the 2d manifold.
    pub z_points: Var,
    /// The same representations in the tangent space at the origin, `[N, 2d]`.
    pub z_tangent: Var,
    pub attention: Vec<AttentionBlock>,
}

/// Signed attention over one pair list: raw score
/// leaky_relu(a^T [proj_i(i), proj_j(j)]) normalized by the signed softmax
/// within each source node's neighbor set.
fn attention_weights(
    t: &mut Tape,
    proj_i: Var,
    proj_j: Var,
    a: Var,
    src: &Rc<Vec<usize>>,
    dst: &Rc<Vec<usize>>,
    num_nodes: usize,
) -> Var {
    let gi = t.gather_rows(proj_i, Rc::clone(src));
    let gj = t.gather_rows(proj_j, Rc::clone(dst));
    let cat = t.concat_cols(gi, gj);
    let raw = t.matmul(cat, a);
    let act = t.leaky_relu(raw, LEAKY_SLOPE);
    t.segment_signed_softmax(act, Rc::clone(src), num_nodes)
}

/// Weighted neighbor aggregate: sum_j w_ij * features[j] per source node.
fn aggregate(
    t: &mut Tape,
    features: Var,
    weights: Var,
    src: &Rc<Vec<usize>>,
    dst: &Rc<Vec<usize>>,
    num_nodes: usize,
) -> Var {
    let fj = t.gather_rows(features, Rc::clone(dst));
    let weighted = t.mul_col(fj, weights);
    t.scatter_add_rows(weighted, Rc::clone(src), num_nodes)
}

/// Constant mean-aggregation weights, used by the uniform-attention ablation.
fn uniform_weights(t: &mut Tape, src: &Rc<Vec<usize>>, num_nodes: usize) -> Var {
    let mut count = vec![0usize; num_nodes];
    for &s in src.iter() {
        count[s] += 1;
    }
    let w = Arr::from_shape_fn((src.len(), 1), |(r, _)| 1.0 / count[src[r]] as f64);
    t.leaf(w)
}

/// Full forward pass over every node.
pub fn forward(t: &mut Tape, pv: &ParamVars, edges: &EdgeSets, geo: Geometry) -> ForwardOut {
    forward_opts(t, pv, edges, geo, false)
}

/// Forward pass with the uniform-attention ablation switch: when set, every
/// learned attention weight is replaced with 1/|neighbor set|.
pub fn forward_opts(
    t: &mut Tape,
    pv: &ParamVars,
    edges: &EdgeSets,
    geo: Geometry,
    uniform_attention: bool,
) -> ForwardOut {
    let n = edges.num_nodes;
    let mut attention = Vec::new();
    let att = |t: &mut Tape, proj_i: Var, proj_j: Var, a: Var, src: &Rc<Vec<usize>>, dst: &Rc<Vec<usize>>| {
        if uniform_attention {
            uniform_weights(t, src, n)
        } else {
            attention_weights(t, proj_i, proj_j, a, src, dst, n)
        }
    };

    // lift base embeddings to the manifold
    let x_pts = geo.exp_origin(t, pv.x0);
    let t0 = geo.log_origin(t, x_pts);

    // first layer: both branches aggregate the lifted inputs
    let l0 = &pv.layers[0];
    let qp = t.matmul(t0, l0.wpw);
    let qn = t.matmul(t0, l0.wnw);
    let w_pos = att(t, qp, qp, l0.ap, &edges.pos_src, &edges.pos_dst);
    let w_neg = att(t, qn, qn, l0.an, &edges.neg_src, &edges.neg_dst);
    attention.push(AttentionBlock {
        layer: 1,
        branch: Branch::Positive,
        neighbor_sign: 1,
        weights: w_pos,
        src: Rc::clone(&edges.pos_src),
        dst: Rc::clone(&edges.pos_dst),
    });
    attention.push(AttentionBlock {
        layer: 1,
        branch: Branch::Negative,
        neighbor_sign: -1,
        weights: w_neg,
        src: Rc::clone(&edges.neg_src),
        dst: Rc::clone(&edges.neg_dst),
    });
    let agg_p = aggregate(t, t0, w_pos, &edges.pos_src, &edges.pos_dst, n);
    let agg_n = aggregate(t, t0, w_neg, &edges.neg_src, &edges.neg_dst, n);
    let cat_p = t.concat_cols(agg_p, t0);
    let cat_n = t.concat_cols(agg_n, t0);
    let mm_p = t.matmul(cat_p, l0.wp);
    let up = t.leaky_relu(mm_p, LEAKY_SLOPE);
    let mm_n = t.matmul(cat_n, l0.wn);
    let un = t.leaky_relu(mm_n, LEAKY_SLOPE);
    let mut hp = geo.exp_at(t, x_pts, up);
    let mut hn = geo.exp_at(t, x_pts, un);

    // deeper layers: balance-consistent cross-branch mixing
    for (li, lv) in pv.layers.iter().enumerate().skip(1) {
        let layer = li + 1;
        let tp = geo.log_origin(t, hp);
        let tn = geo.log_origin(t, hn);
        let qpp = t.matmul(tp, lv.wpw);
        let qnn = t.matmul(tn, lv.wnw);
        // four score variants
        let w_pp = att(t, qpp, qpp, lv.ap, &edges.pos_src, &edges.pos_dst);
        let w_nn = att(t, qnn, qnn, lv.an, &edges.neg_src, &edges.neg_dst);
        let w_pk = att(t, qnn, qpp, lv.ap, &edges.pos_src, &edges.pos_dst);
        let w_nk = att(t, qpp, qnn, lv.an, &edges.neg_src, &edges.neg_dst);
        attention.push(AttentionBlock {
            layer,
            branch: Branch::Positive,
            neighbor_sign: 1,
            weights: w_pp,
            src: Rc::clone(&edges.pos_src),
            dst: Rc::clone(&edges.pos_dst),
        });
        attention.push(AttentionBlock {
            layer,
            branch: Branch::Positive,
            neighbor_sign: -1,
            weights: w_nk,
            src: Rc::clone(&edges.neg_src),
            dst: Rc::clone(&edges.neg_dst),
        });
        attention.push(AttentionBlock {
            layer,
            branch: Branch::Negative,
            neighbor_sign: -1,
            weights: w_nn,
            src: Rc::clone(&edges.neg_src),
            dst: Rc::clone(&edges.neg_dst),
        });
        attention.push(AttentionBlock {
            layer,
            branch: Branch::Negative,
            neighbor_sign: 1,
            weights: w_pk,
            src: Rc::clone(&edges.pos_src),
            dst: Rc::clone(&edges.pos_dst),
        });
        // positive branch: positive neighbors' P features, negative neighbors' N features
        let agg_pp = aggregate(t, tp, w_pp, &edges.pos_src, &edges.pos_dst, n);
        let agg_pn = aggregate(t, tn, w_nk, &edges.neg_src, &edges.neg_dst, n);
        let hat_p = t.concat_cols(agg_pp, agg_pn);
        let cat_p = t.concat_cols(hat_p, tp);
        let mm_p = t.matmul(cat_p, lv.wp);
        let up = t.leaky_relu(mm_p, LEAKY_SLOPE);
        // negative branch mirrors it
        let agg_nn = aggregate(t, tn, w_nn, &edges.neg_src, &edges.neg_dst, n);
        let agg_np = aggregate(t, tp, w_pk, &edges.pos_src, &edges.pos_dst, n);
        let hat_n = t.concat_cols(agg_nn, agg_np);
        let cat_n = t.concat_cols(hat_n, tn);
        let mm_n = t.matmul(cat_n, lv.wn);
        let un = t.leaky_relu(mm_n, LEAKY_SLOPE);
        hp = geo.exp_at(t, hp, up);
        hn = geo.exp_at(t, hn, un);
    }

    // final representation: tangent concatenation re-lifted to a 2d manifold
    let tpl = geo.log_origin(t, hp);
    let tnl = geo.log_origin(t, hn);
    let z_tangent = t.concat_cols(tpl, tnl);
    let z_points = geo.exp_origin(t, z_tangent);
    ForwardOut {
        z_points,
        z_tangent,
        attention,
    }
}

/// One row of the exported signed attention map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionRow {
    pub layer: usize,
    pub branch: char,
    pub sign_of_neighbor: char,
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    /// Positive score read as structural balance (Fig-style convention).
    pub theory_label: &'static str,
    /// The opposite reading (positive score read as status).
    pub theory_label_alt: &'static str,
}

/// Materialize the attention map from a completed forward pass. The exported
/// values are exactly the weights used in that pass.
pub fn attention_rows(t: &Tape, out: &ForwardOut) -> Vec<AttentionRow> {
    let mut rows = Vec::new();
    for block in &out.attention {
        let w = t.value(block.weights);
        for (r, (&s, &d)) in block.src.iter().zip(block.dst.iter()).enumerate() {
            let weight = w[(r, 0)];
            let (label, alt) = if weight > 0.0 {
                ("balance", "status")
            } else {
                ("status", "balance")
            };
            rows.push(AttentionRow {
                layer: block.layer,
                branch: block.branch.letter(),
                sign_of_neighbor: if block.neighbor_sign > 0 { '+' } else { '-' },
                src: s,
                dst: d,
                weight,
                theory_label: label,
                theory_label_alt: alt,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryKind;
    use crate::graph::{Edge, SignedGraph};
    use crate::manifold::Hyperboloid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrow(x: &[f64], w: &Arr) -> Vec<f64> {
        assert_eq!(x.len(), w.nrows());
        (0..w.ncols())
            .map(|c| (0..w.nrows()).map(|r| x[r] * w[(r, c)]).sum())
            .collect()
    }

    fn leaky(v: Vec<f64>) -> Vec<f64> {
        v.into_iter()
            .map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
            .collect()
    }

    /// Per-pair signed softmax weights, computed pair by pair with loops.
    fn ref_attention(
        qi: &[Vec<f64>],
        qj: &[Vec<f64>],
        a: &Arr,
        src: &[usize],
        dst: &[usize],
        n: usize,
    ) -> Vec<f64> {
        let raw: Vec<f64> = src
            .iter()
            .zip(dst.iter())
            .map(|(&s, &d)| {
                let mut acc = 0.0;
                for (r, &q) in qi[s].iter().enumerate() {
                    acc += q * a[(r, 0)];
                }
                for (r, &q) in qj[d].iter().enumerate() {
                    acc += q * a[(qi[s].len() + r, 0)];
                }
                if acc > 0.0 {
                    acc
                } else {
                    LEAKY_SLOPE * acc
                }
            })
            .collect();
        let mut out = vec![0.0; raw.len()];
        for seg in 0..n {
            let idx: Vec<usize> = (0..raw.len()).filter(|&r| src[r] == seg).collect();
            if idx.is_empty() {
                continue;
            }
            let m = idx.iter().map(|&r| raw[r]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = idx.iter().map(|&r| (raw[r] - m).exp()).sum();
            for &r in &idx {
                let w = 2.0 * (raw[r] - m).exp() / z - 1.0;
                out[r] = w.clamp(-(1.0 - 1e-7), 1.0 - 1e-7);
            }
        }
        out
    }

    fn ref_aggregate(
        feats: &[Vec<f64>],
        w: &[f64],
        src: &[usize],
        dst: &[usize],
        n: usize,
        d: usize,
    ) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; n];
        for (r, (&s, &e)) in src.iter().zip(dst.iter()).enumerate() {
            for c in 0..d {
                out[s][c] += w[r] * feats[e][c];
            }
        }
        out
    }

    fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut v = a.to_vec();
        v.extend_from_slice(b);
        v
    }

    /// Straight-line per-node forward on the hyperboloid, using the scalar
    /// manifold routines and explicit loops. Returns the final tangent rows.
    fn ref_forward(params: &ModelParams, edges: &EdgeSets, k: f64) -> Vec<Vec<f64>> {
        let h = Hyperboloid::new(k).unwrap();
        let n = edges.num_nodes;
        let d = params.dim;
        let x_pts: Vec<Vec<f64>> = (0..n)
            .map(|i| h.exp_origin_spatial(&params.x0.row(i).to_vec()))
            .collect();
        let t0: Vec<Vec<f64>> = x_pts.iter().map(|x| h.log_origin_spatial(x)).collect();

        let step = |base: &[Vec<f64>], tan: &[Vec<f64>], u: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let _ = tan;
            base.iter()
                .zip(u.iter())
                .map(|(b, ui)| {
                    let mut full = vec![0.0; d + 1];
                    full[1..].copy_from_slice(ui);
                    let v = h.transport_from_origin(&full, b).unwrap();
                    h.exp_map(b, &v).unwrap()
                })
                .collect()
        };

        let l0 = &params.layers[0];
        let qp: Vec<Vec<f64>> = t0.iter().map(|t| matrow(t, &l0.wpw)).collect();
        let qn: Vec<Vec<f64>> = t0.iter().map(|t| matrow(t, &l0.wnw)).collect();
        let wp = ref_attention(&qp, &qp, &l0.ap, &edges.pos_src, &edges.pos_dst, n);
        let wn = ref_attention(&qn, &qn, &l0.an, &edges.neg_src, &edges.neg_dst, n);
        let ap = ref_aggregate(&t0, &wp, &edges.pos_src, &edges.pos_dst, n, d);
        let an = ref_aggregate(&t0, &wn, &edges.neg_src, &edges.neg_dst, n, d);
        let up: Vec<Vec<f64>> = (0..n)
            .map(|i| leaky(matrow(&cat(&ap[i], &t0[i]), &l0.wp)))
            .collect();
        let un: Vec<Vec<f64>> = (0..n)
            .map(|i| leaky(matrow(&cat(&an[i], &t0[i]), &l0.wn)))
            .collect();
        let mut hp = step(&x_pts, &t0, &up);
        let mut hn = step(&x_pts, &t0, &un);

        for lv in params.layers.iter().skip(1) {
            let tp: Vec<Vec<f64>> = hp.iter().map(|x| h.log_origin_spatial(x)).collect();
            let tn: Vec<Vec<f64>> = hn.iter().map(|x| h.log_origin_spatial(x)).collect();
            let qpp: Vec<Vec<f64>> = tp.iter().map(|t| matrow(t, &lv.wpw)).collect();
            let qnn: Vec<Vec<f64>> = tn.iter().map(|t| matrow(t, &lv.wnw)).collect();
            let w_pp = ref_attention(&qpp, &qpp, &lv.ap, &edges.pos_src, &edges.pos_dst, n);
            let w_nn = ref_attention(&qnn, &qnn, &lv.an, &edges.neg_src, &edges.neg_dst, n);
            let w_pk = ref_attention(&qnn, &qpp, &lv.ap, &edges.pos_src, &edges.pos_dst, n);
            let w_nk = ref_attention(&qpp, &qnn, &lv.an, &edges.neg_src, &edges.neg_dst, n);
            let agg_pp = ref_aggregate(&tp, &w_pp, &edges.pos_src, &edges.pos_dst, n, d);
            let agg_pn = ref_aggregate(&tn, &w_nk, &edges.neg_src, &edges.neg_dst, n, d);
            let agg_nn = ref_aggregate(&tn, &w_nn, &edges.neg_src, &edges.neg_dst, n, d);
            let agg_np = ref_aggregate(&tp, &w_pk, &edges.pos_src, &edges.pos_dst, n, d);
            let up: Vec<Vec<f64>> = (0..n)
                .map(|i| leaky(matrow(&cat(&cat(&agg_pp[i], &agg_pn[i]), &tp[i]), &lv.wp)))
                .collect();
            let un: Vec<Vec<f64>> = (0..n)
                .map(|i| leaky(matrow(&cat(&cat(&agg_nn[i], &agg_np[i]), &tn[i]), &lv.wn)))
                .collect();
            hp = step(&hp, &tp, &up);
            hn = step(&hn, &tn, &un);
        }

        hp.iter()
            .zip(hn.iter())
            .map(|(p, q)| cat(&h.log_origin_spatial(p), &h.log_origin_spatial(q)))
            .collect()
    }

    fn toy_edges() -> (SignedGraph, EdgeSets) {
        let edges = vec![
            Edge { src: 0, dst: 1, sign: 1 },
            Edge { src: 1, dst: 2, sign: 1 },
            Edge { src: 2, dst: 3, sign: -1 },
            Edge { src: 3, dst: 4, sign: 1 },
            Edge { src: 4, dst: 5, sign: -1 },
            Edge { src: 0, dst: 5, sign: -1 },
            Edge { src: 1, dst: 4, sign: 1 },
        ];
        let g = SignedGraph::from_edges(6, edges).unwrap();
        let lists = NeighborLists {
            pos: g.pos_neighbors.clone(),
            neg: g.neg_neighbors.clone(),
        };
        let es = EdgeSets::from_lists(6, &lists);
        (g, es)
    }

    fn toy_params(n: usize, d: usize, layers: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(n, d, layers, &mut rng);
        params.x0 = Array2::from_shape_fn((n, d), |_| rng.gen_range(-0.8..0.8));
        params
    }

    fn run_forward(params: &ModelParams, edges: &EdgeSets, geo: Geometry) -> (Tape, ForwardOut) {
        let mut t = Tape::new();
        let pv = params.leaf_into(&mut t);
        let out = forward(&mut t, &pv, edges, geo);
        (t, out)
    }

    #[test]
    fn forward_matches_per_node_reference() {
        let (_, es) = toy_edges();
        let params = toy_params(6, 3, 2, 42);
        let geo = Geometry::new(GeometryKind::Hyperboloid, 1.0);
        let (t, out) = run_forward(&params, &es, geo);
        let got = t.value(out.z_tangent);
        let want = ref_forward(&params, &es, 1.0);
        for i in 0..6 {
            for c in 0..6 {
                assert!(
                    (got[(i, c)] - want[i][c]).abs() < 1e-8,
                    "node {i} col {c}: {} vs {}",
                    got[(i, c)],
                    want[i][c]
                );
            }
        }
    }

    #[test]
    fn forward_matches_reference_three_layers() {
        let (_, es) = toy_edges();
        let params = toy_params(6, 4, 3, 7);
        let geo = Geometry::new(GeometryKind::Hyperboloid, 1.0);
        let (t, out) = run_forward(&params, &es, geo);
        let got = t.value(out.z_tangent);
        let want = ref_forward(&params, &es, 1.0);
        for i in 0..6 {
            for c in 0..8 {
                assert!(
                    (got[(i, c)] - want[i][c]).abs() < 1e-8,
                    "node {i} col {c}: {} vs {}",
                    got[(i, c)],
                    want[i][c]
                );
            }
        }
    }

    #[test]
    fn zero_weights_keep_nodes_at_their_lift() {
        let (_, es) = toy_edges();
        let mut params = toy_params(6, 3, 2, 3);
        for lp in &mut params.layers {
            lp.wp.fill(0.0);
            lp.wn.fill(0.0);
        }
        let geo = Geometry::new(GeometryKind::Hyperboloid, 1.0);
        let (t, out) = run_forward(&params, &es, geo);
        let got = t.value(out.z_tangent);
        // every update tangent is zero, so both branches stay at the lifted
        // point and the final tangent is [t0, t0]
        let h = Hyperboloid::new(1.0).unwrap();
        for i in 0..6 {
            let x = h.exp_origin_spatial(&params.x0.row(i).to_vec());
            let t0 = h.log_origin_spatial(&x);
            for c in 0..3 {
                assert!((got[(i, c)] - t0[c]).abs() < 1e-9);
                assert!((got[(i, 3 + c)] - t0[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_weights_are_bounded_and_normalized() {
        let (_, es) = toy_edges();
        let params = toy_params(6, 3, 3, 11);
        let geo = Geometry::new(GeometryKind::Hyperboloid, 1.0);
        let (t, out) = run_forward(&params, &es, geo);
        for block in &out.attention {
            let w = t.value(block.weights);
            let mut sums = vec![(0.0, 0usize); es.num_nodes];
            for (r, &s) in block.src.iter().enumerate() {
                let wv = w[(r, 0)];
                assert!(wv > -1.0 && wv < 1.0, "weight {wv} out of range");
                sums[s].0 += (wv + 1.0) / 2.0;
                sums[s].1 += 1;
            }
            for (sum, count) in sums {
                if count > 0 {
                    assert!((sum - 1.0).abs() < 1e-6, "segment sum {sum}");
                }
            }
        }
    }

    #[test]
    fn forward_is_equivariant_under_node_relabeling() {
        let (_, es) = toy_edges();
        let params = toy_params(6, 3, 2, 19);
        let geo = Geometry::new(GeometryKind::Hyperboloid, 1.0);
        let (t, out) = run_forward(&params, &es, geo);
        let base = t.value(out.z_tangent);

        let perm = [3usize, 0, 5, 1, 4, 2];
        let edges = vec![
            Edge { src: perm[0], dst: perm[1], sign: 1 },
            Edge { src: perm[1], dst: perm[2], sign: 1 },
            Edge { src: perm[2], dst: perm[3], sign: -1 },
            Edge { src: perm[3], dst: perm[4], sign: 1 },
            Edge { src: perm[4], dst: perm[5], sign: -1 },
            Edge { src: perm[0], dst: perm[5], sign: -1 },
            Edge { src: perm[1], dst: perm[4], sign: 1 },
        ];
        let g = SignedGraph::from_edges(6, edges).unwrap();
        let lists = NeighborLists {
            pos: g.pos_neighbors.clone(),
            neg: g.neg_neighbors.clone(),
        };
        let es2 = EdgeSets::from_lists(6, &lists);
        let mut p2 = params.clone();
        for i in 0..6 {
            for c in 0..3 {
                p2.x0[(perm[i], c)] = params.x0[(i, c)];
            }
        }
        let (t2, out2) = run_forward(&p2, &es2, geo);
        let permuted = t2.value(out2.z_tangent);
        for i in 0..6 {
            for c in 0..6 {
                assert!(
                    (base[(i, c)] - permuted[(perm[i], c)]).abs() < 1e-9,
                    "node {i} col {c}"
                );
            }
        }
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        let (_, es) = toy_edges();
        let params = toy_params(6, 3, 2, 23);
        let geo = Geometry::new(GeometryKind::Hyperboloid, 1.0);

        let loss_of = |p: &ModelParams| -> f64 {
            let mut t = Tape::new();
            let pv = p.leaf_into(&mut t);
            let out = forward(&mut t, &pv, &es, geo);
            let sq = t.square(out.z_tangent);
            let l = t.sum_all(sq);
            t.value(l)[(0, 0)]
        };

        let mut t = Tape::new();
        let pv = params.leaf_into(&mut t);
        let out = forward(&mut t, &pv, &es, geo);
        let sq = t.square(out.z_tangent);
        let l = t.sum_all(sq);
        let grads = t.backward(l).unwrap();

        let names = params.named();
        // x0 and every distinct weight kind in both layers
        let picks = [0usize, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];
        for &pi in &picks {
            if pi >= pv.ordered.len() || names[pi].0.starts_with("disc") {
                continue;
            }
            let var = pv.ordered[pi];
            let shape = names[pi].1.raw_dim();
            let g = grads[var.0]
                .clone()
                .unwrap_or_else(|| Arr::zeros(shape.clone()));
            let probes = [(0usize, 0usize), (shape[0] / 2, shape[1] / 2)];
            for &(r, c) in &probes {
                let h = 1e-5;
                let mut plus = params.clone();
                plus.named_mut()[pi].1[(r, c)] += h;
                let mut minus = params.clone();
                minus.named_mut()[pi].1[(r, c)] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let ad = g[(r, c)];
                let denom = fd.abs().max(ad.abs()).max(1e-6);
                assert!(
                    ((fd - ad) / denom).abs() < 1e-4,
                    "param {} entry ({r},{c}): fd {fd} ad {ad}",
                    names[pi].0
                );
            }
        }
    }
}
