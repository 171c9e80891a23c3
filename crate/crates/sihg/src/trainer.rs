//! Training loop: SVD-initialized embeddings, full-batch Adam with weight
//! decay and cosine-annealed learning rate, periodic evaluation, best-AUC
//! model selection, and JSON checkpointing.

use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Arr, Tape};
use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind};
use crate::graph::{sample_neutral, SignedGraph, SplitPlan};
use crate::mi;
use crate::model::{attention_rows, forward_opts, AttentionRow, EdgeSets, ModelParams};
use crate::objective::{
    classification_loss, edge_probabilities, evaluate, hinge_rank_loss, total_loss, DecoderParams,
    EvalReport, LossWeights, RankBatch,
};
use crate::svd::init_embeddings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub radius: f64,
    pub temp: f64,
    pub curvature: f64,
    pub seed: u64,
    pub model: GeometryKind,
    pub split_fraction: f64,
    pub eval_every: usize,
    pub svd_iters: usize,
    /// Uniform attention ablation: every neighbor weight forced to 1/|set|.
    pub uniform_attention: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            layers: 3,
            epochs: 800,
            lr: 1e-2,
            weight_decay: 1e-5,
            alpha: 1.0,
            beta: 0.83,
            gamma: 0.5,
            radius: 2.0,
            temp: 1.0,
            curvature: 1.0,
            seed: 42,
            model: GeometryKind::Hyperboloid,
            split_fraction: 0.2,
            eval_every: 10,
            svd_iters: 30,
            uniform_attention: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.epochs == 0 {
            return Err(Error::Config("dim, layers, and epochs must be positive".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("curvature", self.curvature),
            ("temp", self.temp),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.model, self.curvature)
    }

    pub fn decoder(&self) -> Result<DecoderParams> {
        DecoderParams::new(self.radius, self.temp)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }
}

/// FNV-1a hash of the serialized config; stamped into checkpoints and reports
/// so artifacts from different configurations cannot be mixed up silently.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Cosine annealing: `base_lr * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    let frac = step as f64 / total_steps.max(1) as f64;
    base_lr * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Arr>,
    pub v: Vec<Arr>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<Arr> = params
            .named()
            .iter()
            .map(|(_, a)| Arr::zeros(a.raw_dim()))
            .collect();
        AdamState { step: 0, m: shapes.clone(), v: shapes }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update over every parameter, with L2 applied as
/// `grad += weight_decay * param`. `grads` must align with
/// [`ModelParams::named`] order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Arr],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut named = params.named_mut();
    if grads.len() != named.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            named.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);
    for (i, (name, p)) in named.iter_mut().enumerate() {
        if grads[i].iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
        }
        let g = &grads[i] + &(p.view().to_owned() * weight_decay);
        state.m[i] = &state.m[i] * BETA1 + &(&g * (1.0 - BETA1));
        state.v[i] = &state.v[i] * BETA2 + &(g.mapv(|x| x * x) * (1.0 - BETA2));
        let m_hat = &state.m[i] / bc1;
        let v_hat = &state.v[i] / bc2;
        **p -= &(m_hat / (v_hat.mapv(f64::sqrt) + ADAM_EPS) * lr);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub cls: f64,
    pub pos: f64,
    pub neg: f64,
    pub mim: f64,
    pub skipped_neutrals: usize,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Number of completed epochs; resuming starts here.
    pub epoch: usize,
    pub params: ModelParams,
    pub opt: AdamState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_params: Option<ModelParams>,
    pub best_report: Option<EvalReport>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
    pub attention: Vec<AttentionRow>,
}

fn stream_rng(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    let mixed = seed ^ stream ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15);
    ChaCha8Rng::seed_from_u64(mixed)
}

const STREAM_INIT: u64 = 0x696e_6974; // "init"
const STREAM_NEUTRAL: u64 = 0x6e65_7574; // "neut"
const STREAM_PERM: u64 = 0x7065_726d; // "perm"

struct EpochData {
    edge_sets: EdgeSets,
    train_src: Rc<Vec<usize>>,
    train_dst: Rc<Vec<usize>>,
    train_labels: Arr,
    train_signs: Arr,
    pos_pairs: Vec<(usize, usize)>,
    neg_pairs: Vec<(usize, usize)>,
    test_src: Rc<Vec<usize>>,
    test_dst: Rc<Vec<usize>>,
    test_labels: Vec<f64>,
    agg_lists: crate::graph::NeighborLists,
}

fn prepare(graph: &SignedGraph, split: &SplitPlan) -> Result<EpochData> {
    split.validate(graph.edges.len())?;
    let train_idx = split.train_edge_indices(graph.edges.len());
    if train_idx.is_empty() {
        return Err(Error::Contract("split leaves no training edges".into()));
    }
    let agg_lists = graph.neighbor_view(&train_idx);
    let edge_sets = EdgeSets::from_lists(graph.num_nodes, &agg_lists);
    let labels = graph.labels();
    let train_src: Vec<usize> = train_idx.iter().map(|&i| graph.edges[i].src).collect();
    let train_dst: Vec<usize> = train_idx.iter().map(|&i| graph.edges[i].dst).collect();
    let train_labels = Array2::from_shape_fn((train_idx.len(), 1), |(r, _)| labels[train_idx[r]]);
    let train_signs = train_labels.mapv(|y| 2.0 * y - 1.0);
    let mut pos_pairs = Vec::new();
    let mut neg_pairs = Vec::new();
    for &i in &train_idx {
        let e = graph.edges[i];
        if e.sign > 0 {
            pos_pairs.push((e.src, e.dst));
        } else {
            neg_pairs.push((e.src, e.dst));
        }
    }
    let test_src: Vec<usize> = split.test_edge_indices.iter().map(|&i| graph.edges[i].src).collect();
    let test_dst: Vec<usize> = split.test_edge_indices.iter().map(|&i| graph.edges[i].dst).collect();
    let test_labels: Vec<f64> = split.test_edge_indices.iter().map(|&i| labels[i]).collect();
    Ok(EpochData {
        edge_sets,
        train_src: Rc::new(train_src),
        train_dst: Rc::new(train_dst),
        train_labels,
        train_signs,
        pos_pairs,
        neg_pairs,
        test_src: Rc::new(test_src),
        test_dst: Rc::new(test_dst),
        test_labels,
        agg_lists,
    })
}

fn rank_batch<R: Rng>(
    graph: &SignedGraph,
    lists: &crate::graph::NeighborLists,
    pairs: &[(usize, usize)],
    rng: &mut R,
) -> RankBatch {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut neutral = Vec::new();
    let mut skipped = 0;
    for &(i, j) in pairs {
        match sample_neutral(graph, lists, i, rng) {
            Ok(k) => {
                src.push(i);
                dst.push(j);
                neutral.push(k);
            }
            Err(_) => skipped += 1,
        }
    }
    RankBatch {
        src: Rc::new(src),
        dst: Rc::new(dst),
        neutral: Rc::new(neutral),
        skipped,
    }
}

/// Test-set metrics for a parameter snapshot.
pub fn evaluate_params(
    graph: &SignedGraph,
    split: &SplitPlan,
    cfg: &TrainConfig,
    params: &ModelParams,
) -> Result<EvalReport> {
    let data = prepare(graph, split)?;
    let geo = cfg.geometry();
    let dec = cfg.decoder()?;
    let mut t = Tape::new();
    let pv = params.leaf_into(&mut t);
    let out = forward_opts(&mut t, &pv, &data.edge_sets, geo, cfg.uniform_attention);
    let probs = edge_probabilities(&mut t, geo, out.z_points, &data.test_src, &data.test_dst, dec);
    let scores = t.value(probs).column(0).to_vec();
    evaluate(&scores, &data.test_labels, 0.5)
}

pub fn train(graph: &SignedGraph, split: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(graph, split, cfg, None, None, None)
}

/// Full training run. `resume` continues a prior run bit-exactly; on a
/// non-finite loss or gradient the last state is dumped to `abort_path`
/// (when given) before the error is returned. `stop_after` caps the number
/// of completed epochs, producing a resumable mid-run checkpoint.
pub fn train_with(
    graph: &SignedGraph,
    split: &SplitPlan,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    abort_path: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let geo = cfg.geometry();
    let dec = cfg.decoder()?;
    let weights = cfg.weights();
    let hash = config_hash(cfg);
    let data = prepare(graph, split)?;

    let (mut params, mut opt, mut history, start_epoch, mut best) = match resume {
        Some(ck) => {
            if ck.config_hash != hash {
                return Err(Error::State(format!(
                    "checkpoint config hash {} does not match current config {hash}",
                    ck.config_hash
                )));
            }
            let best = ck
                .best_epoch
                .and_then(|e| ck.best_params.clone().map(|p| (e, p, ck.best_report.unwrap())));
            (ck.params, ck.opt, ck.history, ck.epoch, best)
        }
        None => {
            let mut init_rng = stream_rng(cfg.seed, STREAM_INIT, 0);
            let mut params = ModelParams::init(graph.num_nodes, cfg.dim, cfg.layers, &mut init_rng);
            params.x0 = init_embeddings(graph, cfg.dim, cfg.svd_iters, cfg.seed ^ STREAM_INIT)?;
            let opt = AdamState::new(&params);
            (params, opt, Vec::new(), 0, None)
        }
    };

    let dump = |params: &ModelParams, opt: &AdamState, history: &[EpochRecord], epoch: usize| {
        if let Some(path) = abort_path {
            let ck = Checkpoint {
                config: cfg.clone(),
                config_hash: hash.clone(),
                epoch,
                params: params.clone(),
                opt: opt.clone(),
                history: history.to_vec(),
                best_epoch: None,
                best_params: None,
                best_report: None,
            };
            let _ = ck.save(path);
        }
    };

    let end_epoch = stop_after.map(|s| s.min(cfg.epochs)).unwrap_or(cfg.epochs);
    for epoch in start_epoch..end_epoch {
        let mut neutral_rng = stream_rng(cfg.seed, STREAM_NEUTRAL, epoch);
        let mut perm_rng = stream_rng(cfg.seed, STREAM_PERM, epoch);

        let pos_batch = rank_batch(graph, &data.agg_lists, &data.pos_pairs, &mut neutral_rng);
        let neg_batch = rank_batch(graph, &data.agg_lists, &data.neg_pairs, &mut neutral_rng);
        let skipped = pos_batch.skipped + neg_batch.skipped;

        // marginal sign column for the MI term: a fresh permutation per epoch
        let e_train = data.train_signs.nrows();
        let mut perm: Vec<usize> = (0..e_train).collect();
        for i in (1..e_train).rev() {
            perm.swap(i, perm_rng.gen_range(0..=i));
        }
        let signs_marg = Array2::from_shape_fn((e_train, 1), |(r, _)| data.train_signs[(perm[r], 0)]);

        let mut t = Tape::new();
        let pv = params.leaf_into(&mut t);
        let out = forward_opts(&mut t, &pv, &data.edge_sets, geo, cfg.uniform_attention);

        let probs = edge_probabilities(&mut t, geo, out.z_points, &data.train_src, &data.train_dst, dec);
        let cls = classification_loss(&mut t, probs, &data.train_labels)?;
        let pos = hinge_rank_loss(&mut t, geo, out.z_points, &pos_batch, false);
        let neg = hinge_rank_loss(&mut t, geo, out.z_points, &neg_batch, true);

        let zi = t.gather_rows(out.z_tangent, Rc::clone(&data.train_src));
        let zj = t.gather_rows(out.z_tangent, Rc::clone(&data.train_dst));
        let pair_feat = t.concat_cols(zi, zj);
        let sj = t.leaf(data.train_signs.clone());
        let sm = t.leaf(signs_marg);
        let mim = mi::mi_loss(&mut t, &pv.disc, pair_feat, sj, sm);

        let total = match total_loss(&mut t, cls, pos, neg, mim, weights) {
            Ok(v) => v,
            Err(e) => {
                dump(&params, &opt, &history, epoch);
                return Err(e);
            }
        };

        let mut record = EpochRecord {
            epoch,
            lr: cosine_lr(epoch, cfg.epochs, cfg.lr),
            total: t.value(total)[(0, 0)],
            cls: t.value(cls)[(0, 0)],
            pos: t.value(pos)[(0, 0)],
            neg: t.value(neg)[(0, 0)],
            mim: t.value(mim)[(0, 0)],
            skipped_neutrals: skipped,
            auc: None,
            f1: None,
        };

        let grad_slots = t.backward(total)?;
        let grads: Vec<Arr> = pv
            .ordered
            .iter()
            .enumerate()
            .map(|(i, var)| {
                grad_slots[var.0].clone().unwrap_or_else(|| {
                    Arr::zeros(params.named()[i].1.raw_dim())
                })
            })
            .collect();
        if let Err(e) = adam_step(&mut params, &grads, &mut opt, record.lr, cfg.weight_decay) {
            dump(&params, &opt, &history, epoch);
            return Err(e);
        }

        let last = epoch + 1 == end_epoch;
        if (epoch + 1) % cfg.eval_every == 0 || last {
            let report = evaluate_params(graph, split, cfg, &params)?;
            record.auc = Some(report.auc);
            record.f1 = Some(report.f1);
            let improved = best.as_ref().map(|(_, _, r)| report.auc > r.auc).unwrap_or(true);
            if improved {
                best = Some((epoch + 1, params.clone(), report));
            }
        }
        history.push(record);
    }

    let (best_epoch, best_params, best_report) = match best {
        Some(b) => b,
        None => {
            let report = evaluate_params(graph, split, cfg, &params)?;
            (end_epoch, params.clone(), report)
        }
    };

    // attention map from the selected model
    let mut t = Tape::new();
    let pv = best_params.leaf_into(&mut t);
    let out = forward_opts(&mut t, &pv, &data.edge_sets, geo, cfg.uniform_attention);
    let attention = attention_rows(&t, &out);

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        config_hash: hash,
        epoch: end_epoch,
        params,
        opt,
        history,
        best_epoch: Some(best_epoch),
        best_params: Some(best_params),
        best_report: Some(best_report),
    };
    Ok(TrainOutput { checkpoint, report: best_report, attention })
}
