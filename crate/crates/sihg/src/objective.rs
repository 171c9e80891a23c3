//! Fermi-Dirac edge decoder, the training loss terms, and evaluation metrics
//! for signed link prediction.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Arr, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::Geometry;

pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub r: f64,
    pub t: f64,
}

impl DecoderParams {
    pub fn new(r: f64, t: f64) -> Result<Self> {
        if !(t > 0.0) || !r.is_finite() {
            return Err(Error::Config(format!("decoder needs finite r, t > 0 (got r={r}, t={t})")));
        }
        Ok(DecoderParams { r, t })
    }
}

impl Default for DecoderParams {
    fn default() -> Self {
        DecoderParams { r: 2.0, t: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 0.83, gamma: 0.5 }
    }
}

/// Per-edge link probabilities `sigmoid((r - Dist^2) / t)` for the row-aligned
/// endpoint lists. Output is `[E, 1]`.
pub fn edge_probabilities(
    t: &mut Tape,
    geo: Geometry,
    z: Var,
    src: &Rc<Vec<usize>>,
    dst: &Rc<Vec<usize>>,
    dec: DecoderParams,
) -> Var {
    let zi = t.gather_rows(z, Rc::clone(src));
    let zj = t.gather_rows(z, Rc::clone(dst));
    let d = geo.pair_dist(t, zi, zj);
    let d2 = t.square(d);
    let neg_d2 = t.neg(d2);
    let shifted = t.add_scalar(neg_d2, dec.r);
    let logits = t.scale(shifted, 1.0 / dec.t);
    t.sigmoid(logits)
}

/// Mean binary cross entropy over the labeled edges. `labels` holds 1.0 for
/// positive and 0.0 for negative edges, shape `[E, 1]`.
pub fn classification_loss(t: &mut Tape, probs: Var, labels: &Arr) -> Result<Var> {
    let e = t.value(probs).nrows();
    if e == 0 {
        return Err(Error::Contract("classification loss needs at least one labeled edge".into()));
    }
    if labels.nrows() != e || labels.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "labels are {}x{}, expected {e}x1",
            labels.nrows(),
            labels.ncols()
        )));
    }
    let p = t.clamp(probs, PROB_CLIP, 1.0 - PROB_CLIP);
    let y = t.leaf(labels.clone());
    let ln_p = t.ln(p);
    let neg_p = t.neg(p);
    let one_m_p = t.add_scalar(neg_p, 1.0);
    let ln_1mp = t.ln(one_m_p);
    let neg_y = t.neg(y);
    let one_m_y = t.add_scalar(neg_y, 1.0);
    let a = t.mul(y, ln_p);
    let b = t.mul(one_m_y, ln_1mp);
    let ll = t.add(a, b);
    let mean = t.mean_all(ll);
    Ok(t.neg(mean))
}

/// A ranking batch: anchors `src`, their signed partners `dst`, and one
/// neutral node per pair. Pairs whose neutral sampling failed are dropped
/// before this struct is built; `skipped` records how many.
#[derive(Debug, Clone)]
pub struct RankBatch {
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    pub neutral: Rc<Vec<usize>>,
    pub skipped: usize,
}

/// Mean hinge over a ranking batch. For positive pairs (`mirrored = false`)
/// the partner must sit closer than the neutral node:
/// `max(0, Dist(z_i, z_j) - Dist(z_i, z_k))`. For negative pairs
/// (`mirrored = true`) the inequality flips. Empty batches contribute zero.
pub fn hinge_rank_loss(
    t: &mut Tape,
    geo: Geometry,
    z: Var,
    batch: &RankBatch,
    mirrored: bool,
) -> Var {
    if batch.src.is_empty() {
        return t.leaf(Arr::zeros((1, 1)));
    }
    let zi = t.gather_rows(z, Rc::clone(&batch.src));
    let zj = t.gather_rows(z, Rc::clone(&batch.dst));
    let zk = t.gather_rows(z, Rc::clone(&batch.neutral));
    let d_pair = geo.pair_dist(t, zi, zj);
    let zi2 = t.gather_rows(z, Rc::clone(&batch.src));
    let d_neut = geo.pair_dist(t, zi2, zk);
    let diff = if mirrored {
        t.sub(d_neut, d_pair)
    } else {
        t.sub(d_pair, d_neut)
    };
    let hinge = t.relu(diff);
    t.mean_all(hinge)
}

/// Weighted sum of the four loss terms. Aborts if any component is non-finite
/// so a diverging run fails loudly instead of quietly producing NaN metrics.
pub fn total_loss(
    t: &mut Tape,
    cls: Var,
    pos: Var,
    neg: Var,
    mim: Var,
    w: LossWeights,
) -> Result<Var> {
    for (name, v) in [("cls", cls), ("pos", pos), ("neg", neg), ("mim", mim)] {
        let val = t.value(v)[(0, 0)];
        if !val.is_finite() {
            return Err(Error::Numeric(format!("loss component {name} is {val}")));
        }
    }
    let sp = t.scale(pos, w.alpha);
    let sn = t.scale(neg, w.beta);
    let sm = t.scale(mim, w.gamma);
    let a = t.add(cls, sp);
    let b = t.add(a, sn);
    Ok(t.add(b, sm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub threshold: f64,
}

/// Rank-statistic AUC with average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(format!(
            "AUC undefined: {n_pos} positive and {n_neg} negative test edges"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(ranks.iter())
        .filter(|(&y, _)| y > 0.5)
        .map(|(_, &r)| r)
        .sum();
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

fn f1_from_counts(tp: usize, fp: usize, fne: usize) -> f64 {
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 family at a fixed threshold: positive-class F1, macro-averaged F1 over
/// both classes, and micro F1 (global counts, equal to accuracy here).
pub fn threshold_metrics(scores: &[f64], labels: &[f64], threshold: f64) -> (f64, f64, f64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fne = 0;
    let mut tn = 0;
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        let pred = s >= threshold;
        let actual = y > 0.5;
        match (pred, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let f1_pos = f1_from_counts(tp, fp, fne);
    let f1_neg = f1_from_counts(tn, fne, fp);
    let macro_f1 = (f1_pos + f1_neg) / 2.0;
    let micro_f1 = f1_from_counts(tp + tn, fp + fne, fne + fp);
    (f1_pos, macro_f1, micro_f1)
}

pub fn evaluate(scores: &[f64], labels: &[f64], threshold: f64) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let auc = auc(scores, labels)?;
    let (f1, macro_f1, micro_f1) = threshold_metrics(scores, labels, threshold);
    Ok(EvalReport { auc, f1, macro_f1, micro_f1, threshold })
}
