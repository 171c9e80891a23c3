//! Donsker-Varadhan mutual information estimation between edge embeddings and
//! edge signs.
//!
//! The statistics network scores an (embedding pair, sign) sample with two
//! input paths that are summed before a shared head. Joint samples pair each
//! edge with its true sign; marginal samples reuse the same edges with the
//! sign column permuted.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Arr, Tape, Var};
use crate::model::LEAKY_SLOPE;

pub const HIDDEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscParams {
    pub w1p: Arr,
    pub b1p: Arr,
    pub w2p: Arr,
    pub b2p: Arr,
    pub w1s: Arr,
    pub b1s: Arr,
    pub w2s: Arr,
    pub b2s: Arr,
    pub w3: Arr,
    pub b3: Arr,
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Arr {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl DiscParams {
    /// `feat_dim` is the width of a concatenated embedding pair.
    pub fn init<R: Rng>(feat_dim: usize, rng: &mut R) -> Self {
        DiscParams {
            w1p: glorot(rng, feat_dim, HIDDEN),
            b1p: Arr::zeros((1, HIDDEN)),
            w2p: glorot(rng, HIDDEN, HIDDEN),
            b2p: Arr::zeros((1, HIDDEN)),
            w1s: glorot(rng, 1, HIDDEN),
            b1s: Arr::zeros((1, HIDDEN)),
            w2s: glorot(rng, HIDDEN, HIDDEN),
            b2s: Arr::zeros((1, HIDDEN)),
            w3: glorot(rng, HIDDEN, 1),
            b3: Arr::zeros((1, 1)),
        }
    }

    pub fn named(&self) -> Vec<(String, &Arr)> {
        vec![
            ("disc.w1p".into(), &self.w1p),
            ("disc.b1p".into(), &self.b1p),
            ("disc.w2p".into(), &self.w2p),
            ("disc.b2p".into(), &self.b2p),
            ("disc.w1s".into(), &self.w1s),
            ("disc.b1s".into(), &self.b1s),
            ("disc.w2s".into(), &self.w2s),
            ("disc.b2s".into(), &self.b2s),
            ("disc.w3".into(), &self.w3),
            ("disc.b3".into(), &self.b3),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Arr)> {
        vec![
            ("disc.w1p".into(), &mut self.w1p),
            ("disc.b1p".into(), &mut self.b1p),
            ("disc.w2p".into(), &mut self.w2p),
            ("disc.b2p".into(), &mut self.b2p),
            ("disc.w1s".into(), &mut self.w1s),
            ("disc.b1s".into(), &mut self.b1s),
            ("disc.w2s".into(), &mut self.w2s),
            ("disc.b2s".into(), &mut self.b2s),
            ("disc.w3".into(), &mut self.w3),
            ("disc.b3".into(), &mut self.b3),
        ]
    }

    pub fn leaf_into(&self, t: &mut Tape, ordered: &mut Vec<Var>) -> DiscVars {
        let dv = DiscVars {
            w1p: t.leaf(self.w1p.clone()),
            b1p: t.leaf(self.b1p.clone()),
            w2p: t.leaf(self.w2p.clone()),
            b2p: t.leaf(self.b2p.clone()),
            w1s: t.leaf(self.w1s.clone()),
            b1s: t.leaf(self.b1s.clone()),
            w2s: t.leaf(self.w2s.clone()),
            b2s: t.leaf(self.b2s.clone()),
            w3: t.leaf(self.w3.clone()),
            b3: t.leaf(self.b3.clone()),
        };
        ordered.extend([
            dv.w1p, dv.b1p, dv.w2p, dv.b2p, dv.w1s, dv.b1s, dv.w2s, dv.b2s, dv.w3, dv.b3,
        ]);
        dv
    }
}

pub struct DiscVars {
    pub w1p: Var,
    pub b1p: Var,
    pub w2p: Var,
    pub b2p: Var,
    pub w1s: Var,
    pub b1s: Var,
    pub w2s: Var,
    pub b2s: Var,
    pub w3: Var,
    pub b3: Var,
}

/// Embedding-pair path of the statistics network, shared between the joint
/// and marginal scores: `[B, feat_dim] -> [B, HIDDEN]`.
pub fn pair_path(t: &mut Tape, dv: &DiscVars, pair_feat: Var) -> Var {
    let h = t.matmul(pair_feat, dv.w1p);
    let h = t.add_row(h, dv.b1p);
    let h = t.leaky_relu(h, LEAKY_SLOPE);
    let h = t.matmul(h, dv.w2p);
    t.add_row(h, dv.b2p)
}

fn sign_path(t: &mut Tape, dv: &DiscVars, signs: Var) -> Var {
    let s = t.matmul(signs, dv.w1s);
    let s = t.add_row(s, dv.b1s);
    let s = t.leaky_relu(s, LEAKY_SLOPE);
    let s = t.matmul(s, dv.w2s);
    t.add_row(s, dv.b2s)
}

fn head(t: &mut Tape, dv: &DiscVars, pair_hidden: Var, signs: Var) -> Var {
    let s = sign_path(t, dv, signs);
    let sum = t.add(pair_hidden, s);
    let act = t.leaky_relu(sum, LEAKY_SLOPE);
    let out = t.matmul(act, dv.w3);
    t.add_row(out, dv.b3)
}

/// Score a batch of (pair, sign) samples: `[B, 1]`.
pub fn discriminator(t: &mut Tape, dv: &DiscVars, pair_feat: Var, signs: Var) -> Var {
    let ph = pair_path(t, dv, pair_feat);
    head(t, dv, ph, signs)
}

/// Donsker-Varadhan lower bound on I(edge embedding pair; sign):
/// `mean(T_joint) - log mean exp(T_marginal)`. The marginal batch reuses the
/// same pairs with `signs_marg` a permutation of `signs_joint`.
pub fn dv_bound(
    t: &mut Tape,
    dv: &DiscVars,
    pair_feat: Var,
    signs_joint: Var,
    signs_marg: Var,
) -> Var {
    let ph = pair_path(t, dv, pair_feat);
    let t_joint = head(t, dv, ph, signs_joint);
    let t_marg = head(t, dv, ph, signs_marg);
    let joint_mean = t.mean_all(t_joint);
    let marg_lme = t.log_mean_exp(t_marg);
    t.sub(joint_mean, marg_lme)
}

/// Loss contribution: the bound is maximized, so the loss is its negation.
pub fn mi_loss(
    t: &mut Tape,
    dv: &DiscVars,
    pair_feat: Var,
    signs_joint: Var,
    signs_marg: Var,
) -> Var {
    let bound = dv_bound(t, dv, pair_feat, signs_joint, signs_marg);
    t.neg(bound)
}

/// Train a fresh statistics network on a fixed (feature, sign) batch and
/// report the final bound. Full-batch Adam; the marginal permutation is
/// redrawn each epoch. Used by the estimator sanity checks.
pub fn train_bound(
    feats: &Arr,
    signs: &Arr,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> crate::error::Result<f64> {
    use rand::SeedableRng;
    let n = feats.nrows();
    if n == 0 || signs.nrows() != n {
        return Err(crate::error::Error::Contract(format!(
            "{} feature rows vs {} sign rows",
            n,
            signs.nrows()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = DiscParams::init(feats.ncols(), &mut rng);
    let mut m: Vec<Arr> = params.named().iter().map(|(_, a)| Arr::zeros(a.raw_dim())).collect();
    let mut v = m.clone();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut last = 0.0;
    for step in 1..=epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let marg = Arr::from_shape_fn((n, 1), |(r, _)| signs[(perm[r], 0)]);
        let mut t = Tape::new();
        let mut ordered = Vec::new();
        let dv = params.leaf_into(&mut t, &mut ordered);
        let f = t.leaf(feats.clone());
        let sj = t.leaf(signs.clone());
        let sm = t.leaf(marg);
        let bound = dv_bound(&mut t, &dv, f, sj, sm);
        last = t.value(bound)[(0, 0)];
        let loss = t.neg(bound);
        let grads = t.backward(loss)?;
        let bc1 = 1.0 - f64::powi(b1, step as i32);
        let bc2 = 1.0 - f64::powi(b2, step as i32);
        let mut named = params.named_mut();
        for (i, var) in ordered.iter().enumerate() {
            let g = match &grads[var.0] {
                Some(g) => g.clone(),
                None => continue,
            };
            m[i] = &m[i] * b1 + &(&g * (1.0 - b1));
            v[i] = &v[i] * b2 + &(g.mapv(|x| x * x) * (1.0 - b2));
            let m_hat = &m[i] / bc1;
            let v_hat = &v[i] / bc2;
            *named[i].1 -= &(m_hat / (v_hat.mapv(f64::sqrt) + eps) * lr);
        }
    }
    Ok(last)
}
