//! Batched manifold maps expressed as tape operations.
//!
//! Points are rows of a 2-D tensor: `[N, d+1]` on the hyperboloid, `[N, d]`
//! on the Poincare ball and in the Euclidean ablation. Tangent vectors at the
//! origin are `[N, d]` spatial rows in every model. Each map re-projects its
//! output so manifold invariants survive floating-point drift.

use crate::autodiff::{Arr, Tape, Var};
use crate::manifold::{ARCOSH_GUARD, BALL_MARGIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Hyperboloid,
    Poincare,
    Euclidean,
}

impl std::str::FromStr for GeometryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hyperboloid" => Ok(GeometryKind::Hyperboloid),
            "poincare" => Ok(GeometryKind::Poincare),
            "euclidean" => Ok(GeometryKind::Euclidean),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

impl std::fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GeometryKind::Hyperboloid => "hyperboloid",
            GeometryKind::Poincare => "poincare",
            GeometryKind::Euclidean => "euclidean",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub k: f64,
}

const ATANH_LIM: f64 = 1.0 - 1e-7;

impl Geometry {
    pub fn new(kind: GeometryKind, k: f64) -> Self {
        Geometry { kind, k }
    }

    /// Width of a point row for a d-dimensional feature.
    pub fn point_dim(&self, d: usize) -> usize {
        match self.kind {
            GeometryKind::Hyperboloid => d + 1,
            _ => d,
        }
    }

    fn sk(&self) -> f64 {
        self.k.sqrt()
    }

    /// Recompute the hyperboloid time coordinate from the spatial part.
    fn project_h(&self, t: &mut Tape, spatial: Var) -> Var {
        let sq = t.square(spatial);
        let ssum = t.row_sum(sq);
        let shifted = t.add_scalar(ssum, self.k);
        let time = t.sqrt(shifted);
        t.concat_cols(time, spatial)
    }

    /// Clip row norms strictly inside the Poincare ball.
    fn project_ball(&self, t: &mut Tape, x: Var) -> Var {
        let bound = self.sk() * (1.0 - BALL_MARGIN);
        let n = t.row_norm(x);
        let rows = t.value(n).nrows();
        let b = t.leaf(Arr::from_elem((rows, 1), bound));
        let ratio = t.div(b, n);
        let factor = t.clamp(ratio, 0.0, 1.0);
        t.mul_col(x, factor)
    }

    /// exp_o of spatial tangent rows `[N, d]` -> point rows.
    pub fn exp_origin(&self, t: &mut Tape, v: Var) -> Var {
        match self.kind {
            GeometryKind::Euclidean => v,
            GeometryKind::Hyperboloid => {
                let n = t.row_norm(v);
                let scaled = t.scale(n, 1.0 / self.sk());
                let s = t.sinh(scaled);
                let s = t.scale(s, self.sk());
                let coef = t.div(s, n);
                let spatial = t.mul_col(v, coef);
                self.project_h(t, spatial)
            }
            GeometryKind::Poincare => {
                let n = t.row_norm(v);
                let scaled = t.scale(n, 1.0 / self.sk());
                let s = t.tanh(scaled);
                let s = t.scale(s, self.sk());
                let coef = t.div(s, n);
                let x = t.mul_col(v, coef);
                self.project_ball(t, x)
            }
        }
    }

    /// log_o of point rows -> spatial tangent rows `[N, d]`.
    pub fn log_origin(&self, t: &mut Tape, x: Var) -> Var {
        match self.kind {
            GeometryKind::Euclidean => x,
            GeometryKind::Hyperboloid => {
                let cols = t.value(x).ncols();
                let time = t.slice_cols(x, 0, 1);
                let spatial = t.slice_cols(x, 1, cols);
                let arg = t.scale(time, 1.0 / self.sk());
                let arg = t.clamp(arg, ARCOSH_GUARD, f64::INFINITY);
                let dist = t.acosh(arg);
                let dist = t.scale(dist, self.sk());
                let n = t.row_norm(spatial);
                let coef = t.div(dist, n);
                t.mul_col(spatial, coef)
            }
            GeometryKind::Poincare => {
                let n = t.row_norm(x);
                let ratio = t.scale(n, 1.0 / self.sk());
                let ratio = t.clamp(ratio, 0.0, ATANH_LIM);
                let a = t.atanh(ratio);
                let a = t.scale(a, self.sk());
                let coef = t.div(a, n);
                t.mul_col(x, coef)
            }
        }
    }

    /// Treat `u` (`[N, d]`, tangent at the origin) as a step from `base`:
    /// parallel transport to the base point, then the exponential map there.
    pub fn exp_at(&self, t: &mut Tape, base: Var, u: Var) -> Var {
        match self.kind {
            GeometryKind::Euclidean => t.add(base, u),
            GeometryKind::Hyperboloid => {
                let cols = t.value(base).ncols();
                let base_t = t.slice_cols(base, 0, 1);
                let base_s = t.slice_cols(base, 1, cols);
                // transported vector v = (s/sqrt(K), u + s/(K + sqrt(K) b0) * base_s)
                let prod = t.mul(base_s, u);
                let s = t.row_sum(prod);
                let scaled_b0 = t.scale(base_t, self.sk());
                let denom = t.add_scalar(scaled_b0, self.k);
                let frac = t.div(s, denom);
                let along = t.mul_col(base_s, frac);
                let v_s = t.add(u, along);
                let v_t = t.scale(s, 1.0 / self.sk());
                let v = t.concat_cols(v_t, v_s);
                // transport preserves the Lorentz norm, which equals |u|
                let q = t.row_norm(u);
                let qs = t.scale(q, 1.0 / self.sk());
                let c = t.cosh(qs);
                let sh = t.sinh(qs);
                let sh = t.scale(sh, self.sk());
                let coef = t.div(sh, q);
                let term_base = t.mul_col(base, c);
                let term_v = t.mul_col(v, coef);
                let p = t.add(term_base, term_v);
                let ps = t.slice_cols(p, 1, cols);
                self.project_h(t, ps)
            }
            GeometryKind::Poincare => {
                // transport scaling and the conformal factor cancel into
                // base (+) sqrt(K) tanh(|u|/sqrt(K)) u/|u|
                let step = self.exp_origin(t, u);
                let sum = self.mobius_add(t, base, step);
                self.project_ball(t, sum)
            }
        }
    }

    /// Row-wise Mobius addition on the ball.
    pub fn mobius_add(&self, t: &mut Tape, x: Var, y: Var) -> Var {
        let k = self.k;
        let prod = t.mul(x, y);
        let xy = t.row_sum(prod);
        let x2 = t.square(x);
        let xx = t.row_sum(x2);
        let y2 = t.square(y);
        let yy = t.row_sum(y2);
        let xy2k = t.scale(xy, 2.0 / k);
        let yyk = t.scale(yy, 1.0 / k);
        let cx_part = t.add(xy2k, yyk);
        let cx = t.add_scalar(cx_part, 1.0);
        let xxk = t.scale(xx, -1.0 / k);
        let cy = t.add_scalar(xxk, 1.0);
        let xxyy = t.mul(xx, yy);
        let xxyy = t.scale(xxyy, 1.0 / (k * k));
        let den_part = t.add(xy2k, xxyy);
        let den = t.add_scalar(den_part, 1.0);
        let tx = t.mul_col(x, cx);
        let ty = t.mul_col(y, cy);
        let num = t.add(tx, ty);
        t.div_col(num, den)
    }

    /// Geodesic distance between matching rows of two point tensors -> `[N,1]`.
    pub fn pair_dist(&self, t: &mut Tape, a: Var, b: Var) -> Var {
        match self.kind {
            GeometryKind::Euclidean => {
                let d = t.sub(a, b);
                t.row_norm(d)
            }
            GeometryKind::Hyperboloid => {
                let inner = t.minkowski_rows(a, b);
                let arg = t.scale(inner, -1.0 / self.k);
                let arg = t.clamp(arg, ARCOSH_GUARD, f64::INFINITY);
                let d = t.acosh(arg);
                t.scale(d, self.sk())
            }
            GeometryKind::Poincare => {
                let na = t.neg(a);
                let u = self.mobius_add(t, na, b);
                let n = t.row_norm(u);
                let ratio = t.scale(n, 1.0 / self.sk());
                let ratio = t.clamp(ratio, 0.0, ATANH_LIM);
                let d = t.atanh(ratio);
                t.scale(d, 2.0 * self.sk())
            }
        }
    }
}
