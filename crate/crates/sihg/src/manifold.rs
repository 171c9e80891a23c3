//! Hyperbolic geometry on the hyperboloid (Lorentz) and Poincare ball models.
//!
//! All functions are pure and operate on plain `f64` slices. Points on the
//! hyperboloid with curvature -1/K live on {<x,x>_L = -K, x0 > 0} in R^{d+1};
//! Poincare points live in the open ball of radius sqrt(K) in R^d. After every
//! map the result is re-projected onto the manifold so the invariants stay
//! checkable at the stated tolerances.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const ARCOSH_GUARD: f64 = 1.0 + 1e-12;
pub const BALL_MARGIN: f64 = 1e-5;
pub const NORM_EPS: f64 = 1e-15;

/// Minkowski inner product <x,y>_L = -x0*y0 + sum_{i>=1} xi*yi.
pub fn minkowski_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Dimension(format!(
            "minkowski_inner lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let mut acc = -x[0] * y[0];
    for i in 1..x.len() {
        acc += x[i] * y[i];
    }
    Ok(acc)
}

fn euclid_norm(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt()
}

fn arcosh(x: f64) -> f64 {
    let x = x.max(ARCOSH_GUARD);
    (x + (x * x - 1.0).sqrt()).ln()
}

/// Hyperboloid (Lorentz) model with curvature -1/K.
#[derive(Debug, Clone, Copy)]
pub struct Hyperboloid {
    pub k: f64,
}

impl Hyperboloid {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Config(format!("curvature parameter K={k} must be > 0")));
        }
        Ok(Hyperboloid { k })
    }

    /// The origin (sqrt(K), 0, ..., 0) in d spatial dimensions.
    pub fn origin(&self, d: usize) -> Vec<f64> {
        let mut o = vec![0.0; d + 1];
        o[0] = self.k.sqrt();
        o
    }

    /// Recompute the time coordinate from the spatial part so <x,x>_L = -K.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let spatial_sq: f64 = x[1..].iter().map(|v| v * v).sum();
        let mut out = x.to_vec();
        out[0] = (self.k + spatial_sq).sqrt();
        out
    }

    /// Lorentz norm of a tangent vector (non-negative on tangent spaces).
    pub fn tangent_norm(&self, v: &[f64]) -> f64 {
        let q = minkowski_inner(v, v).unwrap_or(0.0);
        q.max(0.0).sqrt()
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            return 0.0;
        }
        let inner = minkowski_inner(x, y).expect("equal lengths");
        self.k.sqrt() * arcosh(-inner / self.k)
    }

    pub fn exp_map(&self, base: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.iter().any(|a| !a.is_finite()) || base.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite input to exp_map".into()));
        }
        let n = self.tangent_norm(v);
        if n < 1e-30 {
            return Ok(base.to_vec());
        }
        let sk = self.k.sqrt();
        let c = (n / sk).cosh();
        let s = sk * (n / sk).sinh() / n;
        let out: Vec<f64> = base
            .iter()
            .zip(v.iter())
            .map(|(&b, &vv)| c * b + s * vv)
            .collect();
        Ok(self.project(&out))
    }

    pub fn log_map(&self, base: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if base == y {
            return Ok(vec![0.0; base.len()]);
        }
        let inner = minkowski_inner(base, y)?;
        let d = self.dist(base, y);
        let u: Vec<f64> = y
            .iter()
            .zip(base.iter())
            .map(|(&yy, &bb)| yy + inner / self.k * bb)
            .collect();
        let n = self.tangent_norm(&u).max(NORM_EPS);
        Ok(u.into_iter().map(|a| d * a / n).collect())
    }

    /// Parallel transport of a tangent vector at the origin to the tangent
    /// space at `x`. Preserves the Lorentz norm.
    pub fn transport_from_origin(&self, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if b.len() != x.len() {
            return Err(Error::Dimension(format!(
                "transport lengths {} vs {}",
                b.len(),
                x.len()
            )));
        }
        let o = self.origin(x.len() - 1);
        let xb = minkowski_inner(x, b)?;
        let denom = self.k - minkowski_inner(&o, x)?;
        Ok(b.iter()
            .enumerate()
            .map(|(i, &bi)| bi + xb / denom * (o[i] + x[i]))
            .collect())
    }

    /// exp_o of a spatial tangent vector (time coordinate zero).
    pub fn exp_origin_spatial(&self, v: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; v.len() + 1];
        full[1..].copy_from_slice(v);
        self.exp_map(&self.origin(v.len()), &full)
            .expect("finite input")
    }

    /// Spatial part of log_o; the time coordinate is always zero at o.
    pub fn log_origin_spatial(&self, x: &[f64]) -> Vec<f64> {
        let full = self
            .log_map(&self.origin(x.len() - 1), x)
            .expect("on-manifold input");
        full[1..].to_vec()
    }

    /// W (x) x ⊕ b: Euclidean linear map in the tangent space at o, then a
    /// bias applied by parallel transport at the mapped point.
    pub fn linear(&self, x: &[f64], w: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
        let t = self.log_origin_spatial(x);
        if w.ncols() != t.len() || w.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "linear: W is {}x{}, tangent {}, bias {}",
                w.nrows(),
                w.ncols(),
                t.len(),
                b.len()
            )));
        }
        let wt = w.dot(&Array1::from_vec(t));
        let moved = self.exp_origin_spatial(wt.as_slice().unwrap());
        let mut b_full = vec![0.0; b.len() + 1];
        b_full[1..].copy_from_slice(b);
        let transported = self.transport_from_origin(&b_full, &moved)?;
        self.exp_map(&moved, &transported)
    }

    /// Stereographic projection onto the Poincare ball of the same curvature.
    pub fn to_poincare(&self, x: &[f64]) -> Vec<f64> {
        let sk = self.k.sqrt();
        x[1..].iter().map(|&xi| sk * xi / (sk + x[0])).collect()
    }
}

/// Poincare ball model with curvature -1/K (radius sqrt(K)).
#[derive(Debug, Clone, Copy)]
pub struct PoincareBall {
    pub k: f64,
}

impl PoincareBall {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Config(format!("curvature parameter K={k} must be > 0")));
        }
        Ok(PoincareBall { k })
    }

    /// Clip the norm strictly inside the ball.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let max_norm = self.k.sqrt() * (1.0 - BALL_MARGIN);
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= max_norm {
            x.to_vec()
        } else {
            x.iter().map(|&v| v * max_norm / n).collect()
        }
    }

    pub fn mobius_add(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!(
                "mobius_add lengths {} vs {}",
                x.len(),
                y.len()
            )));
        }
        let k = self.k;
        let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let xx: f64 = x.iter().map(|a| a * a).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        let den = 1.0 + 2.0 * xy / k + xx * yy / (k * k);
        if den.abs() < 1e-15 {
            return Err(Error::Numeric("mobius_add denominator underflow".into()));
        }
        let cx = (1.0 + 2.0 * xy / k + yy / k) / den;
        let cy = (1.0 - xx / k) / den;
        Ok(x.iter()
            .zip(y)
            .map(|(&a, &b)| cx * a + cy * b)
            .collect())
    }

    fn conformal(&self, x: &[f64]) -> f64 {
        let xx: f64 = x.iter().map(|a| a * a).sum();
        2.0 / (1.0 - xx / self.k)
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            return 0.0;
        }
        let neg_x: Vec<f64> = x.iter().map(|a| -a).collect();
        let u = self.mobius_add(&neg_x, y).expect("on-ball inputs");
        let sk = self.k.sqrt();
        let ratio = (euclid_norm(&u) / sk).min(1.0 - 1e-12);
        2.0 * sk * ratio.atanh()
    }

    pub fn exp_map(&self, base: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.iter().any(|a| !a.is_finite()) || base.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite input to exp_map".into()));
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n < 1e-30 {
            return Ok(base.to_vec());
        }
        let sk = self.k.sqrt();
        let scale = sk * (self.conformal(base) * n / (2.0 * sk)).tanh() / n;
        let step: Vec<f64> = v.iter().map(|&a| scale * a).collect();
        Ok(self.project(&self.mobius_add(base, &step)?))
    }

    pub fn log_map(&self, base: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if base == y {
            return Ok(vec![0.0; base.len()]);
        }
        let neg: Vec<f64> = base.iter().map(|a| -a).collect();
        let u = self.mobius_add(&neg, y)?;
        let sk = self.k.sqrt();
        let n = euclid_norm(&u);
        let scale = 2.0 * sk / self.conformal(base) * (n / sk).min(1.0 - 1e-12).atanh() / n;
        Ok(u.into_iter().map(|a| scale * a).collect())
    }

    /// Transport from the origin: rescaling by the ratio of conformal factors.
    pub fn transport_from_origin(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let scale = 2.0 / self.conformal(x);
        b.iter().map(|&a| scale * a).collect()
    }

    pub fn linear(&self, x: &[f64], w: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
        let origin = vec![0.0; x.len()];
        let t = self.log_map(&origin, x)?;
        if w.ncols() != t.len() || w.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "linear: W is {}x{}, tangent {}, bias {}",
                w.nrows(),
                w.ncols(),
                t.len(),
                b.len()
            )));
        }
        let wt = w.dot(&Array1::from_vec(t));
        let moved_origin = vec![0.0; wt.len()];
        let moved = self.exp_map(&moved_origin, wt.as_slice().unwrap())?;
        let transported = self.transport_from_origin(b, &moved);
        self.exp_map(&moved, &transported)
    }

    /// Inverse stereographic projection onto the hyperboloid.
    pub fn to_hyperboloid(&self, p: &[f64]) -> Vec<f64> {
        let k = self.k;
        let pp: f64 = p.iter().map(|a| a * a).sum();
        let den = (k - pp).max(NORM_EPS);
        let mut out = Vec::with_capacity(p.len() + 1);
        out.push(k.sqrt() * (k + pp) / den);
        out.extend(p.iter().map(|&a| 2.0 * k * a / den));
        Hyperboloid { k }.project(&out)
    }
}
