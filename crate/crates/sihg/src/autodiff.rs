//! Reverse-mode automatic differentiation over dense 2-D `f64` tensors.
//!
//! A `Tape` records every primitive in execution order; `backward` walks the
//! record in exact reverse order and accumulates gradients additively. One
//! training step builds and consumes one tape. Scalars are `[1,1]` tensors,
//! column vectors `[m,1]`.

use std::rc::Rc;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub type Arr = Array2<f64>;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

type BackFn = Box<dyn Fn(&[Arr], &Arr) -> Vec<Arr>>;

struct Node {
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    vals: Vec<Arr>,
    nodes: Vec<Node>,
}

const DIV_EPS: f64 = 1e-15;

fn guard_den(x: f64) -> f64 {
    if x.abs() < DIV_EPS {
        if x < 0.0 {
            -DIV_EPS
        } else {
            DIV_EPS
        }
    } else {
        x
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.vals[v.0]
    }

    fn push(&mut self, val: Arr, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        self.vals.push(val);
        self.nodes.push(Node { parents, back });
        Var(self.nodes.len() - 1)
    }

    /// Record an input tensor (parameter or constant).
    pub fn leaf(&mut self, val: Arr) -> Var {
        self.push(val, vec![], None)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Arr::from_elem((1, 1), x))
    }

    fn assert_same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.vals[a.0].dim(),
            self.vals[b.0].dim(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.vals[a.0].dim(),
            self.vals[b.0].dim()
        );
    }

    // ---- binary elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let val = &self.vals[a.0] + &self.vals[b.0];
        self.push(
            val,
            vec![a.0, b.0],
            Some(Box::new(|_, g| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let val = &self.vals[a.0] - &self.vals[b.0];
        self.push(
            val,
            vec![a.0, b.0],
            Some(Box::new(|_, g| vec![g.clone(), -g])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let val = &self.vals[a.0] * &self.vals[b.0];
        let (ai, bi) = (a.0, b.0);
        self.push(
            val,
            vec![ai, bi],
            Some(Box::new(move |vals, g| {
                vec![g * &vals[bi], g * &vals[ai]]
            })),
        )
    }

    /// Elementwise division with the denominator guarded at 1e-15.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "div");
        let den = self.vals[b.0].mapv(guard_den);
        let val = &self.vals[a.0] / &den;
        let ai = a.0;
        self.push(
            val,
            vec![ai, b.0],
            Some(Box::new(move |vals, g| {
                let ga = g / &den;
                let gb = -(g * &vals[ai]) / &den.mapv(|x| x * x);
                vec![ga, gb]
            })),
        )
    }

    // ---- scalar / broadcasting ----

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let val = &self.vals[a.0] * c;
        self.push(
            val,
            vec![a.0],
            Some(Box::new(move |_, g| vec![g * c])),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let val = &self.vals[a.0] + c;
        self.push(val, vec![a.0], Some(Box::new(|_, g| vec![g.clone()])))
    }

    /// Broadcast-add a `[1,n]` row vector to every row of `[m,n]`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        assert_eq!(self.vals[a.0].ncols(), self.vals[r.0].ncols(), "add_row");
        assert_eq!(self.vals[r.0].nrows(), 1, "add_row: r must be [1,n]");
        let val = &self.vals[a.0] + &self.vals[r.0];
        self.push(
            val,
            vec![a.0, r.0],
            Some(Box::new(|_, g| {
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![g.clone(), gr]
            })),
        )
    }

    /// Broadcast-multiply each row of `[m,n]` by the matching `[m,1]` entry.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        assert_eq!(self.vals[a.0].nrows(), self.vals[c.0].nrows(), "mul_col");
        assert_eq!(self.vals[c.0].ncols(), 1, "mul_col: c must be [m,1]");
        let val = &self.vals[a.0] * &self.vals[c.0];
        let (ai, ci) = (a.0, c.0);
        self.push(
            val,
            vec![ai, ci],
            Some(Box::new(move |vals, g| {
                let ga = g * &vals[ci];
                let gc = (g * &vals[ai]).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![ga, gc]
            })),
        )
    }

    /// Row-broadcast division by a `[m,1]` column, guarded at 1e-15.
    pub fn div_col(&mut self, a: Var, c: Var) -> Var {
        assert_eq!(self.vals[a.0].nrows(), self.vals[c.0].nrows(), "div_col");
        assert_eq!(self.vals[c.0].ncols(), 1, "div_col: c must be [m,1]");
        let den = self.vals[c.0].mapv(guard_den);
        let val = &self.vals[a.0] / &den;
        let ai = a.0;
        self.push(
            val,
            vec![ai, c.0],
            Some(Box::new(move |vals, g| {
                let ga = g / &den;
                let gc = (-(g * &vals[ai]) / &den.mapv(|x| x * x))
                    .sum_axis(Axis(1))
                    .insert_axis(Axis(1));
                vec![ga, gc]
            })),
        )
    }

    // ---- matmul ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.vals[a.0].ncols(),
            self.vals[b.0].nrows(),
            "matmul: inner dimensions"
        );
        let val = self.vals[a.0].dot(&self.vals[b.0]);
        let (ai, bi) = (a.0, b.0);
        self.push(
            val,
            vec![ai, bi],
            Some(Box::new(move |vals, g| {
                let ga = g.dot(&vals[bi].t());
                let gb = vals[ai].t().dot(g);
                vec![ga, gb]
            })),
        )
    }

    // ---- unary elementwise ----

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var {
        let val = self.vals[a.0].mapv(&f);
        let ai = a.0;
        self.push(
            val,
            vec![ai],
            Some(Box::new(move |vals, g| {
                vec![g * &vals[ai].mapv(&df)]
            })),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, f64::exp)
    }

    /// Natural log with the argument floored at 1e-300 (callers clamp into
    /// meaningful ranges themselves; the floor only prevents -inf).
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(1e-300).ln(), |x| 1.0 / x.max(DIV_EPS))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    pub fn sinh(&mut self, a: Var) -> Var {
        self.unary(a, f64::sinh, f64::cosh)
    }

    pub fn cosh(&mut self, a: Var) -> Var {
        self.unary(a, f64::cosh, f64::sinh)
    }

    /// atanh; callers clamp |x| strictly below 1 first.
    pub fn atanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::atanh, |x| 1.0 / (1.0 - x * x).max(DIV_EPS))
    }

    /// acosh; callers clamp x >= 1 + 1e-12 first.
    pub fn acosh(&mut self, a: Var) -> Var {
        self.unary(a, f64::acosh, |x| 1.0 / ((x * x - 1.0).max(DIV_EPS)).sqrt())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |x| 0.5 / x.max(DIV_EPS).sqrt())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x| 2.0 * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 1.0 / (1.0 + (-x).exp()),
            |x| {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            },
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Clamp into [lo, hi]; gradient is zero at clamped points.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            a,
            move |x| x.clamp(lo, hi),
            move |x| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    // ---- shape ops ----

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.vals[a.0].nrows(), self.vals[b.0].nrows(), "concat_cols");
        let na = self.vals[a.0].ncols();
        let val = ndarray::concatenate(
            Axis(1),
            &[self.vals[a.0].view(), self.vals[b.0].view()],
        )
        .expect("row counts match");
        self.push(
            val,
            vec![a.0, b.0],
            Some(Box::new(move |_, g| {
                let ga = g.slice(ndarray::s![.., ..na]).to_owned();
                let gb = g.slice(ndarray::s![.., na..]).to_owned();
                vec![ga, gb]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.vals[a.0].dim();
        assert!(start < end && end <= n, "slice_cols range");
        let val = self.vals[a.0].slice(ndarray::s![.., start..end]).to_owned();
        self.push(
            val,
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut ga = Arr::zeros((m, n));
                ga.slice_mut(ndarray::s![.., start..end]).assign(g);
                vec![ga]
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let (m, n) = self.vals[a.0].dim();
        let val = Arr::from_elem((1, 1), self.vals[a.0].sum());
        self.push(
            val,
            vec![a.0],
            Some(Box::new(move |_, g| {
                vec![Arr::from_elem((m, n), g[(0, 0)])]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let count = self.vals[a.0].len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / count)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let n = self.vals[a.0].ncols();
        let val = self.vals[a.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(
            val,
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut ga = Arr::zeros((g.nrows(), n));
                for (mut row, gr) in ga.rows_mut().into_iter().zip(g.column(0)) {
                    row.fill(*gr);
                }
                vec![ga]
            })),
        )
    }

    /// Row-wise L2 norm with the 1e-15 epsilon inside the square root. The
    /// epsilon is part of the differentiated graph: the gradient at the zero
    /// row is exactly zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let val = self.vals[a.0]
            .rows()
            .into_iter()
            .map(|r| (r.iter().map(|x| x * x).sum::<f64>() + DIV_EPS).sqrt())
            .collect::<Vec<_>>();
        let val = Arr::from_shape_vec((self.vals[a.0].nrows(), 1), val).unwrap();
        let ai = a.0;
        let norms = val.clone();
        self.push(
            val,
            vec![ai],
            Some(Box::new(move |vals, g| {
                vec![&vals[ai] * &(g / &norms)]
            })),
        )
    }

    // ---- gather / scatter ----

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let (m, n) = self.vals[a.0].dim();
        let mut val = Arr::zeros((idx.len(), n));
        for (r, &i) in idx.iter().enumerate() {
            val.row_mut(r).assign(&self.vals[a.0].row(i));
        }
        self.push(
            val,
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut ga = Arr::zeros((m, n));
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = ga.row_mut(i);
                    dst += &g.row(r);
                }
                vec![ga]
            })),
        )
    }

    /// Scatter-add rows of `[k,n]` into an `[m,n]` output at `idx[r]`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, m: usize) -> Var {
        let n = self.vals[a.0].ncols();
        assert_eq!(self.vals[a.0].nrows(), idx.len(), "scatter_add_rows");
        let mut val = Arr::zeros((m, n));
        for (r, &i) in idx.iter().enumerate() {
            let mut dst = val.row_mut(i);
            dst += &self.vals[a.0].row(r);
        }
        self.push(
            val,
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut ga = Arr::zeros((idx.len(), n));
                for (r, &i) in idx.iter().enumerate() {
                    ga.row_mut(r).assign(&g.row(i));
                }
                vec![ga]
            })),
        )
    }

    // ---- domain-specific primitives ----

    /// Row-wise Minkowski inner product of two `[m, d+1]` tensors -> `[m,1]`.
    pub fn minkowski_rows(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "minkowski_rows");
        let (m, _) = self.vals[a.0].dim();
        let mut out = Arr::zeros((m, 1));
        for r in 0..m {
            let x = self.vals[a.0].row(r);
            let y = self.vals[b.0].row(r);
            let mut acc = -x[0] * y[0];
            for i in 1..x.len() {
                acc += x[i] * y[i];
            }
            out[(r, 0)] = acc;
        }
        let (ai, bi) = (a.0, b.0);
        let flip = move |v: &Arr, g: &Arr| {
            let mut out = v * g; // broadcast [m,1] over columns
            for mut row in out.rows_mut() {
                row[0] = -row[0];
            }
            out
        };
        self.push(
            out,
            vec![ai, bi],
            Some(Box::new(move |vals, g| {
                vec![flip(&vals[bi], g), flip(&vals[ai], g)]
            })),
        )
    }

    /// Signed softmax F over segments: out_i = 2*softmax_seg(s)_i - 1,
    /// clamped into the open interval (-1+1e-7, 1-1e-7). `seg` assigns each
    /// row of the `[E,1]` score column to a neighbor set; rows of one segment
    /// need not be contiguous.
    pub fn segment_signed_softmax(&mut self, scores: Var, seg: Rc<Vec<usize>>, num_segments: usize) -> Var {
        let s = &self.vals[scores.0];
        assert_eq!(s.ncols(), 1, "segment_signed_softmax expects [E,1]");
        assert_eq!(s.nrows(), seg.len(), "segment ids per score row");
        // max-subtraction per segment for overflow safety
        let mut seg_max = vec![f64::NEG_INFINITY; num_segments];
        for (r, &gid) in seg.iter().enumerate() {
            seg_max[gid] = seg_max[gid].max(s[(r, 0)]);
        }
        let mut seg_sum = vec![0.0; num_segments];
        let mut expd = vec![0.0; seg.len()];
        for (r, &gid) in seg.iter().enumerate() {
            let e = (s[(r, 0)] - seg_max[gid]).exp();
            expd[r] = e;
            seg_sum[gid] += e;
        }
        let probs: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(r, &gid)| expd[r] / seg_sum[gid])
            .collect();
        const LIM: f64 = 1.0 - 1e-7;
        let out_vec: Vec<f64> = probs.iter().map(|&p| (2.0 * p - 1.0).clamp(-LIM, LIM)).collect();
        let out = Arr::from_shape_vec((seg.len(), 1), out_vec).unwrap();
        let probs = Rc::new(probs);
        let seg_b = Rc::clone(&seg);
        self.push(
            out,
            vec![scores.0],
            Some(Box::new(move |_, g| {
                // d out_i / d s_j = 2 * p_i * (delta_ij - p_j) within a segment
                let mut dot = vec![0.0; num_segments];
                for (r, &gid) in seg_b.iter().enumerate() {
                    dot[gid] += g[(r, 0)] * probs[r];
                }
                let mut gs = Arr::zeros((seg_b.len(), 1));
                for (r, &gid) in seg_b.iter().enumerate() {
                    gs[(r, 0)] = 2.0 * probs[r] * (g[(r, 0)] - dot[gid]);
                }
                vec![gs]
            })),
        )
    }

    /// Largest entry, detached from the graph (used for log-sum-exp shifts).
    pub fn max_detached(&self, a: Var) -> f64 {
        self.vals[a.0].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// log(mean(exp(x))) over all entries, computed with max-subtraction.
    pub fn log_mean_exp(&mut self, a: Var) -> Var {
        let m = self.max_detached(a);
        let shifted = self.add_scalar(a, -m);
        let e = self.exp(shifted);
        let mean = self.mean_all(e);
        let l = self.ln(mean);
        self.add_scalar(l, m)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Returns one gradient slot per tape
    /// entry; untouched entries hold `None` (treat as zero).
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Arr>>> {
        if self.vals[loss.0].dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {:?}",
                self.vals[loss.0].dim()
            )));
        }
        let mut grads: Vec<Option<Arr>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Arr::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(back) = &self.nodes[i].back {
                let parent_grads = back(&self.vals, &g);
                for (p, pg) in self.nodes[i].parents.iter().zip(parent_grads) {
                    match &mut grads[*p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }
}
