//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node whose inputs precede it, so
//! the node order is already a topological order. [`Graph::backward`] walks
//! the tape in reverse and returns one gradient per node.

use super::params::{ParamId, ParamSet};
use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Reduction axis for [`Graph::max_reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, keeping one row.
    Rows,
    /// Reduce over columns, keeping one column.
    Cols,
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulColumn {
        weights: Var,
        x: Var,
    },
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        seg: usize,
    },
    MaxCols {
        x: Var,
        argmax: Vec<usize>,
    },
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Parameters bound onto a graph as leaves.
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: Vec<Option<Var>>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.index()].expect("parameter bound on this graph")
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<(ParamId, Var)>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn check_finite(t: &Tensor, op: &str) -> Result<()> {
    t.ensure_finite(op)
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; receives a gradient but is never updated.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Bind every parameter of `params` as a leaf, once.
    pub fn bind_params(&mut self, params: &ParamSet) -> ParamVars {
        let mut vars = vec![None; params.len()];
        for (id, p) in params.iter() {
            let v = self.push(p.value().clone(), Op::Param);
            self.bound.push((id, v));
            vars[id.index()] = Some(v);
        }
        ParamVars { vars }
    }

    /// `x · w + b` with `x: [n, in]`, `w: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(Error::Dimension(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = matmul(xv, wv);
        let bias = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(bv) {
            *o -= y;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(bv) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Scale row `i` of `x: [n, c]` by `weights[i]` where `weights: [n, 1]`.
    pub fn mul_column(&mut self, weights: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.value(weights), self.value(x));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(Error::Dimension(format!(
                "mul_column: weights {:?}, x {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let w = wv.get(r, 0);
            for o in out.row_mut(r) {
                *o *= w;
            }
        }
        Ok(self.push(out, Op::MulColumn { weights, x }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        check_finite(self.value(x), "relu")?;
        let out = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        check_finite(self.value(x), "sigmoid")?;
        let out = self.value(x).map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(x)))
    }

    /// Softmax over the last axis (each row).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        check_finite(self.value(x), "softmax")?;
        let out = self.value(x).softmax_rows();
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Rows of `x` at `idx`, in order; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::Dimension(format!(
                "gather_rows: index {bad} out of {} rows",
                xv.rows()
            )));
        }
        let out = xv.select_rows(idx);
        Ok(self.push(out, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// Each row of `x` repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let idx: Vec<usize> = (0..xv.rows()).flat_map(|r| std::iter::repeat_n(r, times)).collect();
        let out = xv.select_rows(&idx);
        self.push(out, Op::RepeatRows { x, times })
    }

    /// Elementwise max over consecutive groups of `seg` rows. Ties go to the
    /// lowest row; gradients route to the winning entry only.
    pub fn segment_max(&mut self, x: Var, seg: usize) -> Result<Var> {
        let xv = self.value(x);
        if seg == 0 || !xv.rows().is_multiple_of(seg) {
            return Err(Error::Dimension(format!(
                "segment_max: {} rows not divisible into segments of {seg}",
                xv.rows()
            )));
        }
        let groups = xv.rows() / seg;
        let cols = xv.cols();
        let mut out = Tensor::zeros(groups, cols);
        let mut argmax = vec![0usize; groups * cols];
        for g in 0..groups {
            let base = g * seg;
            for c in 0..cols {
                let mut best = base;
                let mut best_v = xv.get(base, c);
                for r in base + 1..base + seg {
                    let v = xv.get(r, c);
                    if v > best_v {
                        best_v = v;
                        best = r;
                    }
                }
                out.set(g, c, best_v);
                argmax[g * cols + c] = best;
            }
        }
        Ok(self.push(out, Op::SegmentMax { x, argmax }))
    }

    /// Mean over consecutive groups of `seg` rows.
    pub fn segment_mean(&mut self, x: Var, seg: usize) -> Result<Var> {
        let xv = self.value(x);
        if seg == 0 || !xv.rows().is_multiple_of(seg) {
            return Err(Error::Dimension(format!(
                "segment_mean: {} rows not divisible into segments of {seg}",
                xv.rows()
            )));
        }
        let groups = xv.rows() / seg;
        let cols = xv.cols();
        let mut out = Tensor::zeros(groups, cols);
        for g in 0..groups {
            let orow = out.row_mut(g);
            for r in g * seg..(g + 1) * seg {
                for (o, v) in orow.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= seg as f64;
            }
        }
        Ok(self.push(out, Op::SegmentMean { x, seg }))
    }

    /// Maximum along `axis`, lowest index winning ties.
    pub fn max_reduce(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let xv = self.value(x);
        match axis {
            Axis::Rows => {
                if xv.rows() == 0 {
                    return Err(Error::Dimension("max_reduce over empty row axis".into()));
                }
                let rows = xv.rows();
                self.segment_max(x, rows)
            }
            Axis::Cols => {
                if xv.cols() == 0 {
                    return Err(Error::Dimension("max_reduce over empty column axis".into()));
                }
                let mut out = Tensor::zeros(xv.rows(), 1);
                let mut argmax = Vec::with_capacity(xv.rows());
                for r in 0..xv.rows() {
                    let (best, best_v) =
                        xv.row(r).iter().enumerate().fold(
                            (0, f64::NEG_INFINITY),
                            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                        );
                    out.set(r, 0, best_v);
                    argmax.push(best);
                }
                Ok(self.push(out, Op::MaxCols { x, argmax }))
            }
        }
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::row_vector(&[s]), Op::SumAll(x))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against class labels,
    /// computed through a fused log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() || lv.rows() == 0 {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                lv.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lv.cols()) {
            return Err(Error::ClassRange(format!(
                "label {bad} with only {} classes",
                lv.cols()
            )));
        }
        check_finite(lv, "cross_entropy")?;
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= labels.len() as f64;
        let probs = lv.softmax_rows();
        Ok(self.push(
            Tensor::row_vector(&[loss]),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a `[1, 1]` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != [1, 1] {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            // Interior gradients are consumed; leaves keep theirs.
            let Some(gout) = grads[i].take() else { continue };
            match &node.op {
                Op::Input | Op::Param => unreachable!(),
                Op::Linear { x, w, b } => {
                    let gx = matmul_bt(&gout, self.value(*w));
                    let gw = matmul_at(self.value(*x), &gout);
                    let mut gb = Tensor::zeros(1, gout.cols());
                    for r in 0..gout.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(gout.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gout.clone());
                    acc(&mut grads, *b, gout.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, gout.map(|v| -v));
                    acc(&mut grads, *a, gout.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = gout.clone();
                    for (g, y) in ga.data_mut().iter_mut().zip(bv.data()) {
                        *g *= y;
                    }
                    let mut gb = gout.clone();
                    for (g, x) in gb.data_mut().iter_mut().zip(av.data()) {
                        *g *= x;
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulColumn { weights, x } => {
                    let (wv, xv) = (self.value(*weights), self.value(*x));
                    let mut gw = Tensor::zeros(wv.rows(), 1);
                    let mut gx = gout.clone();
                    for r in 0..xv.rows() {
                        let dot: f64 = gout.row(r).iter().zip(xv.row(r)).map(|(g, x)| g * x).sum();
                        gw.set(r, 0, dot);
                        let w = wv.get(r, 0);
                        for g in gx.row_mut(r) {
                            *g *= w;
                        }
                    }
                    acc(&mut grads, *weights, gw);
                    acc(&mut grads, *x, gx);
                }
                Op::Scale(x, f) => acc(&mut grads, *x, gout.map(|v| v * f)),
                Op::Relu(x) => {
                    let mut g = gout;
                    for (gv, xv) in g.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = gout;
                    for (gv, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        *gv *= y * (1.0 - y);
                    }
                    acc(&mut grads, *x, g);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut g = gout.clone();
                    for r in 0..y.rows() {
                        let dot: f64 = gout.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for (gv, yv) in g.row_mut(r).iter_mut().zip(y.row(r)) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::GatherRows { x, idx } => {
                    let xv = self.value(*x);
                    let mut g = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, v) in g.row_mut(src).iter_mut().zip(gout.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::RepeatRows { x, times } => {
                    let xv = self.value(*x);
                    let mut g = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..gout.rows() {
                        for (o, v) in g.row_mut(r / times).iter_mut().zip(gout.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::SegmentMax { x, argmax, .. } => {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let mut g = Tensor::zeros(xv.rows(), cols);
                    for (k, &src) in argmax.iter().enumerate() {
                        let c = k % cols;
                        let cur = g.get(src, c);
                        g.set(src, c, cur + gout.data()[k]);
                    }
                    acc(&mut grads, *x, g);
                }
                Op::SegmentMean { x, seg } => {
                    let xv = self.value(*x);
                    let mut g = Tensor::zeros(xv.rows(), xv.cols());
                    let inv = 1.0 / *seg as f64;
                    for r in 0..xv.rows() {
                        for (o, v) in g.row_mut(r).iter_mut().zip(gout.row(r / seg)) {
                            *o = v * inv;
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::MaxCols { x, argmax } => {
                    let xv = self.value(*x);
                    let mut g = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &c) in argmax.iter().enumerate() {
                        g.set(r, c, gout.get(r, 0));
                    }
                    acc(&mut grads, *x, g);
                }
                Op::SumAll(x) => {
                    let [r, c] = self.value(*x).shape();
                    acc(&mut grads, *x, Tensor::filled(r, c, gout.get(0, 0)));
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let scale = gout.get(0, 0) / labels.len() as f64;
                    let mut g = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let v = g.get(r, y);
                        g.set(r, y, v - 1.0);
                    }
                    for v in g.data_mut() {
                        *v *= scale;
                    }
                    acc(&mut grads, *logits, g);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradient of every bound parameter; unreached parameters get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .map(|&(id, v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let [r, c] = self.value(v).shape();
                    Tensor::zeros(r, c)
                });
                (id, g)
            })
            .collect()
    }
}
