//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every primitive appends one node to a [`Tape`]; the node keeps its
//! output value and the ids of its inputs, which is everything the
//! backward rules below need. [`Tape::backward`] walks the nodes in reverse
//! insertion order, so gradient accumulation order is fixed by the order
//! in which the forward pass was recorded.

use crate::error::{DcrError, Result};
use crate::numerics::{SeededRng, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
}

/// Deliberately wrong backward rules, used as negative controls for the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// Use `1 - tanh(x)` instead of `1 - tanh(x)^2`.
    TanhDerivative,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    Transpose(Var),
    Gather(Var, Vec<usize>),
    Stack(Vec<Var>),
    Softmax(Var),
    NormalizeRows(Var),
    Pick(Var, usize),
    NegLog(Var),
    Sum(Var),
    Dropout(Var, Vec<f64>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Norm floor used when normalizing rows.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: BackwardFault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// A differentiable input (parameters, or anything a gradient is wanted for).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DcrError::shape("matmul", sa, sb));
        }
        let (r, k, c) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; r * c];
        matmul_into(self.value(a).values(), self.value(b).values(), r, k, c, &mut out);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: ElementwiseKind) -> Result<Var> {
        match kind {
            ElementwiseKind::Add => self.add(a, b),
            ElementwiseKind::Mul => self.mul(a, b),
        }
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(DcrError::shape(name, ta.shape(), tb.shape()));
        }
        Ok(ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.values().iter().map(|&x| f(x)).collect())
            .expect("map preserves shape");
        let rg = self.needs(a);
        self.push(out, op, rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn activation(&mut self, a: Var, kind: ActivationKind) -> Var {
        match kind {
            ActivationKind::Sigmoid => self.sigmoid(a),
            ActivationKind::Tanh => self.tanh(a),
        }
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// Concatenate along the last dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(DcrError::shape("concat", sa, sb));
        }
        let (p, q) = (ta.cols(), tb.cols());
        let rows = if sa.len() == 1 { 1 } else { sa[..sa.len() - 1].iter().product() };
        let mut out = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            out.extend_from_slice(&ta.values()[r * p..(r + 1) * p]);
            out.extend_from_slice(&tb.values()[r * q..(r + 1) * q]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().expect("non-empty shape") = p + q;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(DcrError::shape("transpose", t.shape(), &[]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let v = t.values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    /// Select rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(DcrError::shape("gather_rows", t.shape(), &[]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(DcrError::InvalidArgument(format!(
                "row {bad} out of range for {r} rows"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::matrix(rows.len(), c, out)?, Op::Gather(a, rows.to_vec()), rg))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.gather_rows(a, &[i])
    }

    /// Stack equal-width rows into an `n × c` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| DcrError::InvalidArgument("stack_rows of nothing".into()))?;
        let c = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let t = self.value(r);
            if t.len() != c {
                return Err(DcrError::shape("stack_rows", self.shape(first), t.shape()));
            }
            out.extend_from_slice(t.values());
        }
        let rg = rows.iter().any(|&r| self.needs(r));
        Ok(self.push(Tensor::matrix(rows.len(), c, out)?, Op::Stack(rows.to_vec()), rg))
    }

    /// Softmax over the last dimension, one row at a time.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() || t.cols() == 0 {
            return Err(DcrError::InvalidArgument("softmax of an empty input".into()));
        }
        let c = t.cols();
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let rg = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a), rg))
    }

    /// Scale every row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let shape = t.shape().to_vec();
        let rg = self.needs(a);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::NormalizeRows(a), rg)
    }

    /// The flat element `index` as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        let v = *t.values().get(index).ok_or_else(|| {
            DcrError::InvalidArgument(format!("index {index} out of range for {} values", t.len()))
        })?;
        let rg = self.needs(a);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, index), rg))
    }

    /// `-ln(a)`, elementwise.
    pub fn neg_log(&mut self, a: Var) -> Var {
        self.map(a, Op::NegLog(a), |x| -x.ln())
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Inner product of two equal-shaped tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Inverted dropout: at training time each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// At inference time (or with `rate == 0`) this returns `a` itself.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut SeededRng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DcrError::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.uniform01() < rate { 0.0 } else { keep })
            .collect();
        let out = t.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        let rg = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout(a, mask), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(DcrError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.values();
        let out = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (r, k, c) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; r * k];
                    matmul_a_bt(g, val(*b), r, c, k, &mut da);
                    accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * c];
                    matmul_at_b(val(*a), g, r, k, c, &mut db);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, g);
                self.acc_if(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::OneMinus(a) => {
                let d: Vec<f64> = g.iter().map(|x| -x).collect();
                self.acc_if(grads, *a, &d);
            }
            Op::Scale(a, f) => {
                let d: Vec<f64> = g.iter().map(|x| x * f).collect();
                self.acc_if(grads, *a, &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.acc_if(grads, *a, &d);
            }
            Op::Tanh(a) => {
                let faulty = self.fault == Some(BackwardFault::TanhDerivative);
                let d: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(g, t)| if faulty { g * (1.0 - t) } else { g * (1.0 - t * t) })
                    .collect();
                self.acc_if(grads, *a, &d);
            }
            Op::Concat(a, b) => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                let rows = g.len() / (p + q).max(1);
                let mut da = Vec::with_capacity(rows * p);
                let mut db = Vec::with_capacity(rows * q);
                for r in 0..rows {
                    let base = r * (p + q);
                    da.extend_from_slice(&g[base..base + p]);
                    db.extend_from_slice(&g[base + p..base + p + q]);
                }
                self.acc_if(grads, *a, &da);
                self.acc_if(grads, *b, &db);
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                self.acc_if(grads, *a, &d);
            }
            Op::Gather(a, rows) => {
                if self.needs(*a) {
                    let t = self.value(*a);
                    let c = t.cols();
                    let mut d = vec![0.0; t.len()];
                    for (k, &i) in rows.iter().enumerate() {
                        for j in 0..c {
                            d[i * c + j] += g[k * c + j];
                        }
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::Stack(rows) => {
                let c = g.len() / rows.len();
                for (k, r) in rows.iter().enumerate() {
                    self.acc_if(grads, *r, &g[k * c..(k + 1) * c]);
                }
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(out.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    d.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                self.acc_if(grads, *a, &d);
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let c = node.value.cols().max(1);
                let mut d = Vec::with_capacity(g.len());
                for ((gr, yr), xr) in g.chunks(c).zip(out.chunks(c)).zip(x.chunks(c)) {
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < NORM_EPS {
                        d.extend(gr.iter().map(|g| g / NORM_EPS));
                    } else {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        d.extend(gr.iter().zip(yr).map(|(g, y)| (g - y * dot) / norm));
                    }
                }
                self.acc_if(grads, *a, &d);
            }
            Op::Pick(a, index) => {
                if self.needs(*a) {
                    let mut d = vec![0.0; self.value(*a).len()];
                    d[*index] = g[0];
                    accumulate(grads, *a, &d);
                }
            }
            Op::NegLog(a) => {
                let d: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| -g / x).collect();
                self.acc_if(grads, *a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.value(*a).len()];
                self.acc_if(grads, *a, &d);
            }
            Op::Dropout(a, mask) => {
                let d: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.acc_if(grads, *a, &d);
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
        if self.needs(v) {
            accumulate(grads, v, d);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// `out = a (r×k) · b (k×c)`.
fn matmul_into(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
}

/// `out = g (r×c) · bᵀ` where `b` is `k×c`.
fn matmul_a_bt(g: &[f64], b: &[f64], r: usize, c: usize, k: usize, out: &mut [f64]) {
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let brow = &b[p * c..(p + 1) * c];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out = aᵀ · g` where `a` is `r×k` and `g` is `r×c`.
fn matmul_at_b(a: &[f64], g: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * c..(p + 1) * c];
            orow.iter_mut().zip(grow).for_each(|(o, &gv)| *o += aip * gv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;

    fn random_tensor(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Checks d(sum(w ⊙ f(x)))/dx for a fixed random weighting `w`.
    fn check_unary(shape: Vec<usize>, seed: u64, f: impl Fn(&mut Tape, Var) -> Var) -> f64 {
        let mut rng = SeededRng::new(seed);
        let x0 = random_tensor(&mut rng, shape.clone());
        let w = random_tensor(&mut rng, vec![256]);
        let eval = |xs: &[f64], grad: bool| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(shape.clone(), xs.to_vec()).unwrap());
            let y = f(&mut tape, x);
            let n = tape.value(y).len();
            let wv = tape.constant(Tensor::new(tape.shape(y).to_vec(), w.values()[..n].to_vec()).unwrap());
            let l = tape.dot(y, wv).unwrap();
            let loss = tape.value(l).values()[0];
            let g = grad.then(|| tape.backward(l).unwrap().get_or_zeros(x, xs.len()));
            (loss, g)
        };
        let analytic = eval(x0.values(), true).1.unwrap();
        finite_difference_check(|p| eval(p, false).0, x0.values(), &analytic, 1e-5)
    }

    #[test]
    fn matmul_identity_and_projection() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).values(), &[1.0, 2.0, 3.0, 4.0]);

        let proj = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let col = tape.constant(Tensor::matrix(2, 1, vec![5.0, 7.0]).unwrap());
        let q = tape.matmul(proj, col).unwrap();
        assert_eq!(tape.value(q).values(), &[5.0, 0.0]);
        assert_eq!(tape.shape(q), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![3, 4]));
        let b = tape.constant(Tensor::zeros(vec![3, 2]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[3, 4]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(11);
        let a0 = random_tensor(&mut rng, vec![3, 4]);
        let b0 = random_tensor(&mut rng, vec![4, 2]);
        let eval = |params: &[f64], grad: bool| {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::matrix(3, 4, params[..12].to_vec()).unwrap());
            let b = tape.leaf(Tensor::matrix(4, 2, params[12..].to_vec()).unwrap());
            let c = tape.matmul(a, b).unwrap();
            let sq = tape.mul(c, c).unwrap();
            let l = tape.sum(sq);
            let loss = tape.value(l).values()[0];
            let g = grad.then(|| {
                let gs = tape.backward(l).unwrap();
                let mut v = gs.get_or_zeros(a, 12);
                v.extend(gs.get_or_zeros(b, 8));
                v
            });
            (loss, g)
        };
        let params: Vec<f64> = a0.values().iter().chain(b0.values()).copied().collect();
        let analytic = eval(&params, true).1.unwrap();
        let err = finite_difference_check(|p| eval(p, false).0, &params, &analytic, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let z = tape.constant(Tensor::vector(vec![0.0; 3]));
        let m = tape.elementwise(a, z, ElementwiseKind::Mul).unwrap();
        assert_eq!(tape.value(m).values(), &[0.0, 0.0, 0.0]);
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let s = tape.elementwise(x, y, ElementwiseKind::Add).unwrap();
        assert_eq!(tape.value(s).values(), &[4.0, 6.0]);
        assert!(tape.add(a, x).is_err());
    }

    #[test]
    fn mul_gradient_check() {
        let mut rng = SeededRng::new(5);
        let other = random_tensor(&mut rng, vec![5]);
        let err = check_unary(vec![5], 3, |t, x| {
            let o = t.constant(other.clone());
            t.mul(x, o).unwrap()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.activation(z, ActivationKind::Sigmoid);
        let t = tape.activation(z, ActivationKind::Tanh);
        assert_eq!(tape.value(s).values(), &[0.5]);
        assert_eq!(tape.value(t).values(), &[0.0]);
        assert!(check_unary(vec![10], 1, |t, x| t.sigmoid(x)) < 1e-6);
        assert!(check_unary(vec![10], 2, |t, x| t.tanh(x)) < 1e-6);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn concat_examples_and_gradient_split() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0]));
        let b = tape.leaf(Tensor::vector(vec![2.0, 3.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[1.0, 2.0, 3.0]);

        let e = tape.constant(Tensor::vector(vec![]));
        let f = tape.constant(Tensor::vector(vec![5.0]));
        let ef = tape.concat(e, f).unwrap();
        assert_eq!(tape.value(ef).values(), &[5.0]);

        let w = tape.constant(Tensor::vector(vec![7.0, 8.0, 9.0]));
        let l = tape.dot(c, w).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &[7.0]);
        assert_eq!(g.get(b).unwrap(), &[8.0, 9.0]);

        let m = tape.constant(Tensor::zeros(vec![2, 3]));
        let n = tape.constant(Tensor::zeros(vec![3, 1]));
        assert!(tape.concat(m, n).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let cases: [(&[f64], &[f64]); 3] = [
            (&[0.0, 0.0], &[0.5, 0.5]),
            (&[-42.0], &[1.0]),
            (&[1000.0, 1000.0], &[0.5, 0.5]),
        ];
        for (input, expected) in cases {
            let x = tape.constant(Tensor::vector(input.to_vec()));
            let y = tape.softmax(x).unwrap();
            assert_eq!(tape.value(y).values(), expected);
        }
        let empty = tape.constant(Tensor::vector(vec![]));
        assert!(tape.softmax(empty).is_err());
        assert!(check_unary(vec![6], 9, |t, x| t.softmax(x).unwrap()) < 1e-6);
        assert!(check_unary(vec![3, 4], 10, |t, x| t.softmax(x).unwrap()) < 1e-6);
    }

    #[test]
    fn remaining_primitives_pass_gradient_checks() {
        assert!(check_unary(vec![3, 4], 20, |t, x| t.transpose(x).unwrap()) < 1e-6);
        assert!(check_unary(vec![4, 3], 21, |t, x| t.gather_rows(x, &[2, 0, 2]).unwrap()) < 1e-6);
        assert!(check_unary(vec![3, 5], 22, |t, x| t.normalize_rows(x)) < 1e-6);
        assert!(check_unary(vec![5], 23, |t, x| t.one_minus(x)) < 1e-6);
        assert!(check_unary(vec![5], 24, |t, x| t.scale(x, -2.5)) < 1e-6);
        assert!(check_unary(vec![2, 3], 25, |t, x| {
            let r0 = t.row(x, 1).unwrap();
            let r1 = t.row(x, 0).unwrap();
            t.stack_rows(&[r0, r1, r0]).unwrap()
        }) < 1e-6);
        assert!(check_unary(vec![4], 26, |t, x| {
            let s = t.softmax(x).unwrap();
            let p = t.pick(s, 2).unwrap();
            t.neg_log(p)
        }) < 1e-6);
        assert!(check_unary(vec![3, 2], 27, |t, x| {
            let y = t.constant(Tensor::zeros(vec![3, 2]));
            let s = t.sub(y, x).unwrap();
            t.tanh(s)
        }) < 1e-6);
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let l = tape.dot(x, x).unwrap();
        assert_eq!(tape.backward(l).unwrap().get(x).unwrap(), &[2.0, 4.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // f(x) = sum(tanh(x)) + sum(x ⊙ c): gradient is the sum of the single-use gradients.
        let c = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let x0 = Tensor::vector(vec![0.1, 0.5, -0.7]);
        let grad_of = |use_tanh: bool, use_mul: bool| {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let cv = tape.constant(c.clone());
            let mut terms = Vec::new();
            if use_tanh {
                let t = tape.tanh(x);
                terms.push(tape.sum(t));
            }
            if use_mul {
                terms.push(tape.dot(x, cv).unwrap());
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = tape.add(total, t).unwrap();
            }
            tape.backward(total).unwrap().get(x).unwrap().to_vec()
        };
        let both = grad_of(true, true);
        let a = grad_of(true, false);
        let b = grad_of(false, true);
        for i in 0..3 {
            assert!((both[i] - (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let k = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let l = tape.dot(x, k).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(k).is_none());
        assert_eq!(g.get(x).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = SeededRng::new(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0; 8]));
        assert_eq!(tape.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.2, &mut rng, false).unwrap(), x);
        assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());

        let ones = tape.constant(Tensor::vector(vec![1.0; 100_000]));
        let d = tape.dropout(ones, 0.5, &mut rng, true).unwrap();
        let vals = tape.value(d).values();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn faulty_tanh_rule_is_detected() {
        let mut rng = SeededRng::new(4);
        let x0 = random_tensor(&mut rng, vec![6]);
        let eval = |xs: &[f64], tape: &mut Tape| {
            let x = tape.leaf(Tensor::vector(xs.to_vec()));
            let t = tape.tanh(x);
            let l = tape.dot(t, t).unwrap();
            (x, l)
        };
        let mut tape = Tape::with_fault(BackwardFault::TanhDerivative);
        let (x, l) = eval(x0.values(), &mut tape);
        let analytic = tape.backward(l).unwrap().get_or_zeros(x, 6);
        let err = finite_difference_check(
            |p| {
                let mut t = Tape::new();
                let (_, l) = eval(p, &mut t);
                t.value(l).values()[0]
            },
            x0.values(),
            &analytic,
            1e-5,
        );
        assert!(err > 1e-3, "{err}");
    }
}
