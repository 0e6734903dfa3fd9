//! A small eager tape for reverse-mode differentiation.
//!
//! Every vector-Jacobian product is itself recorded on the tape with the same
//! primitive ops, so a gradient node can be differentiated again. That is what
//! makes Hessian-vector products available by reverse-over-reverse:
//! `H v = ∇(∇L · v)`.
//!
//! Nonlinearities whose derivative is piecewise constant (ReLU, the max shift
//! inside softmax) are expressed as products with constant masks, which keeps
//! their second derivative exactly zero.

use std::rc::Rc;

use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Powf(Var, f64),
    /// `[.., n] + [n]`
    AddRow(Var, Var),
    /// `[.., n] * [n]`
    MulRow(Var, Var),
    /// `[.., n] -> [n]`
    SumRows(Var),
    /// `[n] -> [.., n]`
    ExpandRows(Var),
    /// `[.., n] + [.., 1]`
    AddCol(Var, Var),
    /// `[.., n] * [.., 1]`
    MulCol(Var, Var),
    /// `[.., n] -> [.., 1]`
    SumLast(Var),
    /// `[.., 1] -> [.., n]`
    ExpandLast(Var),
    /// `any -> []`
    SumAll(Var),
    /// `[] -> any`
    ExpandAll(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    /// `[V, d] -> [m, d]`
    GatherRows(Var, Rc<[usize]>),
    /// `[m, d] -> [V, d]`, accumulating repeated indices.
    ScatterRows(Var, Rc<[usize]>),
}

impl Op {
    fn inputs(&self) -> (Option<Var>, Option<Var>) {
        use Op::*;
        match *self {
            Leaf | Const => (None, None),
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) | AddCol(a, b)
            | MulCol(a, b) => (Some(a), Some(b)),
            MatMul { a, b, .. } => (Some(a), Some(b)),
            Scale(a, _) | AddScalar(a) | Exp(a) | Log(a) | Tanh(a) | Powf(a, _) | SumRows(a)
            | ExpandRows(a) | SumLast(a) | ExpandLast(a) | SumAll(a) | ExpandAll(a)
            | Reshape(a) | Permute(a, _) | GatherRows(a, _) | ScatterRows(a, _) => {
                (Some(a), None)
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape. Nodes are appended in evaluation order and never removed.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let (a, b) = op.inputs();
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Const => false,
            _ => {
                a.is_some_and(|v| self.nodes[v.0].requires_grad)
                    || b.is_some_and(|v| self.nodes[v.0].requires_grad)
            }
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = if p.fract() == 0.0 && p.abs() < 64.0 {
            let e = p as i32;
            self.value(a).map(|x| x.powi(e))
        } else {
            self.value(a).map(|x| x.powf(p))
        };
        self.push(v, Op::Powf(a, p))
    }

    /// `max(x, 0)` as `x ⊙ 1[x > 0]` with a constant mask.
    pub fn relu(&mut self, a: Var) -> Var {
        let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let av = self.value(a);
        assert_eq!(bv.rank(), 1);
        assert_eq!(av.last_dim(), bv.len(), "add_row width mismatch");
        let d = bv.len();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let av = self.value(a);
        assert_eq!(bv.rank(), 1);
        assert_eq!(av.last_dim(), bv.len(), "mul_row width mismatch");
        let d = bv.len();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x *= y;
            }
        }
        self.push(out, Op::MulRow(a, b))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = av.last_dim();
        let mut out = vec![0.0; d];
        for row in av.data().chunks(d.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push(Tensor::new(vec![d], out), Op::SumRows(a))
    }

    pub fn expand_rows(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 1);
        assert_eq!(shape.last().copied(), Some(av.len()));
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let mut out = Vec::with_capacity(rows * av.len());
        for _ in 0..rows {
            out.extend_from_slice(av.data());
        }
        self.push(Tensor::new(shape.to_vec(), out), Op::ExpandRows(a))
    }

    pub fn add_col(&mut self, a: Var, s: Var) -> Var {
        let out = self.col_apply(a, s, |x, y| x + y);
        self.push(out, Op::AddCol(a, s))
    }

    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        let out = self.col_apply(a, s, |x, y| x * y);
        self.push(out, Op::MulCol(a, s))
    }

    fn col_apply(&self, a: Var, s: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let sv = self.value(s);
        assert_eq!(sv.last_dim(), 1);
        assert_eq!(av.rows(), sv.len(), "column broadcast mismatch");
        let d = av.last_dim();
        let mut out = av.clone();
        for (row, &y) in out.data_mut().chunks_mut(d.max(1)).zip(sv.data()) {
            for x in row.iter_mut() {
                *x = f(*x, y);
            }
        }
        out
    }

    pub fn sum_last(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = av.last_dim();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("sum_last needs rank >= 1") = 1;
        let data = av.data().chunks(d.max(1)).map(|r| r.iter().sum()).collect();
        self.push(Tensor::new(shape, data), Op::SumLast(a))
    }

    pub fn expand_last(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.last_dim(), 1);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut data = Vec::with_capacity(av.len() * n);
        for &x in av.data() {
            data.extend(std::iter::repeat(x).take(n));
        }
        self.push(Tensor::new(shape, data), Op::ExpandLast(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn expand_all(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), 1);
        let t = Tensor::full(shape, av.data()[0]);
        self.push(t, Op::ExpandAll(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let v = tensor::matmul(self.value(a), self.value(b), ta, tb);
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshaped(shape.to_vec());
        self.push(v, Op::Reshape(a))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let v = tensor::permute(self.value(a), perm);
        self.push(v, Op::Permute(a, perm.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2);
        let d = av.last_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            data.extend_from_slice(av.row(i));
        }
        let t = Tensor::new(vec![idx.len(), d], data);
        self.push(t, Op::GatherRows(a, idx))
    }

    pub fn scatter_rows(&mut self, a: Var, idx: Rc<[usize]>, n_rows: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2);
        assert_eq!(av.shape()[0], idx.len());
        let d = av.last_dim();
        let mut out = Tensor::zeros(&[n_rows, d]);
        for (r, &i) in idx.iter().enumerate() {
            let src = av.row(r);
            for (o, x) in out.data_mut()[i * d..(i + 1) * d].iter_mut().zip(src) {
                *o += x;
            }
        }
        self.push(out, Op::ScatterRows(a, idx))
    }

    /// Numerically stable `log Σ exp` over the last axis, `[.., n] -> [.., 1]`.
    pub fn logsumexp_last(&mut self, a: Var) -> Var {
        let shift = self.value(a).row_max().map(|m| -m);
        let neg_max = self.constant(shift);
        let shifted = self.add_col(a, neg_max);
        let e = self.exp(shifted);
        let s = self.sum_last(e);
        let l = self.log(s);
        let pos_max = self.scale(neg_max, -1.0);
        self.add(l, pos_max)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let shift = self.value(a).row_max().map(|m| -m);
        let neg_max = self.constant(shift);
        let shifted = self.add_col(a, neg_max);
        let e = self.exp(shifted);
        let s = self.sum_last(e);
        let inv = self.powf(s, -1.0);
        self.mul_col(e, inv)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        let x3 = self.powf(x, 3.0);
        let x3 = self.scale(x3, 0.044715);
        let inner = self.add(x, x3);
        let inner = self.scale(inner, C);
        let t = self.tanh(inner);
        let t1 = self.add_scalar(t, 1.0);
        let y = self.mul(x, t1);
        self.scale(y, 0.5)
    }

    /// Normalizes the last axis to zero mean, unit variance, then applies gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let d = self.value(x).last_dim() as f64;
        let s = self.sum_last(x);
        let neg_mean = self.scale(s, -1.0 / d);
        let xc = self.add_col(x, neg_mean);
        let sq = self.mul(xc, xc);
        let ss = self.sum_last(sq);
        let var = self.scale(ss, 1.0 / d);
        let var = self.add_scalar(var, eps);
        let inv = self.powf(var, -0.5);
        let y = self.mul_col(xc, inv);
        let y = self.mul_row(y, gain);
        self.add_row(y, bias)
    }

    /// Gradients of the scalar `output` with respect to `wrt`.
    ///
    /// The returned nodes live on this tape and are differentiable in turn.
    /// Inputs that `output` does not depend on receive a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(
            self.value(output).len(),
            1,
            "grad requires a scalar output"
        );
        let n = output.0 + 1;
        let mut needed = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needed[w.0] = true;
            }
        }
        for i in 0..n {
            if needed[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let (a, b) = self.nodes[i].op.inputs();
            needed[i] = a.is_some_and(|v| needed[v.0]) || b.is_some_and(|v| needed[v.0]);
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        let out_shape = self.shape(output).to_vec();
        adj[output.0] = Some(self.constant(Tensor::full(&out_shape, 1.0)));

        for i in (0..n).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let this = Var(i);
            let mut contribs: Vec<(Var, Var)> = Vec::with_capacity(2);
            let need = |v: Var| needed[v.0];
            match op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    if need(a) {
                        contribs.push((a, g));
                    }
                    if need(b) {
                        contribs.push((b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if need(a) {
                        contribs.push((a, g));
                    }
                    if need(b) {
                        let gb = self.scale(g, -1.0);
                        contribs.push((b, gb));
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        let ga = self.mul(g, b);
                        contribs.push((a, ga));
                    }
                    if need(b) {
                        let gb = self.mul(g, a);
                        contribs.push((b, gb));
                    }
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c);
                    contribs.push((a, ga));
                }
                Op::AddScalar(a) => contribs.push((a, g)),
                Op::Exp(a) => {
                    let ga = self.mul(g, this);
                    contribs.push((a, ga));
                }
                Op::Log(a) => {
                    let inv = self.powf(a, -1.0);
                    let ga = self.mul(g, inv);
                    contribs.push((a, ga));
                }
                Op::Tanh(a) => {
                    let sq = self.mul(this, this);
                    let neg = self.scale(sq, -1.0);
                    let d = self.add_scalar(neg, 1.0);
                    let ga = self.mul(g, d);
                    contribs.push((a, ga));
                }
                Op::Powf(a, p) => {
                    let ga = if p == 1.0 {
                        g
                    } else {
                        let pm = self.powf(a, p - 1.0);
                        let d = self.scale(pm, p);
                        self.mul(g, d)
                    };
                    contribs.push((a, ga));
                }
                Op::AddRow(a, b) => {
                    if need(a) {
                        contribs.push((a, g));
                    }
                    if need(b) {
                        let gb = self.sum_rows(g);
                        contribs.push((b, gb));
                    }
                }
                Op::MulRow(a, b) => {
                    if need(a) {
                        let ga = self.mul_row(g, b);
                        contribs.push((a, ga));
                    }
                    if need(b) {
                        let ga = self.mul(g, a);
                        let gb = self.sum_rows(ga);
                        contribs.push((b, gb));
                    }
                }
                Op::SumRows(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.expand_rows(g, &shape);
                    contribs.push((a, ga));
                }
                Op::ExpandRows(a) => {
                    let ga = self.sum_rows(g);
                    contribs.push((a, ga));
                }
                Op::AddCol(a, s) => {
                    if need(a) {
                        contribs.push((a, g));
                    }
                    if need(s) {
                        let gs = self.sum_last(g);
                        contribs.push((s, gs));
                    }
                }
                Op::MulCol(a, s) => {
                    if need(a) {
                        let ga = self.mul_col(g, s);
                        contribs.push((a, ga));
                    }
                    if need(s) {
                        let ga = self.mul(g, a);
                        let gs = self.sum_last(ga);
                        contribs.push((s, gs));
                    }
                }
                Op::SumLast(a) => {
                    let d = self.value(a).last_dim();
                    let ga = self.expand_last(g, d);
                    contribs.push((a, ga));
                }
                Op::ExpandLast(a) => {
                    let ga = self.sum_last(g);
                    contribs.push((a, ga));
                }
                Op::SumAll(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.expand_all(g, &shape);
                    contribs.push((a, ga));
                }
                Op::ExpandAll(a) => {
                    let s = self.sum_all(g);
                    let shape = self.shape(a).to_vec();
                    let ga = self.reshape(s, &shape);
                    contribs.push((a, ga));
                }
                Op::MatMul { a, b, ta, tb } => {
                    if need(a) {
                        let ga = if !ta {
                            self.matmul(g, b, false, !tb)
                        } else {
                            self.matmul(b, g, tb, true)
                        };
                        contribs.push((a, ga));
                    }
                    if need(b) {
                        let gb = if !tb {
                            self.matmul(a, g, !ta, false)
                        } else {
                            self.matmul(g, a, true, ta)
                        };
                        contribs.push((b, gb));
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.reshape(g, &shape);
                    contribs.push((a, ga));
                }
                Op::Permute(a, perm) => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let ga = self.permute(g, &inv);
                    contribs.push((a, ga));
                }
                Op::GatherRows(a, idx) => {
                    let rows = self.shape(a)[0];
                    let ga = self.scatter_rows(g, idx, rows);
                    contribs.push((a, ga));
                }
                Op::ScatterRows(a, idx) => {
                    let ga = self.gather_rows(g, idx);
                    contribs.push((a, ga));
                }
            }
            for (target, contrib) in contribs {
                adj[target.0] = Some(match adj[target.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(w).to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect()
    }
}
