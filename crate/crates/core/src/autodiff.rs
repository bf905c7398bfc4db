//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly (values are computed on the
//! spot) and [`Tape::backward`] walks the record in reverse. Leaves created
//! with [`Tape::constant`] never receive gradients, which is how parameter
//! blocks are frozen.

use crate::error::{invalid, Error, Result};
use crate::graph;
use crate::Matrix;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a (n×d) + r (1×d)` broadcast over rows.
    AddRow(usize, usize),
    /// `a (n×d) ⊙ r (1×d)` broadcast over rows.
    MulRow(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Exp(usize),
    /// Natural log; non-positive inputs give non-finite values.
    Ln(usize),
    Clamp(usize, f64, f64),
    Cols(usize, usize),
    Rows(usize, usize),
    HStack(Vec<usize>),
    /// Column `c` comes from the second input where `mask[c]`, else the first.
    MaskMix(usize, usize, Vec<bool>),
    ConstMul(usize, Matrix),
    Sum(usize),
    Mean(usize),
    /// Mean binary cross-entropy of logits against a constant target.
    BceLogits(usize, f64),
    Acyclicity(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Transpose(..) => "transpose",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Clamp(..) => "clamp",
            Op::Cols(..) => "cols",
            Op::Rows(..) => "rows",
            Op::HStack(..) => "hstack",
            Op::MaskMix(..) => "mask_mix",
            Op::ConstMul(..) => "const_mul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::BceLogits(..) => "bce_logits",
            Op::Acyclicity(..) => "acyclicity",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<&'static str>,
}

/// Gradients indexed by [`Var`]; `None` for values that do not depend on
/// any trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_row(r: &Matrix, rows: usize) -> Matrix {
    Matrix::from_fn(rows, r.ncols(), |_, c| r[(0, c)])
}

fn column_sums(m: &Matrix) -> Matrix {
    Matrix::from_fn(1, m.ncols(), |_, c| m.column(c).sum())
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    /// Name of the first operation that produced a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.first_non_finite
    }

    /// Fails with the offending operation if anything went non-finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        if self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.shape(a).1,
            self.shape(b).0,
            "matmul: inner dimensions differ"
        );
        let v = self.value(a) * self.value(b);
        let ng = self.ng(&[a.0, b.0]);
        self.push(v, Op::MatMul(a.0, b.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a.0, b.0]);
        self.push(v, Op::Add(a.0, b.0), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        let ng = self.ng(&[a.0, b.0]);
        self.push(v, Op::Sub(a.0, b.0), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a).component_mul(self.value(b));
        let ng = self.ng(&[a.0, b.0]);
        self.push(v, Op::Mul(a.0, b.0), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "add_row: row shape");
        let v = self.value(a) + broadcast_row(self.value(row), n);
        let ng = self.ng(&[a.0, row.0]);
        self.push(v, Op::AddRow(a.0, row.0), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (n, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "mul_row: row shape");
        let v = self
            .value(a)
            .component_mul(&broadcast_row(self.value(row), n));
        let ng = self.ng(&[a.0, row.0]);
        self.push(v, Op::MulRow(a.0, row.0), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Transpose(a.0), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Scale(a.0, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).add_scalar(s);
        let ng = self.ng(&[a.0]);
        self.push(v, Op::AddScalar(a.0), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Tanh(a.0), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Exp(a.0), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Ln(a.0), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Clamp(a.0, lo, hi), ng)
    }

    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).columns(start, width).into_owned();
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Cols(a.0, start), ng)
    }

    pub fn rows(&mut self, a: Var, start: usize, height: usize) -> Var {
        let v = self.value(a).rows(start, height).into_owned();
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Rows(a.0, start), ng)
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hstack of nothing");
        let rows = self.shape(parts[0]).0;
        assert!(
            parts.iter().all(|p| self.shape(*p).0 == rows),
            "hstack: row counts differ"
        );
        let width: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut v = Matrix::zeros(rows, width);
        let mut at = 0;
        for p in parts {
            let w = self.shape(*p).1;
            v.columns_mut(at, w).copy_from(self.value(*p));
            at += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        self.push(v, Op::HStack(ids), ng)
    }

    pub fn mask_mix(&mut self, a: Var, b: Var, mask: &[bool]) -> Var {
        self.same_shape(a, b, "mask_mix");
        assert_eq!(mask.len(), self.shape(a).1, "mask_mix: mask length");
        let mut v = self.value(a).clone();
        for (c, &m) in mask.iter().enumerate() {
            if m {
                v.set_column(c, &self.value(b).column(c));
            }
        }
        let ng = self.ng(&[a.0, b.0]);
        self.push(v, Op::MaskMix(a.0, b.0, mask.to_vec()), ng)
    }

    pub fn const_mul(&mut self, a: Var, c: &Matrix) -> Var {
        assert_eq!(self.shape(a), c.shape(), "const_mul: shape mismatch");
        let v = self.value(a).component_mul(c);
        let ng = self.ng(&[a.0]);
        self.push(v, Op::ConstMul(a.0, c.clone()), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).sum());
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).mean());
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Mean(a.0), ng)
    }

    pub fn bce_logits(&mut self, logits: Var, target: f64) -> Var {
        let l = self.value(logits);
        let v = scalar(
            l.iter().map(|&x| softplus(x) - target * x).sum::<f64>() / l.len().max(1) as f64,
        );
        let ng = self.ng(&[logits.0]);
        self.push(v, Op::BceLogits(logits.0, target), ng)
    }

    /// `tr(exp(A ⊙ A)) - d` with its analytic gradient.
    pub fn acyclicity(&mut self, a: Var) -> Result<Var> {
        // Overflow inside A ⊙ A is a numeric failure, not bad input.
        if self.value(a).iter().any(|x| !(x * x).is_finite()) {
            return Err(Error::NonFinite { op: "acyclicity" });
        }
        let v = graph::acyclicity_penalty_matrix(self.value(a))?;
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "acyclicity" });
        }
        let ng = self.ng(&[a.0]);
        Ok(self.push(scalar(v), Op::Acyclicity(a.0), ng))
    }

    /// Sum of squares of every entry.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum(sq)
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.shape(out) != (1, 1) {
            return Err(invalid("backward needs a scalar output"));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(scalar(1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contribs = self.local_grads(node, &g)?;
            grads[i] = Some(g);
            for (j, c) in contribs {
                if !self.nodes[j].needs_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => *acc += c,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Matrix) -> Result<Vec<(usize, Matrix)>> {
        let val = |i: usize| &self.nodes[i].value;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![(*a, g * val(*b).transpose()), (*b, val(*a).transpose() * g)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::Mul(a, b) => vec![
                (*a, g.component_mul(val(*b))),
                (*b, g.component_mul(val(*a))),
            ],
            Op::AddRow(a, r) => vec![(*a, g.clone()), (*r, column_sums(g))],
            Op::MulRow(a, r) => {
                let rb = broadcast_row(val(*r), g.nrows());
                vec![
                    (*a, g.component_mul(&rb)),
                    (*r, column_sums(&g.component_mul(val(*a)))),
                ]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Scale(a, s) => vec![(*a, g * *s)],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Tanh(a) => vec![(*a, g.component_mul(&node.value.map(|y| 1.0 - y * y)))],
            Op::Exp(a) => vec![(*a, g.component_mul(&node.value))],
            Op::Ln(a) => vec![(*a, g.component_div(val(*a)))],
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                let m = x.map(|v| if v > *lo && v < *hi { 1.0 } else { 0.0 });
                vec![(*a, g.component_mul(&m))]
            }
            Op::Cols(a, start) => {
                let mut full = Matrix::zeros(val(*a).nrows(), val(*a).ncols());
                full.columns_mut(*start, g.ncols()).copy_from(g);
                vec![(*a, full)]
            }
            Op::Rows(a, start) => {
                let mut full = Matrix::zeros(val(*a).nrows(), val(*a).ncols());
                full.rows_mut(*start, g.nrows()).copy_from(g);
                vec![(*a, full)]
            }
            Op::HStack(parts) => {
                let mut at = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = val(p).ncols();
                        let piece = g.columns(at, w).into_owned();
                        at += w;
                        (p, piece)
                    })
                    .collect()
            }
            Op::MaskMix(a, b, mask) => {
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (c, &m) in mask.iter().enumerate() {
                    if m {
                        ga.column_mut(c).fill(0.0);
                    } else {
                        gb.column_mut(c).fill(0.0);
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::ConstMul(a, c) => vec![(*a, g.component_mul(c))],
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Matrix::from_element(r, c, g[(0, 0)]))]
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let n = (r * c).max(1) as f64;
                vec![(*a, Matrix::from_element(r, c, g[(0, 0)] / n))]
            }
            Op::BceLogits(l, t) => {
                let x = val(*l);
                let n = x.len().max(1) as f64;
                let s = g[(0, 0)] / n;
                vec![(*l, x.map(|v| (sigmoid(v) - t) * s))]
            }
            Op::Acyclicity(a) => {
                let grad = graph::acyclicity_gradient_matrix(val(*a))?;
                vec![(*a, grad * g[(0, 0)])]
            }
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    /// Central differences of `f` around `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        Matrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            let mut p = x.clone();
            p[(r, c)] += h;
            let mut q = x.clone();
            q[(r, c)] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
    }

    #[test]
    fn half_squared_norm_has_identity_gradient() {
        let p = m(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let mut t = Tape::new();
        let v = t.param(p.clone());
        let s = t.sum_sq(v);
        let half = t.scale(s, 0.5);
        let g = t.backward(half).unwrap();
        assert_eq!(g.get(v).unwrap(), &p);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(m(1, 2, &[1.0, 2.0]));
        let b = t.param(m(1, 2, &[3.0, 4.0]));
        let prod = t.mul(a, b);
        let s = t.sum(prod);
        let g = t.backward(s).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &m(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn composite_matches_finite_differences() {
        let x = m(3, 2, &[0.3, -0.2, 1.1, 0.4, -0.7, 0.9]);
        let w0 = m(2, 3, &[0.5, -0.1, 0.2, 0.3, 0.8, -0.6]);
        let build = |w: &Matrix| -> (Tape, Var, Var) {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.param(w.clone());
            let b = t.constant(m(1, 3, &[0.1, 0.0, -0.2]));
            let h = t.affine(xv, wv, b);
            let h = t.tanh(h);
            let e = t.exp(h);
            let e = t.ln(e);
            let e = t.exp(e);
            let c = t.cols(e, 1, 2);
            let c = t.rows(c, 0, 3);
            let r = t.cols(wv, 0, 2);
            let r = t.rows(r, 0, 1);
            let r = t.transpose(r);
            let r = t.transpose(r);
            let mr = t.mul_row(xv, r);
            let st = t.hstack(&[c, mr]);
            let mixed = t.mask_mix(st, st, &[true, false, true, false]);
            let bce = t.bce_logits(mixed, 0.3);
            let q = t.mean(mixed);
            let out = t.add(bce, q);
            (t, wv, out)
        };
        let (t, wv, out) = build(&w0);
        let g = t.backward(out).unwrap();
        let num = numeric_grad(&w0, |w| {
            let (t, _, o) = build(w);
            t.scalar_value(o)
        });
        assert!((g.get(wv).unwrap() - num).amax() < 1e-7);
    }

    #[test]
    fn acyclicity_node_uses_analytic_gradient() {
        let a0 = m(3, 3, &[0.0, 0.7, 0.0, 0.0, 0.0, 0.4, 0.5, 0.0, 0.0]);
        let mut t = Tape::new();
        let a = t.param(a0.clone());
        let h = t.acyclicity(a).unwrap();
        let g = t.backward(h).unwrap();
        let num = numeric_grad(&a0, |w| graph::acyclicity_penalty_matrix(w).unwrap());
        assert!((g.get(a).unwrap() - num).amax() < 1e-7);
    }

    #[test]
    fn non_finite_values_are_named() {
        let mut t = Tape::new();
        let a = t.param(m(1, 1, &[800.0]));
        let e = t.exp(a);
        let s = t.sum(e);
        assert_eq!(t.first_non_finite(), Some("exp"));
        match t.backward(s) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "exp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut t = Tape::new();
        let a = t.param(m(1, 3, &[-10.0, 0.5, 10.0]));
        let c = t.clamp(a, -8.0, 8.0);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &m(1, 3, &[0.0, 1.0, 0.0]));
    }
}
