//! Directed-graph mathematics for structure learning: the matrix
//! exponential, the trace-exponential acyclicity penalty and its gradient,
//! DAG checks, thresholding, and the TPR/FDR/SHD rubrics.
//!
//! Adjacency convention: entry `(j, i)` is the weight of the edge `j -> i`,
//! so column `i` holds the incoming weights of node `i`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::Matrix;

/// Largest graph the dense routines accept.
pub const MAX_NODES: usize = 64;

/// Default edge threshold for [`binarize`].
pub const DEFAULT_TAU: f64 = 0.3;

const EXPM_ORDER: usize = 12;
const EXPM_SCALED_NORM: f64 = 0.5;

/// Real-weighted adjacency matrix with node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: Matrix,
    names: Vec<String>,
}

impl WeightedDigraph {
    pub fn new(weights: Matrix, names: Vec<String>) -> Result<Self> {
        check_square_finite(&weights)?;
        if names.len() != weights.nrows() {
            return Err(invalid(format!(
                "{} node names for a {}-node graph",
                names.len(),
                weights.nrows()
            )));
        }
        let mut weights = weights;
        weights.fill_diagonal(0.0);
        Ok(Self { weights, names })
    }

    /// Nodes named `0..d`.
    pub fn unnamed(weights: Matrix) -> Result<Self> {
        let names = (0..weights.nrows()).map(|i| i.to_string()).collect();
        Self::new(weights, names)
    }

    pub fn zeros(names: Vec<String>) -> Self {
        let d = names.len();
        Self {
            weights: Matrix::zeros(d, d),
            names,
        }
    }

    pub fn d(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Overwrites the weights, clamping the diagonal to zero.
    pub fn set_weights(&mut self, weights: Matrix) -> Result<()> {
        check_square_finite(&weights)?;
        if weights.nrows() != self.d() {
            return Err(invalid("weight matrix changed size"));
        }
        self.weights = weights;
        self.weights.fill_diagonal(0.0);
        Ok(())
    }

    /// L2 norm of the incoming weights of each node.
    pub fn in_weight_norms(&self) -> Vec<f64> {
        (0..self.d())
            .map(|i| self.weights.column(i).norm())
            .collect()
    }

    /// Weight 1.0 on every edge of `g`.
    pub fn from_binary(g: &BinaryGraph, weight: f64) -> Self {
        let d = g.d();
        let weights = Matrix::from_fn(d, d, |j, i| if g.has_edge(j, i) { weight } else { 0.0 });
        Self {
            weights,
            names: g.names.clone(),
        }
    }

    /// Relabels nodes: entry `(a, b)` of the result is entry
    /// `(order[a], order[b])` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.d())?;
        let weights = Matrix::from_fn(self.d(), self.d(), |a, b| {
            self.weights[(order[a], order[b])]
        });
        Ok(Self {
            weights,
            names: order.iter().map(|&o| self.names[o].clone()).collect(),
        })
    }
}

/// Unweighted directed graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryGraph {
    d: usize,
    edges: Vec<bool>,
    names: Vec<String>,
}

impl BinaryGraph {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            edges: vec![false; d * d],
            names: (0..d).map(|i| i.to_string()).collect(),
        }
    }

    pub fn with_names(names: Vec<String>) -> Self {
        let d = names.len();
        Self {
            d,
            edges: vec![false; d * d],
            names,
        }
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(d);
        for &(from, to) in edges {
            g.add_edge(from, to)?;
        }
        Ok(g)
    }

    pub fn renamed(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(invalid("name count does not match node count"));
        }
        self.names = names;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges[from * self.d + to]
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from >= self.d || to >= self.d {
            return Err(invalid(format!("edge {from}->{to} out of range")));
        }
        if from == to {
            return Err(invalid(format!("self-loop on node {from}")));
        }
        self.edges[from * self.d + to] = true;
        Ok(())
    }

    pub fn remove_edge(&mut self, from: usize, to: usize) {
        self.edges[from * self.d + to] = false;
    }

    /// Edges as `(from, to)` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for from in 0..self.d {
            for to in 0..self.d {
                if self.has_edge(from, to) {
                    out.push((from, to));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        (0..self.d).filter(|&p| self.has_edge(p, node)).collect()
    }

    /// Nodes without parents.
    pub fn roots(&self) -> Vec<usize> {
        (0..self.d)
            .filter(|&n| self.parents(n).is_empty())
            .collect()
    }

    pub fn non_roots(&self) -> Vec<usize> {
        (0..self.d)
            .filter(|&n| !self.parents(n).is_empty())
            .collect()
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.d)?;
        let mut g = Self::with_names(order.iter().map(|&o| self.names[o].clone()).collect());
        for a in 0..self.d {
            for b in 0..self.d {
                g.edges[a * self.d + b] = self.has_edge(order[a], order[b]);
            }
        }
        Ok(g)
    }
}

/// Causal-discovery rubrics of a predicted graph against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphRubrics {
    pub tpr: f64,
    pub fdr: f64,
    pub shd: usize,
}

fn check_square_finite(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(invalid(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() > MAX_NODES {
        return Err(invalid(format!(
            "{} nodes exceeds the limit of {MAX_NODES}",
            m.nrows()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    Ok(())
}

fn check_permutation(order: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if order.len() != d {
        return Err(invalid("permutation has wrong length"));
    }
    for &o in order {
        if o >= d || seen[o] {
            return Err(invalid("not a permutation"));
        }
        seen[o] = true;
    }
    Ok(())
}

/// `e^M` by scaling and squaring around a truncated Taylor series.
pub fn matrix_exponential(m: &Matrix) -> Result<Matrix> {
    check_square_finite(m)?;
    let d = m.nrows();
    let norm = one_norm(m);
    let mut squarings = 0u32;
    if norm > EXPM_SCALED_NORM {
        squarings = (norm / EXPM_SCALED_NORM).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);

    // Horner form of sum_{k=0}^{order} S^k / k!
    let identity = Matrix::identity(d, d);
    let mut acc = identity.clone();
    for k in (1..=EXPM_ORDER).rev() {
        acc = &identity + (&scaled * &acc) / k as f64;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    Ok(acc)
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `h(A) = tr(exp(A ⊙ A)) - d`; zero exactly when the support of `A` is acyclic.
pub fn acyclicity_penalty(a: &WeightedDigraph) -> f64 {
    acyclicity_penalty_matrix(a.weights()).expect("validated graph")
}

pub(crate) fn acyclicity_penalty_matrix(w: &Matrix) -> Result<f64> {
    let e = matrix_exponential(&w.component_mul(w))?;
    Ok((e.trace() - w.nrows() as f64).max(0.0))
}

/// Gradient of [`acyclicity_penalty`]: `exp(A ⊙ A)^T ⊙ 2A`.
pub fn acyclicity_gradient(a: &WeightedDigraph) -> Matrix {
    acyclicity_gradient_matrix(a.weights()).expect("validated graph")
}

pub(crate) fn acyclicity_gradient_matrix(w: &Matrix) -> Result<Matrix> {
    let e = matrix_exponential(&w.component_mul(w))?;
    Ok(e.transpose().component_mul(w) * 2.0)
}

/// Depth-first search for a directed cycle.
pub fn is_dag(g: &BinaryGraph) -> bool {
    find_cycle(g).is_none()
}

/// One directed cycle as a node sequence, if any exists.
pub fn find_cycle(g: &BinaryGraph) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let d = g.d();
    let mut mark = vec![Mark::New; d];
    let mut stack: Vec<usize> = Vec::new();

    fn visit(
        g: &BinaryGraph,
        node: usize,
        mark: &mut [Mark],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        mark[node] = Mark::Active;
        stack.push(node);
        for next in 0..g.d() {
            if !g.has_edge(node, next) {
                continue;
            }
            match mark[next] {
                Mark::Active => {
                    let start = stack.iter().position(|&n| n == next).unwrap();
                    return Some(stack[start..].to_vec());
                }
                Mark::New => {
                    if let Some(c) = visit(g, next, mark, stack) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        stack.pop();
        mark[node] = Mark::Done;
        None
    }

    for start in 0..d {
        if mark[start] == Mark::New {
            if let Some(c) = visit(g, start, &mut mark, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Edge `(j, i)` kept iff `|A[j, i]| >= tau`.
pub fn binarize(a: &WeightedDigraph, tau: f64) -> Result<BinaryGraph> {
    if !(tau > 0.0) {
        return Err(invalid(format!("threshold must be positive, got {tau}")));
    }
    let d = a.d();
    let mut g = BinaryGraph::with_names(a.names().to_vec());
    for j in 0..d {
        for i in 0..d {
            if j != i && a.weights()[(j, i)].abs() >= tau {
                g.edges[j * d + i] = true;
            }
        }
    }
    Ok(g)
}

/// TPR, FDR and SHD (a reversal counts as one edit).
pub fn graph_rubrics(pred: &BinaryGraph, truth: &BinaryGraph) -> Result<GraphRubrics> {
    if pred.d() != truth.d() {
        return Err(invalid(format!(
            "predicted graph has {} nodes, truth has {}",
            pred.d(),
            truth.d()
        )));
    }
    let d = truth.d();
    let true_edges = truth.edge_count();
    let pred_edges = pred.edge_count();
    let mut correct = 0usize;
    let mut wrong = 0usize;
    for (from, to) in pred.edges() {
        if truth.has_edge(from, to) {
            correct += 1;
        } else {
            wrong += 1;
        }
    }
    let tpr = if true_edges == 0 {
        1.0
    } else {
        correct as f64 / true_edges as f64
    };
    let fdr = wrong as f64 / pred_edges.max(1) as f64;

    let mut shd = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let p = (pred.has_edge(i, j), pred.has_edge(j, i));
            let t = (truth.has_edge(i, j), truth.has_edge(j, i));
            shd += pair_edit_distance(p, t);
        }
    }
    Ok(GraphRubrics { tpr, fdr, shd })
}

// Edits between the four states of an unordered node pair.
fn pair_edit_distance(a: (bool, bool), b: (bool, bool)) -> usize {
    let count = |s: (bool, bool)| s.0 as usize + s.1 as usize;
    if a == b {
        0
    } else if count(a) == count(b) {
        // i->j versus j->i
        1
    } else {
        count(a).abs_diff(count(b))
    }
}

/// Kahn's algorithm, lowest ready index first.
pub fn topological_order(g: &BinaryGraph) -> Result<Vec<usize>> {
    let d = g.d();
    let mut indegree: Vec<usize> = (0..d).map(|n| g.parents(n).len()).collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..d).filter(|&n| indegree[n] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(Reverse(n)) = ready.pop() {
        order.push(n);
        for child in 0..d {
            if g.has_edge(n, child) {
                indegree[child] -= 1;
                if indegree[child] == 0 {
                    ready.push(Reverse(child));
                }
            }
        }
    }
    if order.len() < d {
        let cycle = find_cycle(g).expect("unfinished topological sort implies a cycle");
        return Err(Error::Cycle(cycle));
    }
    Ok(order)
}

#[derive(Serialize, Deserialize)]
struct GraphJson<T> {
    nodes: Vec<String>,
    weights: Vec<Vec<T>>,
}

impl Serialize for WeightedDigraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphJson {
            nodes: self.names.clone(),
            weights: crate::linalg::to_rows(&self.weights),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightedDigraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = GraphJson::<f64>::deserialize(d)?;
        let m = crate::linalg::from_rows(&raw.weights).map_err(serde::de::Error::custom)?;
        WeightedDigraph::new(m, raw.nodes).map_err(serde::de::Error::custom)
    }
}

impl Serialize for BinaryGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let weights = (0..self.d)
            .map(|r| (0..self.d).map(|c| self.has_edge(r, c) as u8).collect())
            .collect();
        GraphJson {
            nodes: self.names.clone(),
            weights,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinaryGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = GraphJson::<u8>::deserialize(d)?;
        let n = raw.nodes.len();
        if raw.weights.len() != n || raw.weights.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom(
                "adjacency must be square and match the node list",
            ));
        }
        let mut g = BinaryGraph::with_names(raw.nodes);
        for (r, row) in raw.weights.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => g.add_edge(r, c).map_err(D::Error::custom)?,
                    other => return Err(D::Error::custom(format!("entry {other} is not 0 or 1"))),
                }
            }
        }
        Ok(g)
    }
}
