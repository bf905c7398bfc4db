//! Structural variants of a ground-truth graph for the metric-adequacy study.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::graph::{is_dag, BinaryGraph};
use crate::seed;

const ADDITION_ATTEMPTS: usize = 2000;

/// The truth, the empty graph, every single-edge deletion, every acyclic
/// single-edge reversal, then random acyclic additions of one or two edges,
/// deduplicated and truncated to `count`.
pub fn graph_variants(
    truth: &BinaryGraph,
    count: usize,
    seed_value: u64,
) -> Result<Vec<BinaryGraph>> {
    if !is_dag(truth) {
        return Err(invalid("truth graph must be acyclic"));
    }
    let d = truth.d();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |g: BinaryGraph, out: &mut Vec<BinaryGraph>| {
        if out.len() < count && seen.insert(g.clone()) {
            out.push(g);
        }
    };

    push(truth.clone(), &mut out);
    push(BinaryGraph::with_names(truth.names().to_vec()), &mut out);
    for (from, to) in truth.edges() {
        let mut g = truth.clone();
        g.remove_edge(from, to);
        push(g, &mut out);
    }
    for (from, to) in truth.edges() {
        let mut g = truth.clone();
        g.remove_edge(from, to);
        g.add_edge(to, from)?;
        if is_dag(&g) {
            push(g, &mut out);
        }
    }

    let candidates: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| (0..d).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && !truth.has_edge(a, b) && !truth.has_edge(b, a))
        .collect();
    let mut rng = seed::rng(seed_value);
    let mut attempts = 0;
    while out.len() < count && attempts < ADDITION_ATTEMPTS && !candidates.is_empty() {
        attempts += 1;
        let extra = rng.random_range(1..=2usize.min(candidates.len()));
        let mut g = truth.clone();
        for _ in 0..extra {
            let (a, b) = candidates[rng.random_range(0..candidates.len())];
            g.add_edge(a, b)?;
        }
        if is_dag(&g) {
            push(g, &mut out);
        }
    }
    Ok(out)
}
