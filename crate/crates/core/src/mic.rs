//! Maximal and total information coefficients.
//!
//! The characteristic matrix is approximated the usual way: one axis is
//! equipartitioned by rank, the other is optimized by dynamic programming
//! over clump boundaries, and both orientations are tried. Everything works
//! on ranks, so the statistics are invariant under strictly increasing
//! transforms of either variable.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_CLUMPS: f64 = 15.0;

/// Limits for [`mic_exhaustive`].
pub const EXHAUSTIVE_MAX_N: usize = 30;
pub const EXHAUSTIVE_MAX_BUDGET: usize = 9;

/// A grid: sorted cut positions on each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPartition {
    pub x_cuts: Vec<f64>,
    pub y_cuts: Vec<f64>,
}

impl GridPartition {
    pub fn cells(&self) -> usize {
        (self.x_cuts.len() + 1) * (self.y_cuts.len() + 1)
    }

    /// Plug-in mutual information (bits) of the histogram this grid induces.
    pub fn mutual_information(&self, x: &[f64], y: &[f64]) -> f64 {
        let cols = self.x_cuts.len() + 1;
        let rows = self.y_cuts.len() + 1;
        let mut counts = vec![0usize; cols * rows];
        for (&xv, &yv) in x.iter().zip(y) {
            let c = self.x_cuts.partition_point(|&cut| cut < xv);
            let r = self.y_cuts.partition_point(|&cut| cut < yv);
            counts[c * rows + r] += 1;
        }
        let n = x.len() as f64;
        let col_tot: Vec<usize> = (0..cols)
            .map(|c| counts[c * rows..(c + 1) * rows].iter().sum())
            .collect();
        let row_tot: Vec<usize> = (0..rows)
            .map(|r| (0..cols).map(|c| counts[c * rows + r]).sum())
            .collect();
        let mut mi = 0.0;
        for c in 0..cols {
            for r in 0..rows {
                let k = counts[c * rows + r];
                if k > 0 {
                    let p = k as f64 / n;
                    mi += p * (k as f64 * n / (col_tot[c] as f64 * row_tot[r] as f64)).log2();
                }
            }
        }
        mi.max(0.0)
    }
}

/// Normalized mutual information indexed by `(x_bins, y_bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicMatrix {
    pub entries: BTreeMap<(usize, usize), f64>,
    pub n: usize,
    pub budget: usize,
}

impl CharacteristicMatrix {
    pub fn max(&self) -> f64 {
        self.entries.values().copied().fold(0.0, f64::max)
    }

    /// Mean entry. Summed in sorted order so that transposing the matrix
    /// cannot change the result.
    pub fn mean(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let mut vals: Vec<f64> = self.entries.values().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Estimator parameters: budget exponent and clump factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicParams {
    pub alpha: f64,
    pub clumps: f64,
}

impl Default for MicParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            clumps: DEFAULT_CLUMPS,
        }
    }
}

pub fn budget(n: usize, alpha: f64) -> usize {
    ((n as f64).powf(alpha).ceil() as usize).max(4)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "sample lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 8 {
        return Err(invalid(format!("need at least 8 samples, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("samples contain non-finite values"));
    }
    Ok(())
}

/// One variable sorted by value with ties broken by index.
struct RankedAxis {
    order: Vec<usize>,
    // [start, end) positions in `order` sharing one value
    ties: Vec<(usize, usize)>,
}

impl RankedAxis {
    fn new(v: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        let mut ties = Vec::new();
        let mut start = 0;
        for pos in 1..=order.len() {
            if pos == order.len() || v[order[pos]] != v[order[start]] {
                ties.push((start, pos));
                start = pos;
            }
        }
        Self { order, ties }
    }

    /// Row label per sample, keeping tied values together. Returns the
    /// labels and how many rows were actually used.
    fn equipartition(&self, rows: usize) -> (Vec<usize>, usize) {
        let sizes: Vec<usize> = self.ties.iter().map(|(s, e)| e - s).collect();
        let group_of = greedy_partition(&sizes, rows);
        let mut label = vec![0usize; self.order.len()];
        for (g, &(s, e)) in self.ties.iter().enumerate() {
            for &i in &self.order[s..e] {
                label[i] = group_of[g];
            }
        }
        let used = group_of.last().map_or(0, |&l| l + 1);
        (label, used)
    }
}

/// Assigns consecutive indivisible blocks to at most `parts` groups of
/// roughly equal total size.
fn greedy_partition(sizes: &[usize], parts: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(sizes.len());
    let mut current = 0usize;
    let mut filled = 0usize;
    let mut consumed = 0usize;
    let mut desired = total as f64 / parts as f64;
    for &s in sizes {
        if filled > 0
            && current + 1 < parts
            && ((filled + s) as f64 - desired).abs() >= (filled as f64 - desired).abs()
        {
            current += 1;
            filled = 0;
            desired = (total - consumed) as f64 / (parts - current) as f64;
        }
        out.push(current);
        filled += s;
        consumed += s;
    }
    out
}

/// Best mutual information with at most `l` columns on `opt`, for
/// `l = 0..=max_cols`, given fixed row labels.
fn optimize_axis(
    opt: &RankedAxis,
    row_of: &[usize],
    rows: usize,
    max_cols: usize,
    clump_factor: f64,
    xlogx: &[f64],
) -> Vec<f64> {
    let n = row_of.len();
    // Tie groups on the optimized axis; a group whose samples fall in more
    // than one row can never be merged with a neighbour.
    let mut clumps: Vec<Vec<usize>> = Vec::new();
    let mut last_label: Option<usize> = None;
    for &(s, e) in &opt.ties {
        let mut counts = vec![0usize; rows];
        for &i in &opt.order[s..e] {
            counts[row_of[i]] += 1;
        }
        let first = row_of[opt.order[s]];
        let pure = counts[first] == e - s;
        match (pure, last_label) {
            (true, Some(l)) if l == first => {
                let c = clumps.last_mut().unwrap();
                c[first] += e - s;
            }
            _ => clumps.push(counts),
        }
        last_label = if pure { Some(first) } else { None };
    }

    let max_clumps = ((clump_factor * max_cols as f64) as usize).max(1);
    if clumps.len() > max_clumps {
        let sizes: Vec<usize> = clumps.iter().map(|c| c.iter().sum()).collect();
        let group_of = greedy_partition(&sizes, max_clumps);
        let mut merged: Vec<Vec<usize>> = Vec::new();
        for (c, &g) in clumps.iter().zip(&group_of) {
            if merged.len() <= g {
                merged.push(vec![0; rows]);
            }
            for r in 0..rows {
                merged[g][r] += c[r];
            }
        }
        clumps = merged;
    }

    let k = clumps.len();
    let mut cum = vec![vec![0usize; rows]; k + 1];
    for t in 0..k {
        for r in 0..rows {
            cum[t + 1][r] = cum[t][r] + clumps[t][r];
        }
    }
    let row_totals = &cum[k];
    let h_rows = (xlogx[n] - row_totals.iter().map(|&c| xlogx[c]).sum::<f64>()) / n as f64;

    // cost(s, t) = n_st * H(rows | column (s, t]), in bits.
    let mut cost = vec![0.0; (k + 1) * (k + 1)];
    for s in 0..k {
        for t in (s + 1)..=k {
            let mut tot = 0usize;
            let mut sum = 0.0;
            for r in 0..rows {
                let c = cum[t][r] - cum[s][r];
                tot += c;
                sum += xlogx[c];
            }
            cost[s * (k + 1) + t] = xlogx[tot] - sum;
        }
    }

    let mut best = vec![0.0; max_cols + 1];
    let mut prev: Vec<f64> = (0..=k)
        .map(|t| if t == 0 { f64::INFINITY } else { cost[t] })
        .collect();
    let mut best_cost = prev[k];
    if max_cols >= 1 {
        best[1] = (h_rows - best_cost / n as f64).max(0.0);
    }
    for l in 2..=max_cols {
        let mut next = vec![f64::INFINITY; k + 1];
        for t in l..=k {
            let mut m = f64::INFINITY;
            for s in (l - 1)..t {
                let v = prev[s] + cost[s * (k + 1) + t];
                if v < m {
                    m = v;
                }
            }
            next[t] = m;
        }
        if next[k] < best_cost {
            best_cost = next[k];
        }
        best[l] = (h_rows - best_cost / n as f64).max(0.0);
        prev = next;
    }
    best
}

fn xlogx_table(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                c as f64 * (c as f64).log2()
            }
        })
        .collect()
}

fn normalize(mi: f64, a: usize, b: usize) -> f64 {
    (mi / (a.min(b) as f64).log2()).clamp(0.0, 1.0)
}

/// Approximate characteristic matrix for budget `budget`.
pub fn characteristic_matrix(
    x: &[f64],
    y: &[f64],
    budget: usize,
    clump_factor: f64,
) -> Result<CharacteristicMatrix> {
    check_pair(x, y)?;
    if budget < 4 {
        return Err(invalid(format!("grid budget {budget} admits no 2x2 grid")));
    }
    let n = x.len();
    let xa = RankedAxis::new(x);
    let ya = RankedAxis::new(y);
    let xlogx = xlogx_table(n);

    // (equi axis, rows) -> best MI per column count on the other axis
    let run = |equi: &RankedAxis, opt: &RankedAxis, rows: usize| -> Vec<f64> {
        let (labels, used) = equi.equipartition(rows);
        if used < 2 {
            return vec![0.0; budget / rows + 1];
        }
        optimize_axis(opt, &labels, used, budget / rows, clump_factor, &xlogx)
    };

    let row_counts: Vec<usize> = (2..=budget / 2).collect();
    let by_y: Vec<Vec<f64>> = row_counts.par_iter().map(|&r| run(&ya, &xa, r)).collect();
    let by_x: Vec<Vec<f64>> = row_counts.par_iter().map(|&r| run(&xa, &ya, r)).collect();

    let mut entries = BTreeMap::new();
    for (idx, &r) in row_counts.iter().enumerate() {
        // y equipartitioned into r rows, x optimized: entry (l, r)
        for l in 2..=budget / r {
            let v = normalize(by_y[idx][l], l, r);
            let e = entries.entry((l, r)).or_insert(0.0);
            *e = f64::max(*e, v);
        }
        // x equipartitioned into r columns, y optimized: entry (r, l)
        for l in 2..=budget / r {
            let v = normalize(by_x[idx][l], r, l);
            let e = entries.entry((r, l)).or_insert(0.0);
            *e = f64::max(*e, v);
        }
    }
    Ok(CharacteristicMatrix { entries, n, budget })
}

pub fn mic_with(x: &[f64], y: &[f64], params: MicParams) -> Result<f64> {
    let b = budget(x.len(), params.alpha);
    Ok(characteristic_matrix(x, y, b, params.clumps)?.max())
}

pub fn tic_with(x: &[f64], y: &[f64], params: MicParams) -> Result<f64> {
    let b = budget(x.len(), params.alpha);
    Ok(characteristic_matrix(x, y, b, params.clumps)?.mean())
}

/// MIC and TIC from a single characteristic matrix.
pub fn mic_tic(x: &[f64], y: &[f64], params: MicParams) -> Result<(f64, f64)> {
    let b = budget(x.len(), params.alpha);
    let cm = characteristic_matrix(x, y, b, params.clumps)?;
    Ok((cm.max(), cm.mean()))
}

/// Maximal information coefficient with budget `ceil(n^alpha)`.
pub fn mic(x: &[f64], y: &[f64], alpha: f64, clumps: f64) -> Result<f64> {
    mic_with(x, y, MicParams { alpha, clumps })
}

/// Total information coefficient, normalized as the mean entry.
pub fn tic(x: &[f64], y: &[f64], alpha: f64, clumps: f64) -> Result<f64> {
    tic_with(x, y, MicParams { alpha, clumps })
}

fn midpoints(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn for_each_subset(items: &[f64], size: usize, f: &mut impl FnMut(&[f64])) {
    fn rec(
        items: &[f64],
        size: usize,
        start: usize,
        cur: &mut Vec<f64>,
        f: &mut impl FnMut(&[f64]),
    ) {
        if cur.len() == size {
            f(cur);
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, size, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(items, size, 0, &mut Vec::with_capacity(size), f);
}

/// True maximum of normalized mutual information over every grid with at
/// most `budget` cells whose cuts sit at midpoints between data values.
/// Small inputs only.
pub fn mic_exhaustive(x: &[f64], y: &[f64], budget: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid("sample lengths differ"));
    }
    if x.len() > EXHAUSTIVE_MAX_N || budget > EXHAUSTIVE_MAX_BUDGET {
        return Err(invalid(format!(
            "exhaustive search limited to n <= {EXHAUSTIVE_MAX_N}, budget <= {EXHAUSTIVE_MAX_BUDGET}"
        )));
    }
    let xc = midpoints(x);
    let yc = midpoints(y);
    let mut best = 0.0f64;
    for a in 2..=budget / 2 {
        for b in 2..=budget / a {
            if a - 1 > xc.len() || b - 1 > yc.len() {
                continue;
            }
            let norm = (a.min(b) as f64).log2();
            for_each_subset(&xc, a - 1, &mut |xs| {
                for_each_subset(&yc, b - 1, &mut |ys| {
                    let g = GridPartition {
                        x_cuts: xs.to_vec(),
                        y_cuts: ys.to_vec(),
                    };
                    best = best.max((g.mutual_information(x, y) / norm).min(1.0));
                });
            });
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_y_gives_zero_everywhere() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = vec![3.0; 50];
        let cm = characteristic_matrix(&x, &y, 10, 15.0).unwrap();
        assert!(cm.entries.values().all(|&v| v == 0.0));
        assert_eq!(tic(&x, &y, 0.6, 15.0).unwrap(), 0.0);
    }

    #[test]
    fn identity_has_unit_two_by_two_entry() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 * 0.37).collect();
        let cm = characteristic_matrix(&x, &x, budget(100, 0.6), 15.0).unwrap();
        assert!((cm.entries[&(2, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(mic(&[1.0; 7], &[1.0; 7], 0.6, 15.0).is_err());
        assert!(mic(&[1.0; 9], &[1.0; 8], 0.6, 15.0).is_err());
        assert!(mic_exhaustive(&[0.0; 31], &[0.0; 31], 4).is_err());
        assert!(mic_exhaustive(&[0.0; 10], &[0.0; 10], 10).is_err());
    }

    #[test]
    fn exhaustive_identity_is_one() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert!((mic_exhaustive(&x, &x, 6).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_partition_respects_blocks() {
        assert_eq!(greedy_partition(&[1, 1, 1, 1], 2), vec![0, 0, 1, 1]);
        assert_eq!(greedy_partition(&[3, 1], 2), vec![0, 1]);
        assert_eq!(greedy_partition(&[4], 3), vec![0]);
    }

    #[test]
    fn grid_mutual_information_of_perfect_split() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let g = GridPartition {
            x_cuts: vec![1.5],
            y_cuts: vec![1.5],
        };
        assert!((g.mutual_information(&x, &x) - 1.0).abs() < 1e-12);
        assert_eq!(g.cells(), 4);
    }
}
