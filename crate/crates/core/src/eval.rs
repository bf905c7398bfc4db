//! Evaluation: latent-to-factor matching, intervention-based Pos/Neg
//! scores, F1 aggregation, full reports and the metric-adequacy study.
//!
//! Pos scores zero the (matched) effect latents, push the codes through
//! the model's CDL and ask how much of each true effect factor the
//! reconstructed effect latent still explains. Neg scores do the opposite
//! for causes; a model that routes no information into its causes scores 0.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::DatasetBundle;
use crate::error::{invalid, Error, Result};
use crate::graph::{binarize, graph_rubrics, BinaryGraph, GraphRubrics, WeightedDigraph};
use crate::linalg;
use crate::mic::{self, MicParams};
use crate::model::{self, ModelParams, TrainConfig};
use crate::Matrix;

/// Rows used by default when scoring; MIC cost grows quickly with `n`.
pub const DEFAULT_EVAL_ROWS: usize = 1000;

/// What the evaluator needs from a model.
pub trait CausalModel {
    /// Unintervened endogenous codes `z`, one column per causal latent.
    fn latent_codes(&self, x: &Matrix) -> Result<Matrix>;
    /// The causal discovery layer applied to (possibly intervened) codes.
    fn propagate(&self, z: &Matrix) -> Result<Matrix>;
    /// Learned structure in latent index space.
    fn adjacency(&self) -> WeightedDigraph;
    /// Threshold used to binarize [`CausalModel::adjacency`].
    fn tau(&self) -> f64 {
        crate::graph::DEFAULT_TAU
    }
}

impl CausalModel for ModelParams {
    fn latent_codes(&self, x: &Matrix) -> Result<Matrix> {
        model::encode_latents(x, self)
    }

    fn propagate(&self, z: &Matrix) -> Result<Matrix> {
        model::cdl_forward(z, self, self.config.tau)
    }

    fn adjacency(&self) -> WeightedDigraph {
        ModelParams::adjacency(self)
    }

    fn tau(&self) -> f64 {
        self.config.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mic,
    Tic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Score on the first `max_rows` samples.
    pub max_rows: usize,
    pub mic: MicParams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_rows: DEFAULT_EVAL_ROWS,
            mic: MicParams::default(),
        }
    }
}

/// All scores for one model; every score lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mic: f64,
    pub tic: f64,
    pub pos_mic: f64,
    pub pos_tic: f64,
    pub neg_mic: f64,
    pub neg_tic: f64,
    pub f1_mic: f64,
    pub f1_tic: f64,
    /// Binarized learned structure (mapped to factor indices) against the truth.
    pub rubrics: GraphRubrics,
    /// `matching[f]` is the latent matched to factor `f`.
    pub matching: Vec<usize>,
    pub rows: usize,
}

impl MetricReport {
    pub fn one_line(&self) -> String {
        format!(
            "mic={:.4} tic={:.4} pos_mic={:.4} pos_tic={:.4} neg_mic={:.4} neg_tic={:.4} f1_mic={:.4} f1_tic={:.4} tpr={:.4} fdr={:.4} shd={}",
            self.mic,
            self.tic,
            self.pos_mic,
            self.pos_tic,
            self.neg_mic,
            self.neg_tic,
            self.f1_mic,
            self.f1_tic,
            self.rubrics.tpr,
            self.rubrics.fdr,
            self.rubrics.shd
        )
    }
}

/// Harmonic mean of `pos` and `1 - neg`.
pub fn f1_score(pos: f64, neg: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pos) || !(0.0..=1.0).contains(&neg) {
        return Err(invalid(format!(
            "scores must lie in [0, 1], got pos={pos}, neg={neg}"
        )));
    }
    if pos == 0.0 {
        return Ok(0.0);
    }
    let q = 1.0 - neg;
    Ok(2.0 * pos * q / (pos + q))
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|c| linalg::column(m, c)).collect()
}

/// `(mic, tic)` for every (factor, latent) pair.
fn association_table(
    latents: &Matrix,
    factors: &Matrix,
    params: MicParams,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let lat = columns(latents);
    let fac = columns(factors);
    let cells: Vec<(usize, usize)> = (0..fac.len())
        .flat_map(|f| (0..lat.len()).map(move |l| (f, l)))
        .collect();
    let vals = cells
        .par_iter()
        .map(|&(f, l)| mic::mic_tic(&lat[l], &fac[f], params))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.chunks(lat.len()).map(|c| c.to_vec()).collect())
}

fn greedy_assignment(table: &[Vec<f64>]) -> Vec<usize> {
    let k = table.len();
    let best = |f: usize| table[f].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(a.cmp(&b)));
    let mut used = vec![false; table.first().map_or(0, |r| r.len())];
    let mut out = vec![usize::MAX; k];
    for f in order {
        let mut cands: Vec<usize> = (0..used.len()).filter(|&l| !used[l]).collect();
        cands.sort_by(|&a, &b| table[f][b].total_cmp(&table[f][a]).then(a.cmp(&b)));
        let pick = cands[0];
        used[pick] = true;
        out[f] = pick;
    }
    out
}

fn check_tables(latents: &Matrix, factors: &Matrix) -> Result<()> {
    if latents.nrows() != factors.nrows() {
        return Err(invalid("latent and factor tables differ in row count"));
    }
    if latents.nrows() < 8 {
        return Err(invalid(format!(
            "matching needs at least 8 rows, got {}",
            latents.nrows()
        )));
    }
    if latents.ncols() < factors.ncols() {
        return Err(invalid("fewer latents than factors"));
    }
    Ok(())
}

/// For each factor, the latent with maximal MIC; factors with the
/// strongest best match choose first, later ones take their best unused latent.
pub fn match_latents(latents: &Matrix, factors: &Matrix, params: MicParams) -> Result<Vec<usize>> {
    check_tables(latents, factors)?;
    let table = association_table(latents, factors, params)?;
    let mics: Vec<Vec<f64>> = table
        .iter()
        .map(|r| r.iter().map(|c| c.0).collect())
        .collect();
    Ok(greedy_assignment(&mics))
}

/// Codes, matching and plain association scores of one model on one table.
struct Prepared {
    factors: Matrix,
    z: Matrix,
    matching: Vec<usize>,
    mic: f64,
    tic: f64,
}

fn prepare(
    model: &impl CausalModel,
    bundle: &DatasetBundle,
    opts: &EvalOptions,
) -> Result<Prepared> {
    let rows = opts.max_rows.min(bundle.n());
    let idx: Vec<usize> = (0..rows).collect();
    let x = linalg::select_rows(&bundle.observations, &idx);
    let factors = linalg::select_rows(&bundle.factors, &idx);
    let z = model.latent_codes(&x)?;
    check_tables(&z, &factors)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "latent_codes" });
    }
    let table = association_table(&z, &factors, opts.mic)?;
    let mics: Vec<Vec<f64>> = table
        .iter()
        .map(|r| r.iter().map(|c| c.0).collect())
        .collect();
    let matching = greedy_assignment(&mics);
    let k = factors.ncols() as f64;
    let mic = matching
        .iter()
        .enumerate()
        .map(|(f, &l)| table[f][l].0)
        .sum::<f64>()
        / k;
    let tic = matching
        .iter()
        .enumerate()
        .map(|(f, &l)| table[f][l].1)
        .sum::<f64>()
        / k;
    Ok(Prepared {
        factors,
        z,
        matching,
        mic,
        tic,
    })
}

/// Zeroes the latents matched to `zeroed` factors, propagates, and scores
/// the latents matched to `scored` factors against those factors.
fn intervention_scores(
    model: &impl CausalModel,
    p: &Prepared,
    zeroed: &[usize],
    scored: &[usize],
    params: MicParams,
) -> Result<(f64, f64)> {
    let mut z = p.z.clone();
    for &f in zeroed {
        z.column_mut(p.matching[f]).fill(0.0);
    }
    let out = model.propagate(&z)?;
    if out.shape() != z.shape() {
        return Err(invalid("propagate changed the code shape"));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "propagate" });
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = scored
        .iter()
        .map(|&f| {
            (
                linalg::column(&out, p.matching[f]),
                linalg::column(&p.factors, f),
            )
        })
        .collect();
    let vals = pairs
        .par_iter()
        .map(|(a, b)| mic::mic_tic(a, b, params))
        .collect::<Result<Vec<_>>>()?;
    let n = vals.len() as f64;
    Ok((
        vals.iter().map(|v| v.0).sum::<f64>() / n,
        vals.iter().map(|v| v.1).sum::<f64>() / n,
    ))
}

fn split(truth: &BinaryGraph, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if truth.d() != k {
        return Err(invalid(format!(
            "truth has {} nodes, data has {k} factors",
            truth.d()
        )));
    }
    let causes = truth.roots();
    let effects = truth.non_roots();
    if effects.is_empty() {
        return Err(Error::UndefinedMetric(
            "the true graph has no effect factors".into(),
        ));
    }
    if causes.is_empty() {
        return Err(Error::UndefinedMetric(
            "the true graph has no cause factors".into(),
        ));
    }
    Ok((causes, effects))
}

fn pick(kind: MetricKind, v: (f64, f64)) -> f64 {
    match kind {
        MetricKind::Mic => v.0,
        MetricKind::Tic => v.1,
    }
}

/// Mean association between CDL-reconstructed effect latents (with effect
/// inputs zeroed) and the true effect factors. Higher is better.
pub fn pos_metric(
    model: &impl CausalModel,
    bundle: &DatasetBundle,
    truth: &BinaryGraph,
    kind: MetricKind,
    opts: &EvalOptions,
) -> Result<f64> {
    let (_, effects) = split(truth, bundle.k())?;
    let p = prepare(model, bundle, opts)?;
    Ok(pick(
        kind,
        intervention_scores(model, &p, &effects, &effects, opts.mic)?,
    ))
}

/// Mean association between post-CDL cause latents (with cause inputs
/// zeroed) and the true cause factors. Lower is better.
pub fn neg_metric(
    model: &impl CausalModel,
    bundle: &DatasetBundle,
    truth: &BinaryGraph,
    kind: MetricKind,
    opts: &EvalOptions,
) -> Result<f64> {
    let (causes, _) = split(truth, bundle.k())?;
    let p = prepare(model, bundle, opts)?;
    Ok(pick(
        kind,
        intervention_scores(model, &p, &causes, &causes, opts.mic)?,
    ))
}

/// Learned structure relabelled into factor index space via the matching.
pub fn structure_in_factor_space(
    model: &impl CausalModel,
    matching: &[usize],
) -> Result<BinaryGraph> {
    let a = model.adjacency();
    binarize(&a.permuted(matching)?, model.tau())
}

pub fn evaluate_model(
    model: &impl CausalModel,
    bundle: &DatasetBundle,
    truth: &BinaryGraph,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let (causes, effects) = split(truth, bundle.k())?;
    let p = prepare(model, bundle, opts)?;
    let pos = intervention_scores(model, &p, &effects, &effects, opts.mic)?;
    let neg = intervention_scores(model, &p, &causes, &causes, opts.mic)?;
    let learned = structure_in_factor_space(model, &p.matching)?;
    let rubrics = graph_rubrics(&learned, truth)?;
    Ok(MetricReport {
        mic: p.mic,
        tic: p.tic,
        pos_mic: pos.0,
        pos_tic: pos.1,
        neg_mic: neg.0,
        neg_tic: neg.1,
        f1_mic: f1_score(pos.0, neg.0)?,
        f1_tic: f1_score(pos.1, neg.1)?,
        rubrics,
        matching: p.matching,
        rows: p.z.nrows(),
    })
}

fn check_corr_inputs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid("correlation inputs differ in length"));
    }
    if a.len() < 3 {
        return Err(invalid(format!(
            "correlation needs at least 3 points, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(invalid("correlation inputs must be finite"));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_corr_inputs(a, b)?;
    let ma = linalg::mean(a);
    let mb = linalg::mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (ties share their mean rank), 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = r;
        }
        i = j + 1;
    }
    out
}

/// Rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_corr_inputs(a, b)?;
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdequacyConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Initial weight on every edge of a variant.
    pub edge_weight: f64,
    pub eval: EvalOptions,
    pub correlation: CorrelationKind,
}

impl Default for AdequacyConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                label_fraction: 1.0,
                steps: 2000,
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            edge_weight: 1.0,
            eval: EvalOptions::default(),
            correlation: CorrelationKind::Pearson,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyRow {
    pub variant: usize,
    pub seed: u64,
    pub edges: Vec<(usize, usize)>,
    pub report: MetricReport,
    /// The fixed variant against the truth.
    pub variant_rubrics: GraphRubrics,
    pub diverged: bool,
}

pub const METRIC_COLUMNS: [&str; 6] = ["mic", "tic", "pos_mic", "pos_tic", "neg_mic", "neg_tic"];
pub const RUBRIC_COLUMNS: [&str; 3] = ["tpr", "fdr", "shd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: String,
    pub rubric: String,
    /// NaN when either column has zero variance.
    pub r: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyResult {
    pub rows: Vec<AdequacyRow>,
    pub correlations: Vec<Correlation>,
    pub kind: CorrelationKind,
}

fn metric_value(r: &MetricReport, name: &str) -> f64 {
    match name {
        "mic" => r.mic,
        "tic" => r.tic,
        "pos_mic" => r.pos_mic,
        "pos_tic" => r.pos_tic,
        "neg_mic" => r.neg_mic,
        "neg_tic" => r.neg_tic,
        _ => unreachable!("unknown metric column {name}"),
    }
}

fn rubric_value(r: &GraphRubrics, name: &str) -> f64 {
    match name {
        "tpr" => r.tpr,
        "fdr" => r.fdr,
        "shd" => r.shd as f64,
        _ => unreachable!("unknown rubric column {name}"),
    }
}

impl AdequacyResult {
    pub fn correlation(&self, metric: &str, rubric: &str) -> Option<f64> {
        self.correlations
            .iter()
            .find(|c| c.metric == metric && c.rubric == rubric)
            .map(|c| c.r)
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from(
            "variant,seed,edges,mic,tic,pos_mic,pos_tic,neg_mic,neg_tic,f1_mic,f1_tic,tpr,fdr,shd,learned_tpr,learned_fdr,learned_shd,diverged\n",
        );
        for row in &self.rows {
            let r = &row.report;
            let edges: Vec<String> = row.edges.iter().map(|(a, b)| format!("{a}->{b}")).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                row.variant,
                row.seed,
                edges.join(" "),
                r.mic,
                r.tic,
                r.pos_mic,
                r.pos_tic,
                r.neg_mic,
                r.neg_tic,
                r.f1_mic,
                r.f1_tic,
                row.variant_rubrics.tpr,
                row.variant_rubrics.fdr,
                row.variant_rubrics.shd,
                r.rubrics.tpr,
                r.rubrics.fdr,
                r.rubrics.shd,
                row.diverged
            );
        }
        s
    }

    /// Metric × rubric matrix.
    pub fn correlations_csv(&self) -> String {
        let mut s = format!("metric,{}\n", RUBRIC_COLUMNS.join(","));
        for m in METRIC_COLUMNS {
            let vals: Vec<String> = RUBRIC_COLUMNS
                .iter()
                .map(|r| {
                    self.correlation(m, r)
                        .map_or("NaN".into(), |v| v.to_string())
                })
                .collect();
            let _ = writeln!(s, "{m},{}", vals.join(","));
        }
        s
    }

    /// Long format for external plotting.
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("metric,rubric,r,degenerate\n");
        for c in &self.correlations {
            let _ = writeln!(s, "{},{},{},{}", c.metric, c.rubric, c.r, c.degenerate);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, body) in [
            ("rows.csv", self.rows_csv()),
            ("correlations.csv", self.correlations_csv()),
            ("plot.csv", self.plot_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| io(&p, e))?;
        }
        Ok(())
    }
}

fn io(p: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: p.display().to_string(),
        source: e,
    }
}

/// Correlations between every metric column and every rubric column.
pub fn correlate(rows: &[AdequacyRow], kind: CorrelationKind) -> Result<Vec<Correlation>> {
    if rows.len() < 3 {
        return Err(invalid(format!(
            "need at least 3 rows to correlate, got {}",
            rows.len()
        )));
    }
    let mut out = Vec::new();
    for m in METRIC_COLUMNS {
        let a: Vec<f64> = rows.iter().map(|r| metric_value(&r.report, m)).collect();
        for rb in RUBRIC_COLUMNS {
            let b: Vec<f64> = rows
                .iter()
                .map(|r| rubric_value(&r.variant_rubrics, rb))
                .collect();
            let res = match kind {
                CorrelationKind::Pearson => pearson(&a, &b),
                CorrelationKind::Spearman => spearman(&a, &b),
            };
            let (r, degenerate) = match res {
                Ok(v) => (v, false),
                Err(Error::Degenerate(_)) => (f64::NAN, true),
                Err(e) => return Err(e),
            };
            out.push(Correlation {
                metric: m.into(),
                rubric: rb.into(),
                r,
                degenerate,
            });
        }
    }
    Ok(out)
}

/// Trains one model per (variant, seed) with `A` initialized at the variant
/// and its absent entries frozen, scores it, and correlates the scores with
/// the variant's own rubrics. Rows come back variant-major, seed-minor.
pub fn adequacy_study(
    bundle: &DatasetBundle,
    variants: &[BinaryGraph],
    config: &AdequacyConfig,
) -> Result<AdequacyResult> {
    if variants.len() < 6 {
        return Err(invalid(format!(
            "need at least 6 graph variants, got {}",
            variants.len()
        )));
    }
    if config.seeds.len() < 2 {
        return Err(invalid(format!(
            "need at least 2 seeds, got {}",
            config.seeds.len()
        )));
    }
    adequacy_rows(bundle, variants, config).and_then(|rows| {
        let correlations = correlate(&rows, config.correlation)?;
        Ok(AdequacyResult {
            rows,
            correlations,
            kind: config.correlation,
        })
    })
}

/// The per-cell part of [`adequacy_study`], without size requirements.
pub fn adequacy_rows(
    bundle: &DatasetBundle,
    variants: &[BinaryGraph],
    config: &AdequacyConfig,
) -> Result<Vec<AdequacyRow>> {
    config.train.validate()?;
    let truth = &bundle.truth;
    let cells: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(v, seed)| {
            let graph = &variants[v];
            let cfg = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let init = ModelParams::init_with_structure(
                model::dims_for(bundle),
                &cfg,
                graph,
                config.edge_weight,
            )?;
            let outcome = model::train_from(init, bundle, &cfg)?;
            let report = evaluate_model(&outcome.params, bundle, truth, &config.eval)?;
            Ok(AdequacyRow {
                variant: v,
                seed,
                edges: graph.edges(),
                report,
                variant_rubrics: graph_rubrics(graph, truth)?,
                diverged: outcome.divergence.is_some(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        assert!((f1_score(0.541, 0.402).unwrap() - 0.568).abs() < 5e-4);
        assert!((f1_score(0.507, 0.368).unwrap() - 0.563).abs() < 5e-4);
        assert_eq!(f1_score(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(f1_score(0.0, 1.0).unwrap(), 0.0);
        assert!(f1_score(1.2, 0.0).is_err());
        assert!(f1_score(0.5, -0.1).is_err());
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&a, &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&a, &[1.0, 1.0, 1.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(pearson(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn greedy_resolves_conflicts_by_strength() {
        // Both factors prefer latent 0; factor 1 has the stronger claim.
        let t = vec![vec![0.8, 0.5], vec![0.9, 0.1]];
        assert_eq!(greedy_assignment(&t), vec![1, 0]);
    }
}
