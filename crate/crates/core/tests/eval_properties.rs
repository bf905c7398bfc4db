use doswap_core::datagen::{graph_variants, BundleSpec, DatasetBundle, DatasetKind, Scm};
use doswap_core::error::Result;
use doswap_core::eval::{
    adequacy_study, evaluate_model, f1_score, match_latents, neg_metric, pos_metric,
    AdequacyConfig, CausalModel, EvalOptions, MetricKind,
};
use doswap_core::mic::MicParams;
use doswap_core::model::{Dims, ModelParams, TrainConfig};
use doswap_core::{BinaryGraph, Matrix, WeightedDigraph};
use proptest::prelude::*;

fn noiseless_pendulum(n: usize, seed: u64) -> DatasetBundle {
    let mut spec = BundleSpec::new(DatasetKind::Pendulum, n, seed);
    spec.noise_sd = 0.0;
    spec.factor_noise_fraction = 0.0;
    DatasetBundle::generate(&spec).unwrap()
}

/// Inverts the mixing exactly, so its codes are the standardized factors,
/// and runs the true mechanism (in factor units) as its causal layer.
struct Oracle {
    scm: Scm,
    unmix: Matrix,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Oracle {
    fn new(bundle: &DatasetBundle) -> Self {
        let k = bundle.k();
        Self {
            scm: bundle.meta.spec.scm().unwrap(),
            unmix: bundle.mixing().columns(0, k).into_owned(),
            means: bundle.meta.factor_means.clone(),
            sds: bundle.meta.factor_sds.clone(),
        }
    }
}

impl CausalModel for Oracle {
    fn latent_codes(&self, x: &Matrix) -> Result<Matrix> {
        Ok(x * &self.unmix)
    }

    fn propagate(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.clone();
        for r in 0..z.nrows() {
            let mut row: Vec<f64> = (0..z.ncols())
                .map(|c| z[(r, c)] * self.sds[c] + self.means[c])
                .collect();
            self.scm.complete(&mut row);
            for (c, v) in row.into_iter().enumerate() {
                out[(r, c)] = (v - self.means[c]) / self.sds[c];
            }
        }
        Ok(out)
    }

    fn adjacency(&self) -> WeightedDigraph {
        WeightedDigraph::from_binary(self.scm.graph(), 1.0)
    }
}

/// Every code is zero and the layer maps everything to zero.
struct Constant {
    k: usize,
}

impl CausalModel for Constant {
    fn latent_codes(&self, x: &Matrix) -> Result<Matrix> {
        Ok(Matrix::zeros(x.nrows(), self.k))
    }

    fn propagate(&self, z: &Matrix) -> Result<Matrix> {
        Ok(Matrix::zeros(z.nrows(), z.ncols()))
    }

    fn adjacency(&self) -> WeightedDigraph {
        WeightedDigraph::unnamed(Matrix::zeros(self.k, self.k)).unwrap()
    }
}

/// Oracle codes, but every cause is regressed (least squares with an
/// intercept) on the effects: a layer wired against the true direction.
struct Reversed {
    oracle: Oracle,
    coefficients: Vec<(usize, Vec<f64>)>,
    effects: Vec<usize>,
}

impl Reversed {
    fn fit(bundle: &DatasetBundle) -> Self {
        let oracle = Oracle::new(bundle);
        let z = oracle.latent_codes(&bundle.observations).unwrap();
        let effects = bundle.truth.non_roots();
        let design = Matrix::from_fn(z.nrows(), effects.len() + 1, |r, c| {
            if c == effects.len() {
                1.0
            } else {
                z[(r, effects[c])]
            }
        });
        let svd = design.clone().svd(true, true);
        let coefficients = bundle
            .truth
            .roots()
            .into_iter()
            .map(|cause| {
                let beta = svd.solve(&z.column(cause).into_owned(), 1e-12).unwrap();
                (cause, beta.iter().copied().collect())
            })
            .collect();
        Self {
            oracle,
            coefficients,
            effects,
        }
    }
}

impl CausalModel for Reversed {
    fn latent_codes(&self, x: &Matrix) -> Result<Matrix> {
        self.oracle.latent_codes(x)
    }

    fn propagate(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.clone();
        for r in 0..z.nrows() {
            for (cause, beta) in &self.coefficients {
                let mut v = beta[self.effects.len()];
                for (i, &e) in self.effects.iter().enumerate() {
                    v += beta[i] * z[(r, e)];
                }
                out[(r, *cause)] = v;
            }
        }
        Ok(out)
    }

    fn adjacency(&self) -> WeightedDigraph {
        WeightedDigraph::unnamed(self.oracle.adjacency().weights().transpose()).unwrap()
    }
}

#[test]
fn oracle_model_scores_perfectly() {
    let bundle = noiseless_pendulum(1000, 3);
    let report = evaluate_model(
        &Oracle::new(&bundle),
        &bundle,
        &bundle.truth,
        &EvalOptions::default(),
    )
    .unwrap();
    assert!(report.mic >= 0.95, "{}", report.one_line());
    assert!(report.pos_mic >= 0.95, "{}", report.one_line());
    assert!(report.neg_mic <= 0.05, "{}", report.one_line());
    assert_eq!(report.matching, vec![0, 1, 2, 3]);
    assert_eq!(
        (report.rubrics.tpr, report.rubrics.fdr, report.rubrics.shd),
        (1.0, 0.0, 0)
    );
}

#[test]
fn constant_model_scores_zero_and_is_dominated() {
    let bundle = noiseless_pendulum(300, 4);
    let opts = EvalOptions::default();
    let c = evaluate_model(&Constant { k: 4 }, &bundle, &bundle.truth, &opts).unwrap();
    for v in [
        c.mic, c.tic, c.pos_mic, c.pos_tic, c.neg_mic, c.neg_tic, c.f1_mic, c.f1_tic,
    ] {
        assert_eq!(v, 0.0, "{}", c.one_line());
    }
    let o = evaluate_model(&Oracle::new(&bundle), &bundle, &bundle.truth, &opts).unwrap();
    for (hi, lo) in [
        (o.mic, c.mic),
        (o.tic, c.tic),
        (o.pos_mic, c.pos_mic),
        (o.pos_tic, c.pos_tic),
        (o.f1_mic, c.f1_mic),
        (o.f1_tic, c.f1_tic),
        (o.rubrics.tpr, c.rubrics.tpr),
    ] {
        assert!(hi >= lo);
    }
    assert!(o.neg_mic <= c.neg_mic + 0.05 && o.neg_tic <= c.neg_tic + 0.05);
    assert!(o.rubrics.fdr <= c.rubrics.fdr && o.rubrics.shd <= c.rubrics.shd);
}

#[test]
fn reversed_layer_leaks_into_causes() {
    let bundle = noiseless_pendulum(1000, 5);
    let model = Reversed::fit(&bundle);
    let neg = neg_metric(
        &model,
        &bundle,
        &bundle.truth,
        MetricKind::Mic,
        &EvalOptions::default(),
    )
    .unwrap();
    assert!(neg > 0.1, "neg_mic {neg}");
    let oracle_neg = neg_metric(
        &Oracle::new(&bundle),
        &bundle,
        &bundle.truth,
        MetricKind::Mic,
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(oracle_neg, 0.0);
}

#[test]
fn metrics_need_both_causes_and_effects() {
    let bundle = noiseless_pendulum(100, 6);
    let empty = BinaryGraph::empty(4);
    let opts = EvalOptions::default();
    assert!(pos_metric(
        &Oracle::new(&bundle),
        &bundle,
        &empty,
        MetricKind::Mic,
        &opts
    )
    .is_err());
    let mut cycle = BinaryGraph::empty(4);
    for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
        cycle.add_edge(a, b).unwrap();
    }
    assert!(neg_metric(
        &Oracle::new(&bundle),
        &bundle,
        &cycle,
        MetricKind::Mic,
        &opts
    )
    .is_err());
}

#[test]
fn matching_recovers_permutations_through_monotone_transforms() {
    let bundle = noiseless_pendulum(400, 7);
    let f = &bundle.factors;
    let perm = [2usize, 0, 3, 1];
    let latents = Matrix::from_fn(f.nrows(), 4, |r, l| {
        let v = f[(r, perm[l])];
        match l {
            0 => v.powi(3),
            1 => (v / 10.0).exp(),
            2 => -v,
            _ => v * 7.0 + 1.0,
        }
    });
    let m = match_latents(&latents, f, MicParams::default()).unwrap();
    for (factor, &latent) in m.iter().enumerate() {
        assert_eq!(perm[latent], factor);
    }
    assert_eq!(
        match_latents(f, f, MicParams::default()).unwrap(),
        vec![0, 1, 2, 3]
    );
}

#[test]
fn untrained_models_have_low_pos_mic() {
    let bundle = DatasetBundle::generate(&BundleSpec::new(DatasetKind::Pendulum, 1000, 0)).unwrap();
    let mut scores: Vec<f64> = (0..10)
        .map(|seed| {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let dims = Dims {
                m: bundle.m(),
                k: bundle.k(),
                m_u: bundle.nuisance_dims(),
            };
            let params = ModelParams::init(dims, &cfg).unwrap();
            let r =
                evaluate_model(&params, &bundle, &bundle.truth, &EvalOptions::default()).unwrap();
            assert!((r.f1_mic - f1_score(r.pos_mic, r.neg_mic).unwrap()).abs() <= 1e-10);
            r.pos_mic
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let median = (scores[4] + scores[5]) / 2.0;
    assert!(median < 0.3, "median {median} of {scores:?}");
}

#[test]
fn truth_only_study_reports_degenerate_correlations() {
    let bundle = noiseless_pendulum(200, 8);
    let config = AdequacyConfig {
        train: TrainConfig {
            steps: 5,
            batch_size: 32,
            ..AdequacyConfig::default().train
        },
        seeds: vec![0, 1],
        eval: EvalOptions {
            max_rows: 100,
            ..EvalOptions::default()
        },
        ..AdequacyConfig::default()
    };
    let variants = vec![bundle.truth.clone(); 6];
    let result = adequacy_study(&bundle, &variants, &config).unwrap();
    assert_eq!(result.rows.len(), 12);
    assert!(result
        .correlations
        .iter()
        .all(|c| c.degenerate && c.r.is_nan()));

    let variants = graph_variants(&bundle.truth, 6, 1).unwrap();
    let a = adequacy_study(&bundle, &variants, &config).unwrap();
    let b = adequacy_study(&bundle, &variants, &config).unwrap();
    assert_eq!(a.rows_csv(), b.rows_csv());
    let order: Vec<(usize, u64)> = a.rows.iter().map(|r| (r.variant, r.seed)).collect();
    let expected: Vec<(usize, u64)> = (0..6).flat_map(|v| [(v, 0), (v, 1)]).collect();
    assert_eq!(order, expected);
    assert!(adequacy_study(&bundle, &variants[..5], &config).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn f1_is_monotone_and_symmetric(a in 0.01f64..0.99, b in 0.01f64..0.99, d in 0.001f64..0.01) {
        let f = f1_score(a, b).unwrap();
        prop_assert!(f1_score(a + d, b).unwrap() > f);
        prop_assert!(f1_score(a, b + d).unwrap() < f);
        // Exchanging pos with 1 - neg leaves the score unchanged.
        prop_assert!((f1_score(1.0 - b, 1.0 - a).unwrap() - f).abs() <= 1e-12);
        prop_assert!(f >= 0.0 && f <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn scores_ignore_monotone_rescaling_of_factors(seed in 0u64..1000, power in 1i32..4) {
        let bundle = DatasetBundle::generate(&BundleSpec::new(DatasetKind::Pendulum, 200, seed)).unwrap();
        let params = ModelParams::init(
            Dims { m: bundle.m(), k: bundle.k(), m_u: bundle.nuisance_dims() },
            &TrainConfig { seed, ..TrainConfig::default() },
        )
        .unwrap();
        let mut warped = bundle.clone();
        warped.factors = bundle.factors.map(|v| v.powi(2 * power - 1) + v);
        let opts = EvalOptions::default();
        for kind in [MetricKind::Mic, MetricKind::Tic] {
            let p0 = pos_metric(&params, &bundle, &bundle.truth, kind, &opts).unwrap();
            let p1 = pos_metric(&params, &warped, &bundle.truth, kind, &opts).unwrap();
            let n0 = neg_metric(&params, &bundle, &bundle.truth, kind, &opts).unwrap();
            let n1 = neg_metric(&params, &warped, &bundle.truth, kind, &opts).unwrap();
            prop_assert!((p0 - p1).abs() <= 1e-12 && (n0 - n1).abs() <= 1e-12);
        }
    }
}
