use doswap_core::datagen::{
    flow_scm, gaussian_counterexample, graph_variants, make_pairs, observe, pendulum_scm,
    sample_factors, summarize_counterexample, BundleSpec, CounterexampleParams, DatasetBundle,
    DatasetKind, BUNDLE_FILES,
};
use doswap_core::graph::{graph_rubrics, is_dag};
use doswap_core::mic::{mic_with, MicParams};
use doswap_core::stats::mean_var;
use proptest::prelude::*;

fn column(m: &doswap_core::Matrix, c: usize) -> Vec<f64> {
    m.column(c).iter().copied().collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn pendulum_roots_are_uncorrelated() {
    let f = sample_factors(&pendulum_scm(), 10_000, 21).unwrap();
    let r = correlation(&column(&f, 0), &column(&f, 1));
    assert!(r.abs() < 0.05, "r = {r}");
}

#[test]
fn flow_has_a_two_hop_path() {
    let scm = flow_scm();
    let g = scm.graph();
    assert!(g.has_edge(0, 2) && g.has_edge(2, 3) && g.has_edge(1, 3));
    assert_eq!(g.edge_count(), 3);
    let order = doswap_core::graph::topological_order(g).unwrap();
    let pos = |n: usize| order.iter().position(|&o| o == n).unwrap();
    assert!(pos(0) < pos(2) && pos(2) < pos(3));
}

#[test]
fn observations_carry_factor_information() {
    let b = DatasetBundle::generate(&BundleSpec::new(DatasetKind::Pendulum, 500, 4)).unwrap();
    let best = (0..b.m())
        .map(|d| {
            mic_with(
                &column(&b.observations, d),
                &column(&b.factors, 0),
                MicParams::default(),
            )
            .unwrap()
        })
        .fold(0.0, f64::max);
    assert!(best > 0.0);
    let first = mic_with(
        &column(&b.observations, 0),
        &column(&b.factors, 0),
        MicParams::default(),
    )
    .unwrap();
    assert!(first > 0.0);
}

#[test]
fn counterexample_moments_converge() {
    let params = CounterexampleParams::default();
    let n = 10_000;
    let bundle = gaussian_counterexample(params, n, 8).unwrap();
    for table in [&bundle.original, &bundle.constructed] {
        for c in 0..4 {
            let (mean, var) = mean_var(&column(table, c));
            let (mu, sd) = (params.means[c], params.sds[c]);
            let se_mean = sd / (n as f64).sqrt();
            let se_var = sd * sd * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((mean - mu).abs() < 3.0 * se_mean, "column {c} mean {mean}");
            assert!((var - sd * sd).abs() < 3.0 * se_var, "column {c} var {var}");
        }
    }
}

#[test]
fn counterexample_separates_joints_but_not_marginals() {
    let bundle = gaussian_counterexample(CounterexampleParams::default(), 2000, 0).unwrap();
    let s = summarize_counterexample(&bundle, MicParams::default()).unwrap();
    assert!(s.marginals_match(), "{s:?}");
    assert!(s.mic_gap() >= 0.3, "{s:?}");
}

#[test]
fn pendulum_variants_are_dags_with_spread_rubrics() {
    let truth = pendulum_scm().graph().clone();
    let variants = graph_variants(&truth, 14, 0).unwrap();
    assert_eq!(variants.len(), 14);
    let deletions = variants
        .iter()
        .filter(|g| g.edge_count() == 3 && g.edges().iter().all(|&(a, b)| truth.has_edge(a, b)))
        .count();
    assert_eq!(deletions, 4);
    let mut shds: Vec<usize> = variants
        .iter()
        .map(|g| {
            assert!(is_dag(g));
            graph_rubrics(g, &truth).unwrap().shd
        })
        .collect();
    shds.sort_unstable();
    shds.dedup();
    assert_eq!(&shds[..3], &[0, 1, 2]);
    assert_eq!(variants, graph_variants(&truth, 14, 0).unwrap());
}

#[test]
fn bundle_directory_has_the_documented_files() {
    let dir = tempfile::tempdir().unwrap();
    let b = DatasetBundle::generate(&BundleSpec::new(DatasetKind::Flow, 50, 6)).unwrap();
    b.save(dir.path()).unwrap();
    for f in BUNDLE_FILES {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let header = std::fs::read_to_string(dir.path().join("factors.csv")).unwrap();
    assert!(header.starts_with("ball_size,hole,water_height,flow"));
    assert_eq!(DatasetBundle::load(dir.path()).unwrap(), b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pairs_are_deterministic_derangements(n in 2usize..300, seed in any::<u64>()) {
        let p = make_pairs(n, seed).unwrap();
        prop_assert_eq!(&p, &make_pairs(n, seed).unwrap());
        let mut seen = vec![false; n];
        for (i, &j) in p.iter().enumerate() {
            prop_assert!(i != j);
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
    }

    #[test]
    fn factors_stay_in_range(seed in any::<u64>(), flow in any::<bool>()) {
        let scm = if flow { flow_scm() } else { pendulum_scm() };
        let f = sample_factors(&scm, 200, seed).unwrap();
        for (c, &(lo, hi)) in scm.ranges().iter().enumerate() {
            for v in f.column(c).iter() {
                prop_assert!(*v >= lo && *v <= hi, "factor {} value {} outside [{}, {}]", c, v, lo, hi);
            }
        }
    }

    #[test]
    fn noiseless_observation_preserves_row_norms(seed in any::<u64>(), m_u in 0usize..4) {
        let f = sample_factors(&pendulum_scm(), 40, seed).unwrap();
        let obs = observe(&f, m_u, 0.0, seed).unwrap();
        prop_assert_eq!(obs.observations.ncols(), 4 + m_u);
        let q = &obs.mixing;
        prop_assert!((q.transpose() * q - doswap_core::Matrix::identity(4 + m_u, 4 + m_u)).amax() < 1e-12);
        for r in 0..40 {
            let mut latent = 0.0;
            for c in 0..4 {
                let z = (f[(r, c)] - obs.factor_means[c]) / obs.factor_sds[c];
                latent += z * z;
            }
            for c in 0..m_u {
                latent += obs.nuisance[(r, c)].powi(2);
            }
            let observed = obs.observations.row(r).norm_squared();
            prop_assert!((latent - observed).abs() < 1e-10 * latent.max(1.0));
        }
    }
}
