use std::path::Path;
use std::process::{Command, Output};

use doswap_core::datagen::DatasetBundle;
use doswap_core::eval::{f1_score, MetricReport};
use doswap_core::model::{dims_for, ModelParams, TrainConfig};

fn doswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doswap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = doswap(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    doswap(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, n: usize, seed: u64) {
    ok(&[
        "generate",
        "pendulum",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(dir),
    ]);
}

#[test]
fn generate_writes_a_complete_reproducible_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let line = ok(&[
        "generate",
        "pendulum",
        "--n",
        "1000",
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    assert!(line.contains("n=1000"), "{line}");
    generate(&b, 1000, 7);
    assert_eq!(std::fs::read_dir(&a).unwrap().count(), 6);
    let factors = std::fs::read_to_string(a.join("factors.csv")).unwrap();
    assert_eq!(factors.lines().count(), 1001);
    for f in [
        "factors.csv",
        "observations.csv",
        "nuisance.csv",
        "meta.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn counterexample_prints_a_ks_line_per_column() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "generate",
        "counterexample",
        "--n",
        "500",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(
        out.lines().filter(|l| l.contains("ks=")).count(),
        4,
        "{out}"
    );
    assert!(tmp.path().join("summary.json").is_file());
}

#[test]
fn input_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["generate", "galaxy", "--out", s(tmp.path())]), 2);
    let file = tmp.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(
        code(&[
            "generate",
            "flow",
            "--n",
            "50",
            "--out",
            s(&file.join("sub"))
        ]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&tmp.path().join("missing")),
            "--out",
            s(tmp.path())
        ]),
        2
    );

    let data = tmp.path().join("data");
    generate(&data, 100, 1);
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "steps = 3\nlearning_rate = 0.1\n").unwrap();
    let args = [
        "train",
        "--data",
        s(&data),
        "--out",
        s(tmp.path()),
        "--config",
        s(&cfg),
    ];
    assert_eq!(code(&args), 2);
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "--label-fraction",
            "1.5"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "--effect-target",
            "2"
        ]),
        2
    );
}

#[test]
fn zero_steps_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 100, 2);
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--steps",
        "0",
        "--seed",
        "5",
    ]);
    let bundle = DatasetBundle::load(&data).unwrap();
    let cfg = TrainConfig {
        steps: 0,
        seed: 5,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(dims_for(&bundle), &cfg).unwrap();
    let written = std::fs::read_to_string(run.join("model.json")).unwrap();
    assert_eq!(written.trim_end(), init.to_json().unwrap().trim_end());
}

fn log_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn flags_switch_loss_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 200, 3);
    let semi = tmp.path().join("semi");
    let out = ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&semi),
        "--steps",
        "5",
        "--label-fraction",
        "0.1",
    ]);
    assert!(out.contains("label_fit="), "{out}");
    assert!(log_column(&semi.join("train_log.csv"), "label_fit")
        .iter()
        .all(|v| *v > 0.0));

    let ablate = tmp.path().join("ablate");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&ablate),
        "--steps",
        "5",
        "--no-do-cause",
        "--no-do-effect",
        "--cdl-mode",
        "linear",
    ]);
    let log = ablate.join("train_log.csv");
    assert!(log_column(&log, "cause").iter().all(|v| *v == 0.0));
    assert!(log_column(&log, "effect").iter().all(|v| *v == 0.0));
    assert!(log_column(&log, "label_fit").iter().all(|v| *v == 0.0));
    let model = ModelParams::load(&ablate.join("model.json")).unwrap();
    assert!(!model.config.enable_do_cause && !model.config.enable_do_effect);
}

#[test]
fn training_and_evaluation_are_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 200, 4);
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "steps = 20\nbatch_size = 16\nalpha = 0.5\n").unwrap();
    for run in ["r1", "r2"] {
        let dir = tmp.path().join(run);
        ok(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&dir),
            "--config",
            s(&cfg),
        ]);
        ok(&[
            "evaluate",
            "--model",
            s(&dir.join("model.json")),
            "--data",
            s(&data),
            "--out",
            s(&dir.join("report.json")),
        ]);
    }
    for f in ["model.json", "train_log.csv", "report.json"] {
        let a = std::fs::read(tmp.path().join("r1").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let model = ModelParams::load(&tmp.path().join("r1/model.json")).unwrap();
    assert_eq!((model.config.steps, model.config.alpha), (20, 0.5));
}

#[test]
fn evaluating_an_untrained_model_reports_consistent_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 300, 5);
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--steps",
        "0",
    ]);
    let report_path = tmp.path().join("nested/report.json");
    let line = ok(&[
        "evaluate",
        "--model",
        s(&run.join("model.json")),
        "--data",
        s(&data),
        "--out",
        s(&report_path),
    ]);
    assert!(line.contains("pos_mic="), "{line}");
    let report: MetricReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!((report.f1_mic - f1_score(report.pos_mic, report.neg_mic).unwrap()).abs() <= 1e-10);
    assert!((report.f1_tic - f1_score(report.pos_tic, report.neg_tic).unwrap()).abs() <= 1e-10);

    let other = tmp.path().join("wide");
    ok(&[
        "generate",
        "pendulum",
        "--n",
        "100",
        "--nuisance-dims",
        "3",
        "--out",
        s(&other),
    ]);
    let (model, out) = (run.join("model.json"), tmp.path().join("x.json"));
    let args = [
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&other),
        "--out",
        s(&out),
    ];
    assert_eq!(code(&args), 2);
}

#[test]
fn divergence_exits_with_code_three_and_keeps_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 100, 6);
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "steps = 50\nlr = 1e300\nclip = 1e300\n").unwrap();
    let run = tmp.path().join("run");
    let args = [
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--config",
        s(&cfg),
    ];
    assert_eq!(code(&args), 3);
    assert!(run.join("train_log.csv").is_file());
    assert!(ModelParams::load(&run.join("model.json"))
        .unwrap()
        .all_finite());
}

#[test]
fn adequacy_writes_rows_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 200, 7);
    let cfg = tmp.path().join("study.toml");
    std::fs::write(
        &cfg,
        "variants = 6\nseeds = [0, 1]\neval_rows = 100\nsteps = 3\nbatch_size = 16\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        let out = ok(&[
            "adequacy",
            "--data",
            s(&data),
            "--out",
            s(&tmp.path().join(run)),
            "--config",
            s(&cfg),
        ]);
        assert!(out.starts_with("12 rows"), "{out}");
        assert!(out.contains("pos_mic"), "{out}");
    }
    for f in ["rows.csv", "correlations.csv", "plot.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let rows = std::fs::read_to_string(tmp.path().join("a/rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 13);
    std::fs::write(&cfg, "variants = 6\nrepeats = 2\n").unwrap();
    assert_eq!(
        code(&[
            "adequacy",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "--config",
            s(&cfg)
        ]),
        2
    );
}
