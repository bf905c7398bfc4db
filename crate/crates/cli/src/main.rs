//! `doswap` — generate data, train, evaluate and run the metric-adequacy study.
//!
//! Exit codes: 0 on success, 2 for input or configuration errors, 3 for
//! numeric failures (divergence, non-finite values).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use doswap_core::datagen::{
    self, gaussian_counterexample, graph_variants, summarize_counterexample, BundleSpec,
    CounterexampleParams, DatasetBundle, DatasetKind,
};
use doswap_core::eval::{
    adequacy_study, evaluate_model, AdequacyConfig, CorrelationKind, EvalOptions, RUBRIC_COLUMNS,
};
use doswap_core::graph::{binarize, graph_rubrics};
use doswap_core::mic::MicParams;
use doswap_core::model::{self, CdlMode, ModelParams, TrainConfig};
use doswap_core::Error;
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "doswap",
    version,
    about = "Causal representation learning with do-operation latent swaps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset bundle (or the Gaussian counterexample).
    Generate(GenerateArgs),
    /// Train a model on a bundle directory.
    Train(TrainArgs),
    /// Score a trained model against a bundle's ground truth.
    Evaluate(EvaluateArgs),
    /// Train one model per (graph variant, seed) and correlate metrics with rubrics.
    Adequacy(AdequacyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerateKind {
    Pendulum,
    Flow,
    Counterexample,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    dataset: GenerateKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Extra nuisance dimensions mixed into the observations.
    #[arg(long)]
    nuisance_dims: Option<usize>,
    /// Observation noise standard deviation.
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Noise share of each non-root factor's range (0 gives a noiseless SCM).
    #[arg(long)]
    factor_noise: Option<f64>,
    /// Correlation used by the counterexample construction.
    #[arg(long)]
    rho: Option<f64>,
}

/// Flags shared by `train` and `adequacy` that override config-file keys.
#[derive(Args)]
struct TrainOverrides {
    /// Flat TOML file with `TrainConfig` keys (alpha, beta, gamma, steps,
    /// batch_size, lr, clip, tau, cdl_mode, gae_hidden, decoder_hidden,
    /// classifier_hidden, a_init, lambda_h_start, lambda_h_doubling,
    /// lambda_h_max, enable_do_cause, enable_do_effect, effect_target_label,
    /// label_fraction, seed). Unknown keys are errors.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of labelled samples; above 0 switches on the semi-supervised terms.
    #[arg(long)]
    label_fraction: Option<f64>,
    /// Disable the do-cause swap.
    #[arg(long)]
    no_do_cause: bool,
    /// Disable the do-effect swap.
    #[arg(long)]
    no_do_effect: bool,
    #[arg(long, value_enum)]
    cdl_mode: Option<CdlArg>,
    /// Classifier label the counterfactual reconstructions are pushed toward.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    effect_target: Option<u8>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CdlArg {
    Linear,
    Gae,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `model.json` and `train_log.csv`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output path of the JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Score on the first this many rows.
    #[arg(long, default_value_t = doswap_core::eval::DEFAULT_EVAL_ROWS)]
    rows: usize,
}

#[derive(Args)]
struct AdequacyArgs {
    /// Bundle directory; defaults to a fresh pendulum bundle (n = 4000, seed 0).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for rows.csv, correlations.csv and plot.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// Study-level keys accepted next to the training keys in an adequacy config.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StudyKeys {
    variants: usize,
    variant_seed: u64,
    seeds: Vec<u64>,
    edge_weight: f64,
    correlation: CorrelationKind,
    eval_rows: usize,
}

impl Default for StudyKeys {
    fn default() -> Self {
        let d = AdequacyConfig::default();
        Self {
            variants: 14,
            variant_seed: 0,
            seeds: d.seeds,
            edge_weight: d.edge_weight,
            correlation: d.correlation,
            eval_rows: d.eval.max_rows,
        }
    }
}

const STUDY_KEYS: [&str; 6] = [
    "variants",
    "variant_seed",
    "seeds",
    "edge_weight",
    "correlation",
    "eval_rows",
];

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::Diverged { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| input_error(format!("cannot create {}: {e}", path.display())))
}

fn parse_table(path: &Path) -> CliResult<toml::Table> {
    read_text(path)?
        .parse::<toml::Table>()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn table_into<T: for<'de> Deserialize<'de>>(table: toml::Table, path: &Path) -> CliResult<T> {
    T::deserialize(toml::Value::Table(table))
        .map_err(|e| input_error(format!("{}: {e}", path.display())))
}

impl TrainOverrides {
    /// Config-file keys (if any), then command-line overrides, then validation.
    fn resolve(&self, base: TrainConfig, table: Option<toml::Table>) -> CliResult<TrainConfig> {
        let mut cfg = match (table, &self.config) {
            (Some(t), Some(path)) => {
                // File keys override the base; unknown keys still fail.
                let mut merged = toml::Table::try_from(&base)
                    .map_err(|e| input_error(format!("cannot encode defaults: {e}")))?;
                merged.extend(t);
                table_into(merged, path)?
            }
            _ => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.label_fraction {
            cfg.label_fraction = f;
        }
        if self.no_do_cause {
            cfg.enable_do_cause = false;
        }
        if self.no_do_effect {
            cfg.enable_do_effect = false;
        }
        if let Some(mode) = self.cdl_mode {
            cfg.cdl_mode = match mode {
                CdlArg::Linear => CdlMode::Linear,
                CdlArg::Gae => CdlMode::Gae,
            };
        }
        if let Some(t) = self.effect_target {
            cfg.effect_target_label = t;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    create_dir(&args.out)?;
    let kind = match args.dataset {
        GenerateKind::Pendulum => DatasetKind::Pendulum,
        GenerateKind::Flow => DatasetKind::Flow,
        GenerateKind::Counterexample => return generate_counterexample(args),
    };
    let mut spec = BundleSpec::new(kind, args.n, args.seed);
    if let Some(m) = args.nuisance_dims {
        spec.nuisance_dims = m;
    }
    if let Some(s) = args.noise_sd {
        spec.noise_sd = s;
    }
    if let Some(f) = args.factor_noise {
        spec.factor_noise_fraction = f;
    }
    let bundle = DatasetBundle::generate(&spec)?;
    bundle.save(&args.out)?;
    println!(
        "generated {} n={} factors={} observed={} edges={:?}",
        kind.name(),
        bundle.n(),
        bundle.meta.factor_names.join(","),
        bundle.m(),
        bundle.truth.edges()
    );
    Ok(())
}

fn generate_counterexample(args: &GenerateArgs) -> CliResult<()> {
    let mut params = CounterexampleParams::default();
    if let Some(rho) = args.rho {
        params.rho = rho;
    }
    let ce = gaussian_counterexample(params, args.n, args.seed)?;
    let header: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    datagen::write_csv(&args.out.join("original.csv"), &header, &ce.original)?;
    datagen::write_csv(&args.out.join("constructed.csv"), &header, &ce.constructed)?;
    let summary = summarize_counterexample(&ce, MicParams::default())?;
    datagen::write_json(&args.out.join("summary.json"), &summary)?;
    for (c, ks) in summary.ks.iter().enumerate() {
        println!(
            "column {} ks={ks:.4} critical={:.4} {}",
            header[c],
            summary.ks_critical,
            if *ks < summary.ks_critical {
                "same-marginal"
            } else {
                "differs"
            }
        );
    }
    println!(
        "mean pairwise mic original={:.4} constructed={:.4} gap={:.4}",
        summary.mean_pairwise_mic_original,
        summary.mean_pairwise_mic_constructed,
        summary.mic_gap()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let table = args
        .overrides
        .config
        .as_deref()
        .map(parse_table)
        .transpose()?;
    let cfg = args.overrides.resolve(TrainConfig::default(), table)?;
    let bundle = DatasetBundle::load(&args.data)?;
    create_dir(&args.out)?;
    let outcome = model::train(&bundle, &cfg)?;
    outcome.params.save(&args.out.join("model.json"))?;
    outcome.write_log(&args.out.join("train_log.csv"))?;
    if let Some(last) = outcome.last() {
        println!(
            "final vae={:.6} cause={:.6} effect={:.6} classifier={:.6} align={:.6} acyc={:.6e} label_fit={:.6} label_kl={:.6} total={:.6}",
            last.vae,
            last.cause,
            last.effect,
            last.classifier,
            last.align,
            last.acyc,
            last.label_fit,
            last.label_kl,
            last.total
        );
    }
    let learned = binarize(&outcome.params.adjacency(), cfg.tau)?;
    let r = graph_rubrics(&learned, &bundle.truth)?;
    println!(
        "learned edges {:?} (latent indices) tpr={:.4} fdr={:.4} shd={}",
        learned.edges(),
        r.tpr,
        r.fdr,
        r.shd
    );
    if let Some(d) = outcome.divergence {
        return Err(Failure {
            code: 3,
            message: format!(
                "training diverged at step {}: {} (log and last finite parameters kept)",
                d.step, d.reason
            ),
        });
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let params = ModelParams::load(&args.model)?;
    let bundle = DatasetBundle::load(&args.data)?;
    if params.dims.m != bundle.m() || params.dims.k != bundle.k() {
        return Err(input_error(format!(
            "model expects {} observed / {} factors, data has {} / {}",
            params.dims.m,
            params.dims.k,
            bundle.m(),
            bundle.k()
        )));
    }
    let opts = EvalOptions {
        max_rows: args.rows,
        ..EvalOptions::default()
    };
    let report = evaluate_model(&params, &bundle, &bundle.truth, &opts)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    datagen::write_json(&args.out, &report)?;
    println!("{}", report.one_line());
    Ok(())
}

fn cmd_adequacy(args: &AdequacyArgs) -> CliResult<()> {
    let mut table = args
        .overrides
        .config
        .as_deref()
        .map(parse_table)
        .transpose()?;
    let study: StudyKeys = match (&mut table, &args.overrides.config) {
        (Some(t), Some(path)) => {
            let mut keys = toml::Table::new();
            for k in STUDY_KEYS {
                if let Some(v) = t.remove(k) {
                    keys.insert(k.to_string(), v);
                }
            }
            table_into(keys, path)?
        }
        _ => StudyKeys::default(),
    };
    let train = args
        .overrides
        .resolve(AdequacyConfig::default().train, table)?;
    let bundle = match &args.data {
        Some(dir) => DatasetBundle::load(dir)?,
        None => DatasetBundle::generate(&BundleSpec::new(DatasetKind::Pendulum, 4000, 0))?,
    };
    let variants = graph_variants(&bundle.truth, study.variants, study.variant_seed)?;
    let config = AdequacyConfig {
        train,
        seeds: study.seeds,
        edge_weight: study.edge_weight,
        eval: EvalOptions {
            max_rows: study.eval_rows,
            ..EvalOptions::default()
        },
        correlation: study.correlation,
    };
    let result = adequacy_study(&bundle, &variants, &config)?;
    result.write(&args.out)?;
    println!("{} rows", result.rows.len());
    println!(
        "{:>8} {}",
        "metric",
        RUBRIC_COLUMNS.map(|r| format!("{r:>8}")).join(" ")
    );
    for line in result.correlations_csv().lines().skip(1) {
        let mut cells = line.split(',');
        let name = cells.next().unwrap_or_default();
        let vals: Vec<String> = cells
            .map(|v| {
                v.parse::<f64>()
                    .map_or(v.to_string(), |x| format!("{x:>8.3}"))
            })
            .collect();
        println!("{name:>8} {}", vals.join(" "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Adequacy(a) => cmd_adequacy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
