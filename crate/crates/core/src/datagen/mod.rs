//! Ground-truth data: SCM samplers, vector observations, sample pairing,
//! graph variants and the Gaussian counterexample.

mod counterexample;
mod observe;
mod scm;
mod variants;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use counterexample::{
    gaussian_counterexample, summarize as summarize_counterexample, Construction,
    CounterexampleBundle, CounterexampleParams, CounterexampleSummary,
};
pub use observe::{make_pairs, observe, random_orthogonal, Observation};
pub use scm::{
    flow_scm, flow_scm_with, pendulum_scm, pendulum_scm_with, sample_factors, FlowPhysics,
    Mechanism, PendulumGeometry, Scm, DEFAULT_NOISE_FRACTION, FLOW_FACTORS, PENDULUM_FACTORS,
};
pub use variants::graph_variants;

use crate::error::{invalid, Error, Result};
use crate::graph::BinaryGraph;
use crate::linalg;
use crate::seed::{self, Stream};
use crate::Matrix;

pub const DEFAULT_NUISANCE_DIMS: usize = 2;
pub const DEFAULT_OBSERVATION_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Pendulum,
    Flow,
}

impl DatasetKind {
    pub fn scm(self) -> Scm {
        match self {
            DatasetKind::Pendulum => pendulum_scm(),
            DatasetKind::Flow => flow_scm(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Pendulum => "pendulum",
            DatasetKind::Flow => "flow",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(DatasetKind::Pendulum),
            "flow" => Ok(DatasetKind::Flow),
            other => Err(invalid(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Parameters of a generated bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub dataset: DatasetKind,
    pub n: usize,
    pub nuisance_dims: usize,
    pub noise_sd: f64,
    /// Overrides the non-root noise fraction of the SCM.
    pub factor_noise_fraction: f64,
    pub seed: u64,
}

impl BundleSpec {
    pub fn new(dataset: DatasetKind, n: usize, seed: u64) -> Self {
        Self {
            dataset,
            n,
            nuisance_dims: DEFAULT_NUISANCE_DIMS,
            noise_sd: DEFAULT_OBSERVATION_NOISE,
            factor_noise_fraction: DEFAULT_NOISE_FRACTION,
            seed,
        }
    }

    pub fn scm(&self) -> Result<Scm> {
        match self.dataset {
            DatasetKind::Pendulum => {
                pendulum_scm_with(PendulumGeometry::default(), self.factor_noise_fraction)
            }
            DatasetKind::Flow => flow_scm_with(FlowPhysics::default(), self.factor_noise_fraction),
        }
    }
}

/// Everything persisted in `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub spec: BundleSpec,
    pub factor_names: Vec<String>,
    pub factor_ranges: Vec<(f64, f64)>,
    pub factor_noise: Vec<f64>,
    pub factor_means: Vec<f64>,
    pub factor_sds: Vec<f64>,
    /// Row-major orthogonal mixing matrix.
    pub mixing: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    /// `n x k` ground-truth factors.
    pub factors: Matrix,
    /// `n x m` observations.
    pub observations: Matrix,
    /// `n x m_u` nuisance draws.
    pub nuisance: Matrix,
    pub truth: BinaryGraph,
    /// Partner of each sample; never the sample itself.
    pub pair_index: Vec<usize>,
    pub meta: BundleMeta,
}

pub const BUNDLE_FILES: [&str; 6] = [
    "factors.csv",
    "observations.csv",
    "nuisance.csv",
    "graph.json",
    "pairs.json",
    "meta.json",
];

impl DatasetBundle {
    pub fn generate(spec: &BundleSpec) -> Result<Self> {
        Self::from_scm(&spec.scm()?, spec)
    }

    pub fn from_scm(scm: &Scm, spec: &BundleSpec) -> Result<Self> {
        if spec.n < 2 {
            return Err(invalid("a bundle needs at least 2 samples"));
        }
        let factors = sample_factors(scm, spec.n, seed::derive(spec.seed, Stream::Factors))?;
        let obs = observe(&factors, spec.nuisance_dims, spec.noise_sd, spec.seed)?;
        let pair_index = make_pairs(spec.n, seed::derive(spec.seed, Stream::Pairing))?;
        Ok(Self {
            factors,
            observations: obs.observations,
            nuisance: obs.nuisance,
            truth: scm.graph().clone(),
            pair_index,
            meta: BundleMeta {
                spec: spec.clone(),
                factor_names: scm.factor_names().to_vec(),
                factor_ranges: scm.ranges().to_vec(),
                factor_noise: scm.noise().to_vec(),
                factor_means: obs.factor_means,
                factor_sds: obs.factor_sds,
                mixing: linalg::to_rows(&obs.mixing),
            },
        })
    }

    pub fn n(&self) -> usize {
        self.factors.nrows()
    }

    pub fn k(&self) -> usize {
        self.factors.ncols()
    }

    pub fn m(&self) -> usize {
        self.observations.ncols()
    }

    pub fn nuisance_dims(&self) -> usize {
        self.nuisance.ncols()
    }

    pub fn mixing(&self) -> Matrix {
        linalg::from_rows(&self.meta.mixing).expect("validated on load")
    }

    /// Factors standardized with the moments used to build observations.
    pub fn standardized_factors(&self) -> Matrix {
        linalg::standardize(
            &self.factors,
            &self.meta.factor_means,
            &self.meta.factor_sds,
        )
    }

    /// First `n` rows (with pairs re-derived within the prefix).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.n());
        let rows: Vec<usize> = (0..n).collect();
        let mut out = self.clone();
        out.factors = linalg::select_rows(&self.factors, &rows);
        out.observations = linalg::select_rows(&self.observations, &rows);
        out.nuisance = linalg::select_rows(&self.nuisance, &rows);
        out.pair_index = make_pairs(n, seed::derive(self.meta.spec.seed, Stream::Pairing))?;
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_csv(
            &dir.join("factors.csv"),
            &self.meta.factor_names,
            &self.factors,
        )?;
        let obs_header: Vec<String> = (0..self.m()).map(|i| format!("x{i}")).collect();
        write_csv(
            &dir.join("observations.csv"),
            &obs_header,
            &self.observations,
        )?;
        let nu_header: Vec<String> = (0..self.nuisance_dims())
            .map(|i| format!("nuisance{i}"))
            .collect();
        write_csv(&dir.join("nuisance.csv"), &nu_header, &self.nuisance)?;
        write_json(&dir.join("graph.json"), &self.truth)?;
        write_json(&dir.join("pairs.json"), &self.pair_index)?;
        write_json(&dir.join("meta.json"), &self.meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (fh, factors) = read_csv(&dir.join("factors.csv"))?;
        let (_, observations) = read_csv(&dir.join("observations.csv"))?;
        let (_, nuisance) = read_csv(&dir.join("nuisance.csv"))?;
        let truth: BinaryGraph = read_json(&dir.join("graph.json"))?;
        let pair_index: Vec<usize> = read_json(&dir.join("pairs.json"))?;
        let meta: BundleMeta = read_json(&dir.join("meta.json"))?;
        let n = factors.nrows();
        let bad = |msg: &str| Error::Format {
            path: dir.display().to_string(),
            message: msg.to_string(),
        };
        if observations.nrows() != n || nuisance.nrows() != n || pair_index.len() != n {
            return Err(bad("row counts disagree between bundle files"));
        }
        if fh != meta.factor_names || truth.d() != factors.ncols() {
            return Err(bad("factor columns disagree with graph or metadata"));
        }
        if pair_index
            .iter()
            .enumerate()
            .any(|(i, &p)| p >= n || p == i)
        {
            return Err(bad("pairs.json is not a fixed-point-free index list"));
        }
        let mixing = linalg::from_rows(&meta.mixing).map_err(|_| bad("ragged mixing matrix"))?;
        if mixing.nrows() != observations.ncols() || mixing.ncols() != observations.ncols() {
            return Err(bad("mixing matrix does not match observation width"));
        }
        Ok(Self {
            factors,
            observations,
            nuisance,
            truth,
            pair_index,
            meta,
        })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl ToString) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Headered CSV; floats in shortest round-trip form.
pub fn write_csv(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e))?;
    w.write_record(header).map_err(|e| format_err(path, e))?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| format!("{v}")))
            .map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| format_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| format_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| format_err(path, e)))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let m = if rows.is_empty() {
        Matrix::zeros(0, header.len())
    } else {
        linalg::from_rows(&rows).map_err(|e| format_err(path, e))?
    };
    Ok((header, m))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let s = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| io_err(path, e))?;
    f.write_all(b"\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&s).map_err(|e| format_err(path, e))
}
