use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{CdlMode, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::graph::{BinaryGraph, WeightedDigraph};
use crate::linalg;
use crate::seed::{self, Stream};
use crate::Matrix;

/// Model dimensions: observation width `m`, causal factors `k`, nuisance `m_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub k: usize,
    pub m_u: usize,
}

impl Dims {
    pub fn latent(&self) -> usize {
        self.k + self.m_u
    }
}

/// Named parameter blocks plus the configuration they were built for.
///
/// Block names: `enc_w`, `enc_b`, `zmap_w`, `zmap_b`, `cdl_a`,
/// `cdl_w1_{i}` / `cdl_w2_{i}` (GAE mode), `dec_w`, `dec_b` (affine
/// decoder) or `dec_w1`, `dec_b1`, `dec_w2`, `dec_b2`, and
/// `cls_w1`, `cls_b1`, `cls_w2`, `cls_b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub config: TrainConfig,
    pub blocks: BTreeMap<String, Matrix>,
    /// 1 where an entry of `A` may be non-zero; the diagonal is always 0.
    pub a_mask: Matrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    dims: Dims,
    seed: u64,
    config: TrainConfig,
    a_mask: Vec<Vec<f64>>,
    blocks: BTreeMap<String, Vec<Vec<f64>>>,
}

fn gaussian(rows: usize, cols: usize, sd: f64, rng: &mut impl Rng) -> Matrix {
    let d = Normal::new(0.0, sd).expect("positive scale");
    Matrix::from_fn(rows, cols, |_, _| d.sample(rng))
}

fn off_diagonal(k: usize) -> Matrix {
    Matrix::from_fn(k, k, |r, c| if r == c { 0.0 } else { 1.0 })
}

impl ModelParams {
    /// Random initialization from `config.seed`.
    pub fn init(dims: Dims, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if dims.k == 0 || dims.m == 0 {
            return Err(invalid(
                "model needs at least one factor and one observed dimension",
            ));
        }
        let mut rng = seed::stream_rng(config.seed, Stream::Init);
        let Dims { m, k, .. } = dims;
        let lat = dims.latent();
        let mut blocks = BTreeMap::new();
        let mut put = |name: &str, v: Matrix| {
            blocks.insert(name.to_string(), v);
        };

        put(
            "enc_w",
            gaussian(m, 2 * lat, 1.0 / (m as f64).sqrt(), &mut rng),
        );
        put("enc_b", Matrix::zeros(1, 2 * lat));
        put("zmap_w", Matrix::identity(k, k));
        put("zmap_b", Matrix::zeros(1, k));

        // Random signs, magnitudes in [a_init/2, a_init]: every column starts
        // above the root threshold so structure can be learned at all.
        let a = Matrix::from_fn(k, k, |r, c| {
            if r == c {
                0.0
            } else {
                let mag = config.a_init * rng.random_range(0.5..=1.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            }
        });
        put("cdl_a", a);
        if config.cdl_mode == CdlMode::Gae {
            let h = config.gae_hidden;
            for i in 0..k {
                put(
                    &format!("cdl_w1_{i}"),
                    gaussian(k, h, 1.0 / (k as f64).sqrt(), &mut rng),
                );
                put(
                    &format!("cdl_w2_{i}"),
                    gaussian(h, 1, 1.0 / (h as f64).sqrt(), &mut rng),
                );
            }
        }
        if config.decoder_hidden == 0 {
            put(
                "dec_w",
                gaussian(lat, m, 1.0 / (lat as f64).sqrt(), &mut rng),
            );
            put("dec_b", Matrix::zeros(1, m));
        } else {
            let h = config.decoder_hidden;
            put(
                "dec_w1",
                gaussian(lat, h, 1.0 / (lat as f64).sqrt(), &mut rng),
            );
            put("dec_b1", Matrix::zeros(1, h));
            put("dec_w2", gaussian(h, m, 1.0 / (h as f64).sqrt(), &mut rng));
            put("dec_b2", Matrix::zeros(1, m));
        }
        let h = config.classifier_hidden;
        put("cls_w1", gaussian(m, h, 1.0 / (m as f64).sqrt(), &mut rng));
        put("cls_b1", Matrix::zeros(1, h));
        put("cls_w2", gaussian(h, 1, 1.0 / (h as f64).sqrt(), &mut rng));
        put("cls_b2", Matrix::zeros(1, 1));

        Ok(Self {
            dims,
            config: config.clone(),
            blocks,
            a_mask: off_diagonal(k),
        })
    }

    /// Initialization with `A` fixed to a given support: weight `weight` on
    /// every edge and every absent entry frozen at zero.
    pub fn init_with_structure(
        dims: Dims,
        config: &TrainConfig,
        graph: &BinaryGraph,
        weight: f64,
    ) -> Result<Self> {
        if graph.d() != dims.k {
            return Err(invalid(format!(
                "graph has {} nodes, model has {} factors",
                graph.d(),
                dims.k
            )));
        }
        let mut p = Self::init(dims, config)?;
        let w = WeightedDigraph::from_binary(graph, weight);
        p.a_mask = w.weights().map(|v| if v != 0.0 { 1.0 } else { 0.0 });
        p.blocks.insert("cdl_a".into(), w.weights().clone());
        Ok(p)
    }

    pub fn block(&self, name: &str) -> &Matrix {
        self.blocks
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter block `{name}`"))
    }

    /// `A` with the support mask applied.
    pub fn a_matrix(&self) -> Matrix {
        self.block("cdl_a").component_mul(&self.a_mask)
    }

    pub fn adjacency(&self) -> WeightedDigraph {
        WeightedDigraph::unnamed(self.a_matrix()).expect("finite square A")
    }

    pub fn is_classifier_block(name: &str) -> bool {
        name.starts_with("cls_")
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.values().map(|m| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .values()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Re-applies the support mask (zero diagonal, frozen entries).
    pub(crate) fn project(&mut self) {
        let masked = self.a_matrix();
        self.blocks.insert("cdl_a".into(), masked);
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ParamsFile {
            dims: self.dims,
            seed: self.config.seed,
            config: self.config.clone(),
            a_mask: linalg::to_rows(&self.a_mask),
            blocks: self
                .blocks
                .iter()
                .map(|(k, v)| (k.clone(), linalg::to_rows(v)))
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Format {
            path: "<model>".into(),
            message: e.to_string(),
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fmt = |m: String| Error::Format {
            path: "<model>".into(),
            message: m,
        };
        let file: ParamsFile = serde_json::from_str(s).map_err(|e| fmt(e.to_string()))?;
        file.config.validate()?;
        let mut blocks = BTreeMap::new();
        for (name, rows) in file.blocks {
            let m = if rows.is_empty() {
                Matrix::zeros(0, 0)
            } else {
                linalg::from_rows(&rows).map_err(|e| fmt(format!("block {name}: {e}")))?
            };
            blocks.insert(name, m);
        }
        let a_mask = linalg::from_rows(&file.a_mask).map_err(|e| fmt(e.to_string()))?;
        let p = Self {
            dims: file.dims,
            config: file.config,
            blocks,
            a_mask,
        };
        p.check_shapes().map_err(|e| fmt(e.to_string()))?;
        Ok(p)
    }

    /// Verifies that every block a forward pass needs exists with the right shape.
    pub fn check_shapes(&self) -> Result<()> {
        let Dims { m, k, .. } = self.dims;
        let lat = self.dims.latent();
        let mut want: Vec<(String, (usize, usize))> = vec![
            ("enc_w".into(), (m, 2 * lat)),
            ("enc_b".into(), (1, 2 * lat)),
            ("zmap_w".into(), (k, k)),
            ("zmap_b".into(), (1, k)),
            ("cdl_a".into(), (k, k)),
        ];
        if self.config.cdl_mode == CdlMode::Gae {
            let h = self.config.gae_hidden;
            for i in 0..k {
                want.push((format!("cdl_w1_{i}"), (k, h)));
                want.push((format!("cdl_w2_{i}"), (h, 1)));
            }
        }
        if self.config.decoder_hidden == 0 {
            want.push(("dec_w".into(), (lat, m)));
            want.push(("dec_b".into(), (1, m)));
        } else {
            let h = self.config.decoder_hidden;
            want.push(("dec_w1".into(), (lat, h)));
            want.push(("dec_b1".into(), (1, h)));
            want.push(("dec_w2".into(), (h, m)));
            want.push(("dec_b2".into(), (1, m)));
        }
        let h = self.config.classifier_hidden;
        want.push(("cls_w1".into(), (m, h)));
        want.push(("cls_b1".into(), (1, h)));
        want.push(("cls_w2".into(), (h, 1)));
        want.push(("cls_b2".into(), (1, 1)));
        for (name, shape) in &want {
            match self.blocks.get(name) {
                None => return Err(invalid(format!("missing block `{name}`"))),
                Some(b) if b.shape() != *shape => {
                    return Err(invalid(format!(
                        "block `{name}` is {:?}, expected {shape:?}",
                        b.shape()
                    )))
                }
                _ => {}
            }
        }
        if self.blocks.len() != want.len() {
            return Err(invalid("unexpected extra parameter blocks"));
        }
        if self.a_mask.shape() != (k, k) {
            return Err(invalid("A mask has the wrong shape"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = self.to_json()?;
        std::fs::write(path, s + "\n").map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Format { message, .. } => Error::Format {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}
