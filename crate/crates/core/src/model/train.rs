use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::forward::{grad, Batch, Group, LabelBlock, LossBreakdown};
use super::params::{Dims, ModelParams};
use crate::datagen::DatasetBundle;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::seed::{self, Stream};
use crate::Matrix;

pub const LOG_COLUMNS: [&str; 11] = [
    "step",
    "vae",
    "cause",
    "effect",
    "classifier",
    "align",
    "acyc",
    "label_fit",
    "label_kl",
    "total",
    "h_weight",
];

/// Acyclicity weight at `step`: doubles every `lambda_h_doubling` steps
/// from `lambda_h_start`, capped at `lambda_h_max`.
pub fn lambda_h(cfg: &TrainConfig, step: usize) -> f64 {
    let doublings = (step / cfg.lambda_h_doubling).min(1023) as i32;
    (cfg.lambda_h_start * 2f64.powi(doublings)).min(cfg.lambda_h_max)
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones if the run diverged.
    pub params: ModelParams,
    /// One entry per completed step.
    pub log: Vec<LossBreakdown>,
    pub divergence: Option<Divergence>,
}

impl TrainOutcome {
    pub fn last(&self) -> Option<&LossBreakdown> {
        self.log.last()
    }

    pub fn log_csv(&self) -> String {
        let mut s = LOG_COLUMNS.join(",");
        s.push('\n');
        for (step, l) in self.log.iter().enumerate() {
            let _ = writeln!(
                s,
                "{step},{},{},{},{},{},{},{},{},{},{}",
                l.vae,
                l.cause,
                l.effect,
                l.classifier,
                l.align,
                l.acyc,
                l.label_fit,
                l.label_kl,
                l.total,
                l.h_weight
            );
        }
        s
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_csv()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Draws batches, partners, reparameterization noise and label blocks.
struct Sampler<'a> {
    bundle: &'a DatasetBundle,
    batch_size: usize,
    latent: usize,
    labeled: Vec<usize>,
    labels: Option<Matrix>,
    labeled_per_batch: usize,
    batches: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    fn new(bundle: &'a DatasetBundle, cfg: &TrainConfig, latent: usize) -> Self {
        let n = bundle.n();
        let (labeled, labels, per_batch) = if cfg.label_fraction > 0.0 {
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut seed::stream_rng(cfg.seed, Stream::Labels));
            let count = ((cfg.label_fraction * n as f64).round() as usize).clamp(1, n);
            rows.truncate(count);
            rows.sort_unstable();
            let per_batch = ((cfg.label_fraction * cfg.batch_size as f64).round() as usize)
                .clamp(1, cfg.batch_size);
            (rows, Some(bundle.standardized_factors()), per_batch)
        } else {
            (Vec::new(), None, 0)
        };
        Self {
            bundle,
            batch_size: cfg.batch_size,
            latent,
            labeled,
            labels,
            labeled_per_batch: per_batch,
            batches: seed::stream_rng(cfg.seed, Stream::Batches),
            noise: seed::stream_rng(cfg.seed, Stream::Reparam),
        }
    }

    fn next(&mut self) -> Batch {
        let n = self.bundle.n();
        let b = self.batch_size;
        // Labeled rows first so the label terms can slice a prefix.
        let mut rows = Vec::with_capacity(b);
        for _ in 0..self.labeled_per_batch {
            rows.push(self.labeled[self.batches.random_range(0..self.labeled.len())]);
        }
        while rows.len() < b {
            rows.push(self.batches.random_range(0..n));
        }
        let partners: Vec<usize> = rows.iter().map(|&r| self.bundle.pair_index[r]).collect();
        let x1 = linalg::select_rows(&self.bundle.observations, &rows);
        let x2 = linalg::select_rows(&self.bundle.observations, &partners);
        let noise1 = Matrix::from_fn(b, self.latent, |_, _| {
            StandardNormal.sample(&mut self.noise)
        });
        let noise2 = Matrix::from_fn(b, self.latent, |_, _| {
            StandardNormal.sample(&mut self.noise)
        });
        let labels = self.labels.as_ref().map(|u| LabelBlock {
            u: linalg::select_rows(u, &rows[..self.labeled_per_batch]),
        });
        Batch {
            x1,
            x2,
            noise1,
            noise2,
            labels,
        }
    }
}

fn apply(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Matrix>,
    group: Group,
    lr: f64,
    clip: f64,
) {
    let selected = |name: &str| match group {
        Group::Model => !ModelParams::is_classifier_block(name),
        Group::Classifier => ModelParams::is_classifier_block(name),
        Group::None => false,
    };
    let norm = grads
        .iter()
        .filter(|(k, _)| selected(k))
        .map(|(_, g)| g.norm_squared())
        .sum::<f64>()
        .sqrt();
    let scale = if norm > clip { clip / norm } else { 1.0 };
    for (name, g) in grads {
        if selected(name) {
            let block = params
                .blocks
                .get_mut(name)
                .expect("gradient for known block");
            *block -= g * (lr * scale);
        }
    }
    params.project();
}

pub fn dims_for(bundle: &DatasetBundle) -> Dims {
    Dims {
        m: bundle.m(),
        k: bundle.k(),
        m_u: bundle.m() - bundle.k(),
    }
}

/// Fresh initialization from `cfg.seed`, then [`train_from`].
pub fn train(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = ModelParams::init(dims_for(bundle), cfg)?;
    train_from(params, bundle, cfg)
}

/// Alternates one classifier step and one model step for `cfg.steps`
/// iterations of clipped gradient descent.
pub fn train_from(
    mut params: ModelParams,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_shapes()?;
    if params.dims.m != bundle.m() || params.dims.k != bundle.k() {
        return Err(invalid(format!(
            "model is {}x{} (observed x factors), data is {}x{}",
            params.dims.m,
            params.dims.k,
            bundle.m(),
            bundle.k()
        )));
    }
    if bundle.n() < 2 {
        return Err(invalid("training needs at least 2 samples"));
    }
    let mut sampler = Sampler::new(bundle, cfg, params.dims.latent());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sampler.next();
        let hw = lambda_h(cfg, step);
        let before = params.clone();
        let outcome = (|| -> Result<LossBreakdown> {
            let (cla_parts, g_cla) = grad(&params, &batch, cfg, hw, Group::Classifier)?;
            apply(&mut params, &g_cla, Group::Classifier, cfg.lr, cfg.clip);
            let (mut parts, g_model) = grad(&params, &batch, cfg, hw, Group::Model)?;
            apply(&mut params, &g_model, Group::Model, cfg.lr, cfg.clip);
            parts.classifier = cla_parts.classifier;
            if !params.all_finite() {
                return Err(Error::NonFinite {
                    op: "parameter update",
                });
            }
            Ok(parts)
        })();
        match outcome {
            Ok(parts) => log.push(parts),
            Err(Error::NonFinite { op }) => {
                return Ok(TrainOutcome {
                    params: before,
                    log,
                    divergence: Some(Divergence {
                        step,
                        reason: format!("non-finite value from `{op}`"),
                    }),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        divergence: None,
    })
}
