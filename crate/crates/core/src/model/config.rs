use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of the causal discovery layer for non-root nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CdlMode {
    /// `ẑ_i = Σ_j A_ji z_j`
    Linear,
    /// `ẑ_i = W2_i · tanh(W1_i · (A_{·,i} ⊙ z))`
    #[default]
    Gae,
}

impl std::str::FromStr for CdlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(CdlMode::Linear),
            "gae" => Ok(CdlMode::Gae),
            other => Err(Error::Config(format!(
                "unknown cdl mode `{other}` (expected linear or gae)"
            ))),
        }
    }
}

/// Hyperparameters of a training run. Every field has a default, so a
/// config file only needs the keys it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the do-cause reconstruction loss.
    pub alpha: f64,
    /// Weight of the do-effect classifier loss.
    pub beta: f64,
    /// Weight of the `‖ẑ - z‖²` alignment term.
    pub gamma: f64,
    /// Acyclicity weight at step 0.
    pub lambda_h_start: f64,
    /// The acyclicity weight doubles every this many steps.
    pub lambda_h_doubling: usize,
    pub lambda_h_max: f64,
    /// Columns of `A` with L2 norm below this are roots (causes).
    pub tau: f64,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cdl_mode: CdlMode,
    /// Hidden width of each per-node network in GAE mode.
    pub gae_hidden: usize,
    /// Hidden width of the decoder; 0 means affine.
    pub decoder_hidden: usize,
    pub classifier_hidden: usize,
    /// Magnitude of the initial off-diagonal entries of `A`.
    pub a_init: f64,
    pub enable_do_cause: bool,
    pub enable_do_effect: bool,
    /// Label the do-effect loss pushes counterfactuals toward (0 or 1).
    pub effect_target_label: u8,
    /// Fraction of samples whose factors are visible to the semi-supervised terms.
    pub label_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 1.0,
            lambda_h_start: 0.1,
            lambda_h_doubling: 500,
            lambda_h_max: 100.0,
            tau: crate::graph::DEFAULT_TAU,
            lr: 5e-3,
            clip: 10.0,
            steps: 5000,
            batch_size: 64,
            seed: 0,
            cdl_mode: CdlMode::Gae,
            gae_hidden: 8,
            decoder_hidden: 0,
            classifier_hidden: 16,
            a_init: 0.4,
            enable_do_cause: true,
            enable_do_effect: true,
            effect_target_label: 0,
            label_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return bad(format!(
                "label_fraction must lie in [0, 1], got {}",
                self.label_fraction
            ));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if !(self.lambda_h_start >= 0.0)
            || !(self.lambda_h_max >= 0.0)
            || self.lambda_h_doubling == 0
        {
            return bad(
                "acyclicity schedule needs non-negative weights and a positive doubling period"
                    .into(),
            );
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.effect_target_label > 1 {
            return bad(format!(
                "effect_target_label must be 0 or 1, got {}",
                self.effect_target_label
            ));
        }
        if self.cdl_mode == CdlMode::Gae && self.gae_hidden == 0 {
            return bad("gae_hidden must be positive in gae mode".into());
        }
        if self.classifier_hidden == 0 {
            return bad("classifier_hidden must be positive".into());
        }
        if !(self.a_init >= 0.0) || !self.a_init.is_finite() {
            return bad(format!(
                "a_init must be finite and >= 0, got {}",
                self.a_init
            ));
        }
        Ok(())
    }

    /// Whether the do-cause loss contributes (enabled and non-zero weight).
    pub fn uses_do_cause(&self) -> bool {
        self.enable_do_cause && self.alpha > 0.0
    }

    pub fn uses_do_effect(&self) -> bool {
        self.enable_do_effect && self.beta > 0.0
    }
}
