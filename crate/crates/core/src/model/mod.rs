//! Encoder, causal discovery layer (CDL), do-cause / do-effect swaps,
//! classifier, losses and training.
//!
//! Layout of a forward pass for a pair of samples `(x1, x2)`:
//!
//! ```text
//! x ──enc──▶ (mean, logvar) ──sample──▶ ε = [ε_c | ε_u]
//! ε_c ──z_map──▶ z ──CDL──▶ ẑ ──dec([ẑ, ε_u])──▶ x̂
//! do-cause:  swap cause coords of z1/z2, CDL, decode with crossed ε_u  ─▶ x̂'
//! do-effect: swap effect coords of ẑ1/ẑ2, decode with own ε_u          ─▶ x̂''
//! ```

mod config;
mod forward;
mod params;
mod train;

pub use config::{CdlMode, TrainConfig};
pub use forward::{
    cause_mask, cdl_forward, do_cause, do_effect, encode, encode_latents, grad, loss_cause,
    loss_classifier, loss_effect, loss_no_label, loss_semi, loss_vae, reparameterize, Batch, Group,
    LabelBlock, LossBreakdown,
};
pub use params::{Dims, ModelParams};
pub use train::{dims_for, lambda_h, train, train_from, Divergence, TrainOutcome, LOG_COLUMNS};
