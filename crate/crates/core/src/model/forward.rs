use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{CdlMode, TrainConfig};
use super::params::ModelParams;
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::graph::WeightedDigraph;
use crate::Matrix;

pub(crate) const LOGVAR_MIN: f64 = -8.0;
pub(crate) const LOGVAR_MAX: f64 = 8.0;

/// Which parameter blocks are trainable leaves on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// Encoder, z-map, CDL and decoder; the classifier is frozen.
    Model,
    /// Classifier only.
    Classifier,
    /// Nothing (pure evaluation).
    None,
}

/// Factor labels for the first `u.nrows()` rows of `Batch::x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBlock {
    /// Standardized ground-truth factors.
    pub u: Matrix,
}

/// A batch of samples, their partners and the reparameterization noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x1: Matrix,
    pub x2: Matrix,
    pub noise1: Matrix,
    pub noise2: Matrix,
    pub labels: Option<LabelBlock>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x1.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.nrows() == 0
    }

    fn labeled_rows(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.u.nrows())
    }
}

/// Raw (unweighted) loss components of one evaluation plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vae: f64,
    pub cause: f64,
    pub effect: f64,
    /// Classifier objective; trained separately and not part of `total`.
    pub classifier: f64,
    pub align: f64,
    pub acyc: f64,
    pub label_fit: f64,
    pub label_kl: f64,
    pub total: f64,
    /// Acyclicity weight in force when this was computed.
    pub h_weight: f64,
}

impl LossBreakdown {
    /// `vae + α·cause + β·effect + γ·align + λ_h·acyc + label_fit + label_kl`.
    pub fn recompose(&self, cfg: &TrainConfig) -> f64 {
        self.vae
            + cfg.alpha * self.cause
            + cfg.beta * self.effect
            + cfg.gamma * self.align
            + self.h_weight * self.acyc
            + self.label_fit
            + self.label_kl
    }
}

/// Columns of `A` whose incoming L2 weight is below `tau` are roots, i.e.
/// cause factors.
pub fn cause_mask(a: &WeightedDigraph, tau: f64) -> Vec<bool> {
    a.in_weight_norms().iter().map(|&n| n < tau).collect()
}

fn mask_from_matrix(a: &Matrix, tau: f64) -> Vec<bool> {
    a.column_iter().map(|c| c.norm() < tau).collect()
}

fn check_pair(z1: &Matrix, z2: &Matrix, mask: &[bool]) -> Result<()> {
    if z1.shape() != z2.shape() {
        return Err(invalid("paired codes differ in shape"));
    }
    if mask.len() != z1.ncols() {
        return Err(invalid("mask length differs from code width"));
    }
    Ok(())
}

fn swap_where(z1: &Matrix, z2: &Matrix, mask: &[bool], want: bool) -> (Matrix, Matrix) {
    let mut a = z1.clone();
    let mut b = z2.clone();
    for (c, &m) in mask.iter().enumerate() {
        if m == want {
            a.set_column(c, &z2.column(c));
            b.set_column(c, &z1.column(c));
        }
    }
    (a, b)
}

/// Exchanges the cause coordinates (`mask` true) of two code batches.
pub fn do_cause(z1: &Matrix, z2: &Matrix, mask: &[bool]) -> Result<(Matrix, Matrix)> {
    check_pair(z1, z2, mask)?;
    Ok(swap_where(z1, z2, mask, true))
}

/// Exchanges the effect coordinates (`mask` false) of two post-CDL batches.
pub fn do_effect(z1_hat: &Matrix, z2_hat: &Matrix, mask: &[bool]) -> Result<(Matrix, Matrix)> {
    check_pair(z1_hat, z2_hat, mask)?;
    Ok(swap_where(z1_hat, z2_hat, mask, false))
}

pub fn reparameterize(mean: &Matrix, logvar: &Matrix, noise: &Matrix) -> Result<Matrix> {
    if mean.shape() != logvar.shape() || mean.shape() != noise.shape() {
        return Err(invalid("mean, logvar and noise shapes differ"));
    }
    Ok(Matrix::from_fn(mean.nrows(), mean.ncols(), |r, c| {
        mean[(r, c)] + (0.5 * logvar[(r, c)]).exp() * noise[(r, c)]
    }))
}

/// Parameter blocks loaded onto a tape.
struct Net<'p> {
    params: &'p ModelParams,
    vars: BTreeMap<String, Var>,
    a: Var,
}

struct Latents {
    mean: Var,
    logvar: Var,
    z: Var,
    eps_u: Option<Var>,
}

impl<'p> Net<'p> {
    fn load(t: &mut Tape, params: &'p ModelParams, group: Group) -> Self {
        let mut vars = BTreeMap::new();
        for (name, m) in &params.blocks {
            let cls = ModelParams::is_classifier_block(name);
            let trainable = match group {
                Group::Model => !cls,
                Group::Classifier => cls,
                Group::None => false,
            };
            let v = if trainable {
                t.param(m.clone())
            } else {
                t.constant(m.clone())
            };
            vars.insert(name.clone(), v);
        }
        let raw = vars["cdl_a"];
        let a = t.const_mul(raw, &params.a_mask);
        Self { params, vars, a }
    }

    fn v(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter block `{name}`"))
    }

    fn k(&self) -> usize {
        self.params.dims.k
    }

    fn m_u(&self) -> usize {
        self.params.dims.m_u
    }

    fn encode(&self, t: &mut Tape, x: Var) -> (Var, Var) {
        let lat = self.params.dims.latent();
        let out = t.affine(x, self.v("enc_w"), self.v("enc_b"));
        let mean = t.cols(out, 0, lat);
        let raw = t.cols(out, lat, lat);
        let logvar = t.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        (mean, logvar)
    }

    fn z_map(&self, t: &mut Tape, eps_c: Var) -> Var {
        t.affine(eps_c, self.v("zmap_w"), self.v("zmap_b"))
    }

    fn latents(&self, t: &mut Tape, x: &Matrix, noise: &Matrix) -> Latents {
        let xv = t.constant(x.clone());
        let (mean, logvar) = self.encode(t, xv);
        let half = t.scale(logvar, 0.5);
        let sd = t.exp(half);
        let nv = t.constant(noise.clone());
        let jitter = t.mul(sd, nv);
        let eps = t.add(mean, jitter);
        let eps_c = t.cols(eps, 0, self.k());
        let eps_u = (self.m_u() > 0).then(|| t.cols(eps, self.k(), self.m_u()));
        let z = self.z_map(t, eps_c);
        Latents {
            mean,
            logvar,
            z,
            eps_u,
        }
    }

    fn cdl(&self, t: &mut Tape, z: Var, roots: &[bool]) -> Var {
        match self.params.config.cdl_mode {
            CdlMode::Linear => {
                let lin = t.matmul(z, self.a);
                t.mask_mix(lin, z, roots)
            }
            CdlMode::Gae => {
                let cols: Vec<Var> = (0..self.k())
                    .map(|i| {
                        if roots[i] {
                            t.cols(z, i, 1)
                        } else {
                            let a_col = t.cols(self.a, i, 1);
                            let a_row = t.transpose(a_col);
                            let gated = t.mul_row(z, a_row);
                            let pre = t.matmul(gated, self.v(&format!("cdl_w1_{i}")));
                            let hidden = t.tanh(pre);
                            t.matmul(hidden, self.v(&format!("cdl_w2_{i}")))
                        }
                    })
                    .collect();
                t.hstack(&cols)
            }
        }
    }

    fn decode(&self, t: &mut Tape, z_hat: Var, eps_u: Option<Var>) -> Var {
        let input = match eps_u {
            Some(u) => t.hstack(&[z_hat, u]),
            None => z_hat,
        };
        if self.params.config.decoder_hidden == 0 {
            t.affine(input, self.v("dec_w"), self.v("dec_b"))
        } else {
            let h = t.affine(input, self.v("dec_w1"), self.v("dec_b1"));
            let h = t.tanh(h);
            t.affine(h, self.v("dec_w2"), self.v("dec_b2"))
        }
    }

    fn classify(&self, t: &mut Tape, x: Var) -> Var {
        let h = t.affine(x, self.v("cls_w1"), self.v("cls_b1"));
        let h = t.tanh(h);
        t.affine(h, self.v("cls_w2"), self.v("cls_b2"))
    }

    fn bce(&self, t: &mut Tape, x: Var, target: f64) -> Var {
        let logits = self.classify(t, x);
        t.bce_logits(logits, target)
    }

    fn bce_pair(&self, t: &mut Tape, a: Var, b: Var, target: f64) -> Var {
        let la = self.bce(t, a, target);
        let lb = self.bce(t, b, target);
        let s = t.add(la, lb);
        t.scale(s, 0.5)
    }
}

/// Per-sample squared error summed over coordinates, averaged over rows.
fn sq_err(t: &mut Tape, a: Var, b: Var) -> Var {
    let n = t.value(a).nrows().max(1) as f64;
    let d = t.sub(a, b);
    let s = t.sum_sq(d);
    t.scale(s, 1.0 / n)
}

/// `½ Σ (exp(lv) + μ² - 1 - lv)` per row, averaged over rows; `center`
/// shifts the prior mean.
fn kl_normal(t: &mut Tape, mean: Var, logvar: Var, center: Option<Var>) -> Var {
    let n = t.value(mean).nrows().max(1) as f64;
    let e = t.exp(logvar);
    let mu = match center {
        Some(c) => t.sub(mean, c),
        None => mean,
    };
    let m2 = t.mul(mu, mu);
    let s = t.add(e, m2);
    let s = t.sub(s, logvar);
    let s = t.add_scalar(s, -1.0);
    let s = t.sum(s);
    t.scale(s, 0.5 / n)
}

/// Conditional-prior KL for the endogenous codes. `z = ε_c W + b` pushes
/// the diagonal posterior of `ε_c` forward to `N(μ W + b, Wᵀ diag(σ²) W)`;
/// each coordinate's exact marginal `N(·, Σ_j W_ji² σ_j²)` is compared with
/// `N(u_i, 1)`. With `W = I` this is the plain diagonal KL on `ε_c`.
fn label_kl(t: &mut Tape, net: &Net, mean_c: Var, logvar_c: Var, u: Var) -> Var {
    let n = t.value(mean_c).nrows().max(1) as f64;
    let w = net.v("zmap_w");
    let mz = t.affine(mean_c, w, net.v("zmap_b"));
    let w2 = t.mul(w, w);
    let var_c = t.exp(logvar_c);
    let var_z = t.matmul(var_c, w2);
    let log_var_z = t.ln(var_z);
    let d = t.sub(mz, u);
    let d2 = t.mul(d, d);
    let s = t.add(var_z, d2);
    let s = t.sub(s, log_var_z);
    let s = t.add_scalar(s, -1.0);
    let s = t.sum(s);
    t.scale(s, 0.5 / n)
}

fn zero(t: &mut Tape) -> Var {
    t.constant(Matrix::zeros(1, 1))
}

struct Built {
    vars: BTreeMap<String, Var>,
    total: Var,
    classifier: Var,
    parts: LossBreakdown,
}

fn check_batch(params: &ModelParams, batch: &Batch) -> Result<()> {
    let d = params.dims;
    let b = batch.len();
    if b == 0 {
        return Err(invalid("empty batch"));
    }
    if batch.x1.shape() != (b, d.m) || batch.x2.shape() != (b, d.m) {
        return Err(invalid(format!("batch observations must be {b}x{}", d.m)));
    }
    if batch.noise1.shape() != (b, d.latent()) || batch.noise2.shape() != (b, d.latent()) {
        return Err(invalid(format!("noise must be {b}x{}", d.latent())));
    }
    if let Some(l) = &batch.labels {
        if l.u.ncols() != d.k || l.u.nrows() > b {
            return Err(invalid("label block does not fit the batch"));
        }
    }
    if batch
        .x1
        .iter()
        .chain(batch.x2.iter())
        .any(|v| !v.is_finite())
    {
        return Err(invalid("non-finite observations"));
    }
    Ok(())
}

fn build(
    t: &mut Tape,
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    h_weight: f64,
    semi: bool,
    group: Group,
) -> Result<Built> {
    check_batch(params, batch)?;
    let net = Net::load(t, params, group);
    let roots = mask_from_matrix(t.value(net.a), cfg.tau);
    let effects: Vec<bool> = roots.iter().map(|r| !r).collect();
    let x1 = t.constant(batch.x1.clone());
    let x2 = t.constant(batch.x2.clone());

    let l1 = net.latents(t, &batch.x1, &batch.noise1);
    let l2 = net.latents(t, &batch.x2, &batch.noise2);
    let zh1 = net.cdl(t, l1.z, &roots);
    let zh2 = net.cdl(t, l2.z, &roots);
    let xh1 = net.decode(t, zh1, l1.eps_u);
    let xh2 = net.decode(t, zh2, l2.eps_u);

    let mut parts = LossBreakdown {
        h_weight,
        ..LossBreakdown::default()
    };

    // VAE: reconstruction + KL, averaged over the two pair members.
    let r1 = sq_err(t, x1, xh1);
    let k1 = kl_normal(t, l1.mean, l1.logvar, None);
    let r2 = sq_err(t, x2, xh2);
    let k2 = kl_normal(t, l2.mean, l2.logvar, None);
    let v1 = t.add(r1, k1);
    let v2 = t.add(r2, k2);
    let v = t.add(v1, v2);
    let vae = t.scale(v, 0.5);
    parts.vae = t.scalar_value(vae);

    let a1 = sq_err(t, zh1, l1.z);
    let a2 = sq_err(t, zh2, l2.z);
    let a = t.add(a1, a2);
    let align = t.scale(a, 0.5);
    parts.align = t.scalar_value(align);

    let acyc = t.acyclicity(net.a)?;
    parts.acyc = t.scalar_value(acyc);

    let real = net.bce_pair(t, x1, x2, 1.0);
    let recon = net.bce_pair(t, xh1, xh2, 1.0);
    let mut cla = t.add(real, recon);

    let cause = if cfg.uses_do_cause() {
        let z1p = t.mask_mix(l1.z, l2.z, &roots);
        let z2p = t.mask_mix(l2.z, l1.z, &roots);
        let zh1p = net.cdl(t, z1p, &roots);
        let zh2p = net.cdl(t, z2p, &roots);
        let x1p = net.decode(t, zh1p, l2.eps_u);
        let x2p = net.decode(t, zh2p, l1.eps_u);
        let c1 = sq_err(t, x1p, x2);
        let c2 = sq_err(t, x2p, x1);
        let term = net.bce_pair(t, x1p, x2p, 1.0);
        cla = t.add(cla, term);
        t.add(c1, c2)
    } else {
        zero(t)
    };
    parts.cause = t.scalar_value(cause);

    let effect = if cfg.uses_do_effect() {
        let zh1pp = t.mask_mix(zh1, zh2, &effects);
        let zh2pp = t.mask_mix(zh2, zh1, &effects);
        let x1pp = net.decode(t, zh1pp, l1.eps_u);
        let x2pp = net.decode(t, zh2pp, l2.eps_u);
        let target = f64::from(cfg.effect_target_label);
        let e1 = net.bce(t, x1pp, target);
        let e2 = net.bce(t, x2pp, target);
        let term = net.bce_pair(t, x1pp, x2pp, 0.0);
        cla = t.add(cla, term);
        t.add(e1, e2)
    } else {
        zero(t)
    };
    parts.effect = t.scalar_value(effect);
    parts.classifier = t.scalar_value(cla);

    let wc = t.scale(cause, cfg.alpha);
    let we = t.scale(effect, cfg.beta);
    let wa = t.scale(align, cfg.gamma);
    let wh = t.scale(acyc, h_weight);
    let mut total = t.add(vae, wc);
    total = t.add(total, we);
    total = t.add(total, wa);
    total = t.add(total, wh);

    if semi && cfg.label_fraction > 0.0 {
        let n_lab = batch.labeled_rows();
        if n_lab == 0 {
            return Err(Error::Config(
                "label_fraction > 0 but the batch has no labeled rows".into(),
            ));
        }
        let u = t.constant(batch.labels.as_ref().expect("labeled rows").u.clone());
        let fu = net.cdl(t, u, &roots);
        let fit = sq_err(t, u, fu);
        let k = net.k();
        let mc = t.cols(l1.mean, 0, k);
        let mc = t.rows(mc, 0, n_lab);
        let lc = t.cols(l1.logvar, 0, k);
        let lc = t.rows(lc, 0, n_lab);
        let kl = label_kl(t, &net, mc, lc, u);
        parts.label_fit = t.scalar_value(fit);
        parts.label_kl = t.scalar_value(kl);
        total = t.add(total, fit);
        total = t.add(total, kl);
    }
    parts.total = t.scalar_value(total);
    t.check_finite()?;
    Ok(Built {
        vars: net.vars,
        total,
        classifier: cla,
        parts,
    })
}

/// Observation-space encoder outputs `(mean, logvar)`, logvar clamped to [-8, 8].
pub fn encode(x: &Matrix, params: &ModelParams) -> Result<(Matrix, Matrix)> {
    if x.ncols() != params.dims.m {
        return Err(invalid(format!(
            "observations have {} columns, model expects {}",
            x.ncols(),
            params.dims.m
        )));
    }
    let mut t = Tape::new();
    let net = Net::load(&mut t, params, Group::None);
    let xv = t.constant(x.clone());
    let (mean, logvar) = net.encode(&mut t, xv);
    t.check_finite()?;
    Ok((t.value(mean).clone(), t.value(logvar).clone()))
}

/// Deterministic endogenous codes `z = z_map(E[ε_c])`.
pub fn encode_latents(x: &Matrix, params: &ModelParams) -> Result<Matrix> {
    let (mean, _) = encode(x, params)?;
    let eps_c = mean.columns(0, params.dims.k).into_owned();
    let mut t = Tape::new();
    let net = Net::load(&mut t, params, Group::None);
    let e = t.constant(eps_c);
    let z = net.z_map(&mut t, e);
    Ok(t.value(z).clone())
}

/// Runs the causal discovery layer with roots decided by `tau`.
pub fn cdl_forward(z: &Matrix, params: &ModelParams, tau: f64) -> Result<Matrix> {
    if z.ncols() != params.dims.k {
        return Err(invalid(format!(
            "codes have {} columns, model has {} factors",
            z.ncols(),
            params.dims.k
        )));
    }
    let mut t = Tape::new();
    let net = Net::load(&mut t, params, Group::None);
    let roots = mask_from_matrix(t.value(net.a), tau);
    let zv = t.constant(z.clone());
    let out = net.cdl(&mut t, zv, &roots);
    t.check_finite()?;
    Ok(t.value(out).clone())
}

fn numeric<F: FnOnce(&mut Tape) -> Var>(f: F) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t);
    t.scalar_value(v)
}

/// Reconstruction error plus KL to the standard normal, per row averaged.
pub fn loss_vae(x: &Matrix, x_hat: &Matrix, mean: &Matrix, logvar: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() || mean.shape() != logvar.shape() || x.nrows() != mean.nrows() {
        return Err(invalid("shape mismatch in loss_vae"));
    }
    Ok(numeric(|t| {
        let a = t.constant(x.clone());
        let b = t.constant(x_hat.clone());
        let m = t.constant(mean.clone());
        let l = t.constant(logvar.clone());
        let r = sq_err(t, a, b);
        let k = kl_normal(t, m, l, None);
        t.add(r, k)
    }))
}

/// `d(x̂1', x2) + d(x̂2', x1)` with the reconstruction metric.
pub fn loss_cause(
    x1_prime_hat: &Matrix,
    x2_prime_hat: &Matrix,
    x1: &Matrix,
    x2: &Matrix,
) -> Result<f64> {
    if x1_prime_hat.shape() != x2.shape() || x2_prime_hat.shape() != x1.shape() {
        return Err(invalid("shape mismatch in loss_cause"));
    }
    Ok(numeric(|t| {
        let a = t.constant(x1_prime_hat.clone());
        let b = t.constant(x2.clone());
        let c = t.constant(x2_prime_hat.clone());
        let d = t.constant(x1.clone());
        let l1 = sq_err(t, a, b);
        let l2 = sq_err(t, c, d);
        t.add(l1, l2)
    }))
}

/// Classifier objective: real, reconstructed and do-cause samples toward 1,
/// do-effect counterfactuals toward 0; each term averaged over its rows.
pub fn loss_classifier(
    params: &ModelParams,
    x: &Matrix,
    x_hat: &Matrix,
    x_prime_hat: &Matrix,
    x_pp_hat: &Matrix,
) -> Result<f64> {
    let m = params.dims.m;
    if [x, x_hat, x_prime_hat, x_pp_hat]
        .iter()
        .any(|a| a.ncols() != m)
    {
        return Err(invalid("classifier inputs have the wrong width"));
    }
    let mut t = Tape::new();
    let net = Net::load(&mut t, params, Group::None);
    let mut acc = zero(&mut t);
    for (data, target) in [(x, 1.0), (x_hat, 1.0), (x_prime_hat, 1.0), (x_pp_hat, 0.0)] {
        let v = t.constant(data.clone());
        let l = net.bce(&mut t, v, target);
        acc = t.add(acc, l);
    }
    Ok(t.scalar_value(acc))
}

/// Counterfactual reconstructions pushed toward `target_label`.
pub fn loss_effect(
    params: &ModelParams,
    x1_pp_hat: &Matrix,
    x2_pp_hat: &Matrix,
    target_label: u8,
) -> Result<f64> {
    if target_label > 1 {
        return Err(invalid("target label must be 0 or 1"));
    }
    let mut t = Tape::new();
    let net = Net::load(&mut t, params, Group::None);
    let a = t.constant(x1_pp_hat.clone());
    let b = t.constant(x2_pp_hat.clone());
    let la = net.bce(&mut t, a, f64::from(target_label));
    let lb = net.bce(&mut t, b, f64::from(target_label));
    let s = t.add(la, lb);
    Ok(t.scalar_value(s))
}

/// All no-label terms; any labels on the batch are ignored.
pub fn loss_no_label(
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    h_weight: f64,
) -> Result<LossBreakdown> {
    let mut t = Tape::new();
    Ok(build(&mut t, params, batch, cfg, h_weight, false, Group::None)?.parts)
}

/// No-label terms plus the label fixed-point and conditional-prior terms.
pub fn loss_semi(
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    h_weight: f64,
) -> Result<LossBreakdown> {
    let mut t = Tape::new();
    Ok(build(&mut t, params, batch, cfg, h_weight, true, Group::None)?.parts)
}

/// Loss breakdown and the gradient of the relevant objective for `group`:
/// the model total (semi-supervised when the config asks for labels) or
/// the classifier loss. Blocks outside the group get exact zeros.
pub fn grad(
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    h_weight: f64,
    group: Group,
) -> Result<(LossBreakdown, BTreeMap<String, Matrix>)> {
    let mut t = Tape::new();
    let built = build(&mut t, params, batch, cfg, h_weight, true, group)?;
    let target = match group {
        Group::Classifier => built.classifier,
        _ => built.total,
    };
    let g = t.backward(target)?;
    let out = built
        .vars
        .iter()
        .map(|(name, &var)| {
            let value = params.block(name);
            let gm = g
                .get(var)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(value.nrows(), value.ncols()));
            (name.clone(), gm)
        })
        .collect();
    Ok((built.parts, out))
}
