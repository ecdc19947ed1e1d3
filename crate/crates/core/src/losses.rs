//! Loss terms, weighting and schedules.
//!
//! Cycle variants train with a least-squares adversarial objective plus
//! cycle-reconstruction and identity terms. The conditional multi-domain
//! model trains with Wasserstein-style critic terms, a gradient penalty on
//! interpolated inputs, a domain-classification term and a conditional
//! identity term. Three optional additions: an MS-SSIM cycle term, a
//! structure term comparing original and transformed images directly, and an
//! extra identity term that decays linearly to zero over the first epochs.
//!
//! Losses that feed training are built on [`Var`] tensors so gradients flow;
//! the scalar wrappers near the bottom serve logging and tests.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_vars, Var};
use crate::error::{Error, Result};
use crate::metrics::{SsimConfig, MS_SSIM_WEIGHTS};
use crate::scalar::Scalar;

/// λ ledger. Cycle variants use `adv`, `cyc`, `id`; the conditional model
/// uses `cyc`, `gp`, `id_conditional`, `domain`. Every additional loss is
/// weighted with `extra`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub cyc: f64,
    pub id: f64,
    pub gp: f64,
    pub domain: f64,
    pub id_conditional: f64,
    pub extra: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // id = 10 here; the classic cycle-consistency setup used 5.
        Self { adv: 1.0, cyc: 10.0, id: 10.0, gp: 10.0, domain: 1.0, id_conditional: 10.0, extra: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("adv", self.adv),
            ("cyc", self.cyc),
            ("id", self.id),
            ("gp", self.gp),
            ("domain", self.domain),
            ("id_conditional", self.id_conditional),
            ("extra", self.extra),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Which additional losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraMode {
    None,
    MsSsim,
    Structure,
    /// MS-SSIM plus the decaying additional identity term. The structure
    /// loss is never part of a combination.
    Combined,
}

impl std::fmt::Display for ExtraMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExtraMode::None => "none",
            ExtraMode::MsSsim => "ms_ssim",
            ExtraMode::Structure => "structure",
            ExtraMode::Combined => "combined",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ExtraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ExtraMode::None),
            "ms_ssim" => Ok(ExtraMode::MsSsim),
            "structure" => Ok(ExtraMode::Structure),
            "combined" => Ok(ExtraMode::Combined),
            other => Err(Error::Config(format!("unknown extra loss mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtraLossConfig {
    pub mode: ExtraMode,
    /// Epochs over which the additional identity weight decays to zero.
    pub decay_epochs: usize,
}

impl Default for ExtraLossConfig {
    fn default() -> Self {
        Self { mode: ExtraMode::None, decay_epochs: 20 }
    }
}

/// Weight of the additional identity term:
/// `lambda_extra * max(0, 1 - epoch / decay_epochs)`.
pub fn additional_identity_weight(epoch: usize, decay_epochs: usize, lambda_extra: f64) -> f64 {
    if decay_epochs == 0 {
        return 0.0;
    }
    lambda_extra * (1.0 - epoch as f64 / decay_epochs as f64).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvSide {
    Generator,
    Discriminator,
}

/// Least-squares discriminator objective:
/// `mean((D(real) - 1)^2 + D(fake)^2) / 2`.
pub fn lsgan_d_loss<F: Scalar>(real_map: &Var<F>, fake_map: &Var<F>) -> Var<F> {
    let real_term = real_map.add_scalar(-1.0).square().mean_all();
    let fake_term = fake_map.square().mean_all();
    real_term.add(&fake_term).mul_scalar(0.5)
}

/// Least-squares generator objective: `mean((D(fake) - 1)^2)`.
pub fn lsgan_g_loss<F: Scalar>(fake_map: &Var<F>) -> Var<F> {
    fake_map.add_scalar(-1.0).square().mean_all()
}

/// Scalar adversarial objective over plain patch maps.
pub fn adversarial_loss<F: Scalar>(
    patch_map_real: &ArrayD<F>,
    patch_map_fake: &ArrayD<F>,
    side: AdvSide,
) -> F {
    let real = Var::constant(patch_map_real.clone());
    let fake = Var::constant(patch_map_fake.clone());
    match side {
        AdvSide::Discriminator => lsgan_d_loss(&real, &fake).scalar_value(),
        AdvSide::Generator => lsgan_g_loss(&fake).scalar_value(),
    }
}

/// Wasserstein critic objective: `mean(D(fake)) - mean(D(real))`.
pub fn wasserstein_d_loss<F: Scalar>(real_map: &Var<F>, fake_map: &Var<F>) -> Var<F> {
    fake_map.mean_all().sub(&real_map.mean_all())
}

/// Wasserstein generator objective: `-mean(D(fake))`.
pub fn wasserstein_g_loss<F: Scalar>(fake_map: &Var<F>) -> Var<F> {
    fake_map.mean_all().neg()
}

/// Mean absolute error.
pub fn mae<F: Scalar>(x: &Var<F>, y: &Var<F>) -> Var<F> {
    x.sub(y).abs().mean_all()
}

/// Cycle-reconstruction loss: MAE between an image and its round trip.
pub fn cycle_loss<F: Scalar>(x: &Var<F>, x_cycled: &Var<F>) -> Result<Var<F>> {
    if x.shape() != x_cycled.shape() {
        return Err(Error::Dimension(format!(
            "cycle loss shapes differ: {:?} vs {:?}",
            x.shape(),
            x_cycled.shape()
        )));
    }
    Ok(mae(x, x_cycled))
}

/// Identity loss: a target-domain image should map to itself.
pub fn identity_loss<F: Scalar>(y: &Var<F>, y_translated: &Var<F>) -> Result<Var<F>> {
    cycle_loss(y, y_translated)
}

/// Conditional identity loss: translating an image to its own domain should
/// be the identity. The requested label must equal the source domain.
pub fn conditional_identity_loss<F: Scalar>(
    x: &Var<F>,
    x_same_domain: &Var<F>,
    requested_label: usize,
    source_domain: usize,
) -> Result<Var<F>> {
    if requested_label != source_domain {
        return Err(Error::Contract(format!(
            "conditional identity requires the source label ({source_domain}), got {requested_label}"
        )));
    }
    cycle_loss(x, x_same_domain)
}

/// Cross-entropy of domain logits (`[K]` or `[1, K]`) against the target
/// domain index.
pub fn domain_classification_loss<F: Scalar>(logits: &Var<F>, target: usize) -> Result<Var<F>> {
    let shape = logits.shape();
    let flat = match shape.len() {
        1 => logits.clone(),
        2 if shape[0] == 1 => logits.reshape(&[shape[1]]),
        _ => {
            return Err(Error::Dimension(format!(
                "domain logits must be [K] or [1, K], got {shape:?}"
            )))
        }
    };
    let k = flat.shape()[0];
    if target >= k {
        return Err(Error::Contract(format!("target domain {target} out of range for {k} logits")));
    }
    // log-sum-exp with a constant max shift for stability; the shift value is
    // fixed during both passes so gradients stay exact.
    let max = flat.value().iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let shifted = flat.add_scalar(-max);
    let lse = shifted.exp().sum_all().ln().add_scalar(max);
    let picked = flat.narrow(0, target, 1).sum_all();
    Ok(lse.sub(&picked))
}

/// Gradient penalty on an interpolate between real and fake:
/// `(||∇_x mean(D_patch(x))|| - 1)^2`, with the mix factor drawn from `rng`.
///
/// Differentiating this loss backpropagates through the inner gradient, which
/// is why the engine records backward passes as graph ops.
pub fn gradient_penalty<F: Scalar>(
    d_patch: impl Fn(&Var<F>) -> Var<F>,
    real: &Var<F>,
    fake: &Var<F>,
    rng: &mut ChaCha8Rng,
) -> Result<Var<F>> {
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "gradient penalty shapes differ: {:?} vs {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let u = rng.gen::<f64>();
    let mixed = real.detach().mul_scalar(u).add(&fake.detach().mul_scalar(1.0 - u));
    // Fresh leaf so the input gradient is well-defined.
    let x_hat = Var::param(mixed.value());
    let critic_mean = d_patch(&x_hat).mean_all();
    let grads = grad_vars(&critic_mean, &[&x_hat], true)?;
    let norm = grads[0].square().sum_all().add_scalar(1e-12).sqrt();
    Ok(norm.add_scalar(-1.0).square())
}

/// Per-window Gaussian statistics of a single-channel pair, used by the
/// differentiable SSIM-family losses. Inputs are `[N, 1, H, W]`.
struct WindowStatsT<F: Scalar> {
    mu_x: Var<F>,
    mu_y: Var<F>,
    var_x: Var<F>,
    var_y: Var<F>,
    cov: Var<F>,
}

fn gaussian_kernels<F: Scalar>(cfg: &SsimConfig) -> (Var<F>, Var<F>) {
    let taps = cfg.window_taps();
    let k = taps.len();
    let horiz = ArrayD::from_shape_vec(
        ndarray::IxDyn(&[1, 1, 1, k]),
        taps.iter().map(|&t| F::of_f64(t)).collect(),
    )
    .unwrap();
    let vert = ArrayD::from_shape_vec(
        ndarray::IxDyn(&[1, 1, k, 1]),
        taps.iter().map(|&t| F::of_f64(t)).collect(),
    )
    .unwrap();
    (Var::constant(horiz), Var::constant(vert))
}

fn gaussian_filter_valid<F: Scalar>(x: &Var<F>, kernels: &(Var<F>, Var<F>)) -> Var<F> {
    x.conv2d(&kernels.0, 1, 0).conv2d(&kernels.1, 1, 0)
}

fn window_stats_t<F: Scalar>(x: &Var<F>, y: &Var<F>, kernels: &(Var<F>, Var<F>)) -> WindowStatsT<F> {
    let mu_x = gaussian_filter_valid(x, kernels);
    let mu_y = gaussian_filter_valid(y, kernels);
    let xx = gaussian_filter_valid(&x.mul(x), kernels);
    let yy = gaussian_filter_valid(&y.mul(y), kernels);
    let xy = gaussian_filter_valid(&x.mul(y), kernels);
    let var_x = xx.sub(&mu_x.mul(&mu_x)).relu();
    let var_y = yy.sub(&mu_y.mul(&mu_y)).relu();
    let cov = xy.sub(&mu_x.mul(&mu_y));
    WindowStatsT { mu_x, mu_y, var_x, var_y, cov }
}

fn check_loss_pair<F: Scalar>(x: &Var<F>, y: &Var<F>, window: usize) -> Result<()> {
    let (sx, sy) = (x.shape(), y.shape());
    if sx != sy {
        return Err(Error::Dimension(format!("loss input shapes differ: {sx:?} vs {sy:?}")));
    }
    if sx.len() != 4 {
        return Err(Error::Dimension(format!("loss inputs must be NCHW, got {sx:?}")));
    }
    if sx[2] < window || sx[3] < window {
        return Err(Error::Dimension(format!(
            "spatial size {}x{} smaller than window {window}",
            sx[2], sx[3]
        )));
    }
    Ok(())
}

/// Symmetric-range `[N,C,H,W]` tensor mapped to unit range.
fn to_unit<F: Scalar>(x: &Var<F>) -> Var<F> {
    x.add_scalar(1.0).mul_scalar(0.5)
}

/// Differentiable structure similarity: mean of
/// `(σ_xy + C3) / (σ_x σ_y + C3)` over Gaussian windows and channels.
/// Inputs are symmetric-range images.
pub fn structure_similarity_t<F: Scalar>(
    x: &Var<F>,
    y: &Var<F>,
    cfg: &SsimConfig,
) -> Result<Var<F>> {
    cfg.validate()?;
    check_loss_pair(x, y, cfg.window)?;
    let shape = x.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let xu = to_unit(x).reshape(&[n * c, 1, h, w]);
    let yu = to_unit(y).reshape(&[n * c, 1, h, w]);
    let kernels = gaussian_kernels(cfg);
    let stats = window_stats_t(&xu, &yu, &kernels);
    let c3 = cfg.c3();
    let numer = stats.cov.add_scalar(c3);
    let denom = stats
        .var_x
        .mul(&stats.var_y)
        .add_scalar(1e-24)
        .sqrt()
        .add_scalar(c3);
    Ok(numer.div(&denom).mean_all())
}

/// Structure loss: `1 - structure_similarity`.
pub fn structure_loss<F: Scalar>(x: &Var<F>, x_transformed: &Var<F>, cfg: &SsimConfig) -> Result<Var<F>> {
    Ok(structure_similarity_t(x, x_transformed, cfg)?.neg().add_scalar(1.0))
}

/// Differentiable MS-SSIM over `scales` scales (prefix weights renormalized
/// below five scales, matching the metric). Inputs are symmetric-range
/// images; aggregation is per channel, then averaged.
pub fn ms_ssim_t<F: Scalar>(
    x: &Var<F>,
    y: &Var<F>,
    cfg: &SsimConfig,
    scales: usize,
) -> Result<Var<F>> {
    cfg.validate()?;
    check_loss_pair(x, y, cfg.window)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::Config(format!("MS-SSIM scales must be 1..=5, got {scales}")));
    }
    let shape = x.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h.min(w) < (1 << (scales - 1)) * cfg.window {
        return Err(Error::Dimension(format!(
            "spatial side {} too small for {scales} scales with window {}",
            h.min(w),
            cfg.window
        )));
    }
    let weights: Vec<f64> = if scales == MS_SSIM_WEIGHTS.len() {
        MS_SSIM_WEIGHTS.to_vec()
    } else {
        let sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
        MS_SSIM_WEIGHTS[..scales].iter().map(|v| v / sum).collect()
    };
    let kernels = gaussian_kernels(cfg);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let pool = Var::constant(ArrayD::from_elem(ndarray::IxDyn(&[1, 1, 2, 2]), F::of_f64(0.25)));

    let mut channel_scores: Vec<Var<F>> = Vec::with_capacity(c);
    for ch in 0..c {
        let mut cx = to_unit(&x.narrow(1, ch, 1)).reshape(&[n, 1, h, w]);
        let mut cy = to_unit(&y.narrow(1, ch, 1)).reshape(&[n, 1, h, w]);
        let mut score: Option<Var<F>> = None;
        for (scale, &weight) in weights.iter().enumerate() {
            let stats = window_stats_t(&cx, &cy, &kernels);
            let cs_map = stats
                .cov
                .mul_scalar(2.0)
                .add_scalar(c2)
                .div(&stats.var_x.add(&stats.var_y).add_scalar(c2));
            let cs = cs_map.mean_all().relu().add_scalar(1e-12);
            let term = if scale + 1 == weights.len() {
                let lum_map = stats
                    .mu_x
                    .mul(&stats.mu_y)
                    .mul_scalar(2.0)
                    .add_scalar(c1)
                    .div(&stats.mu_x.square().add(&stats.mu_y.square()).add_scalar(c1));
                let lum = lum_map.mean_all().relu().add_scalar(1e-12);
                lum.mul(&cs).pow_scalar(weight)
            } else {
                cs.pow_scalar(weight)
            };
            score = Some(match score {
                Some(acc) => acc.mul(&term),
                None => term,
            });
            if scale + 1 != weights.len() {
                cx = cx.conv2d(&pool, 2, 0);
                cy = cy.conv2d(&pool, 2, 0);
            }
        }
        channel_scores.push(score.expect("at least one scale"));
    }
    let mut total = channel_scores[0].clone();
    for s in &channel_scores[1..] {
        total = total.add(s);
    }
    Ok(total.mul_scalar(1.0 / c as f64))
}

/// MS-SSIM loss: `1 - ms_ssim`.
pub fn ms_ssim_loss<F: Scalar>(
    x: &Var<F>,
    x_cycled: &Var<F>,
    cfg: &SsimConfig,
    scales: usize,
) -> Result<Var<F>> {
    Ok(ms_ssim_t(x, x_cycled, cfg, scales)?.neg().add_scalar(1.0))
}

/// Raw (unweighted) generator-side loss values for one step.
#[derive(Debug, Clone, Default)]
pub struct GeneratorLossTerms {
    pub adv: f64,
    pub cyc: f64,
    pub id: f64,
    /// Domain-classification term (conditional model only).
    pub domain: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub structure: Option<f64>,
    /// Identity-style term receiving the decaying additional weight.
    pub additional_identity: Option<f64>,
}

/// Weighted sum of generator loss terms under the configured extra mode.
///
/// `conditional` selects the conditional-identity weight instead of the
/// cycle-variant identity weight.
pub fn total_generator_loss(
    terms: &GeneratorLossTerms,
    weights: &LossWeights,
    extra: &ExtraLossConfig,
    epoch: usize,
    conditional: bool,
) -> Result<f64> {
    weights.validate()?;
    let check_absent = |name: &str, v: Option<f64>| -> Result<()> {
        if v.is_some() {
            return Err(Error::Config(format!(
                "{name} term supplied but extra mode is {}",
                extra.mode
            )));
        }
        Ok(())
    };
    match extra.mode {
        ExtraMode::None => {
            check_absent("ms_ssim", terms.ms_ssim)?;
            check_absent("structure", terms.structure)?;
            check_absent("additional identity", terms.additional_identity)?;
        }
        ExtraMode::MsSsim => {
            check_absent("structure", terms.structure)?;
            check_absent("additional identity", terms.additional_identity)?;
        }
        ExtraMode::Structure => {
            // The structure loss is never combined with other additions.
            check_absent("ms_ssim", terms.ms_ssim)?;
            check_absent("additional identity", terms.additional_identity)?;
        }
        ExtraMode::Combined => {
            check_absent("structure", terms.structure)?;
        }
    }

    let id_weight = if conditional { weights.id_conditional } else { weights.id };
    let mut total = weights.adv * terms.adv + weights.cyc * terms.cyc + id_weight * terms.id;
    if let Some(domain) = terms.domain {
        total += weights.domain * domain;
    }
    match extra.mode {
        ExtraMode::None => {}
        ExtraMode::MsSsim => {
            let v = terms
                .ms_ssim
                .ok_or_else(|| Error::Config("ms_ssim mode needs an ms_ssim term".into()))?;
            total += weights.extra * v;
        }
        ExtraMode::Structure => {
            let v = terms
                .structure
                .ok_or_else(|| Error::Config("structure mode needs a structure term".into()))?;
            total += weights.extra * v;
        }
        ExtraMode::Combined => {
            let ms = terms
                .ms_ssim
                .ok_or_else(|| Error::Config("combined mode needs an ms_ssim term".into()))?;
            let add_id = terms
                .additional_identity
                .ok_or_else(|| Error::Config("combined mode needs an identity-style term".into()))?;
            total += weights.extra * ms;
            total += additional_identity_weight(epoch, extra.decay_epochs, weights.extra) * add_id;
        }
    }
    Ok(total)
}
