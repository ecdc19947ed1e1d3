//! Optimization loops, schedules, checkpointing, model selection and the
//! full-resolution transform wrapper.
//!
//! One call to [`train_cycle_pair`] or [`train_fpg`] runs a single seeded
//! training run and leaves three artifacts in its run directory: a
//! `manifest.json` with per-epoch records, a `losses.csv` stream and a
//! `best.ckpt` checkpoint written whenever the validation generator loss
//! improves. The multi-seed protocol is one call per seed; selection across
//! runs happens afterwards on validation metric reports only.

pub mod buffer;

use std::io::Write;
use std::path::Path;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_arrays, no_grad, Var};
use crate::error::{Error, Result};
use crate::image::{convert_range, ImageTensor, ValueRange};
use crate::losses::{
    additional_identity_weight, conditional_identity_loss, cycle_loss, domain_classification_loss,
    gradient_penalty, identity_loss, lsgan_d_loss, lsgan_g_loss, ms_ssim_loss, structure_loss,
    wasserstein_d_loss, wasserstein_g_loss, ExtraLossConfig, ExtraMode, LossWeights,
};
use crate::metrics::{MetricReport, Split, SsimConfig};
use crate::networks::checkpoint::save_checkpoint;
use crate::networks::{
    image_to_batch, Architecture, DiscriminatorSpec, Generator, GeneratorSpec, ModelBundle,
};
use crate::nn::Adam;
use crate::pyramid::{build_pyramid, collapse_pyramid};
use crate::scalar::Scalar;
use buffer::ImagePool;

/// Training hyperparameters and model geometry for one experiment variation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub lr_initial: f64,
    /// Epochs at the initial steady rate before the linear decay to zero.
    pub lr_steady_epochs: usize,
    /// Always one; kept explicit because it is part of the protocol.
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub extra: ExtraLossConfig,
    pub image_size: usize,
    pub base_width: usize,
    pub n_resblocks: usize,
    pub unet_depth: usize,
    pub use_replay_buffer: bool,
    /// Output spread below which the mode-collapse flag fires.
    pub collapse_std_threshold: f64,
    /// Multiplier on the adversarial weight; 1.0 except for deliberately
    /// destabilized runs.
    pub adv_weight_multiplier: f64,
    pub ssim_window: usize,
}

impl TrainConfig {
    /// Full-scale profile: 256×256, 200 epochs, steady learning rate for the
    /// first 100, five seeds.
    pub fn full(architecture: Architecture) -> Self {
        let lr_initial = match architecture {
            Architecture::Fpg => 1e-4,
            _ => 5e-4,
        };
        Self {
            architecture,
            epochs: 200,
            lr_initial,
            lr_steady_epochs: 100,
            batch_size: 1,
            seeds: vec![1, 2, 3, 4, 5],
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            extra: ExtraLossConfig::default(),
            image_size: 256,
            base_width: 64,
            n_resblocks: 9,
            unet_depth: 6,
            use_replay_buffer: architecture.is_cycle_variant(),
            collapse_std_threshold: 1e-3,
            adv_weight_multiplier: 1.0,
            ssim_window: 11,
        }
    }

    /// Desk-scale profile: 64×64 images, narrower nets, 30 epochs with the
    /// schedule scaled proportionally (steady 15, zero at 30), two seeds.
    pub fn desk(architecture: Architecture) -> Self {
        Self {
            epochs: 30,
            lr_steady_epochs: 15,
            seeds: vec![1, 2],
            image_size: 64,
            base_width: 32,
            n_resblocks: 4,
            unet_depth: 4,
            ..Self::full(architecture)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config("the training protocol uses a batch size of one".into()));
        }
        if self.epochs < self.lr_steady_epochs {
            return Err(Error::Config(format!(
                "epochs {} must be >= lr_steady_epochs {}",
                self.epochs, self.lr_steady_epochs
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.lr_initial <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.adv_weight_multiplier < 0.0 {
            return Err(Error::Config("adversarial multiplier must be >= 0".into()));
        }
        self.weights.validate()?;
        self.gen_spec(2).validate()?;
        self.disc_spec(2).validate()?;
        Ok(())
    }

    pub fn gen_spec(&self, num_domains: usize) -> GeneratorSpec {
        match self.architecture {
            Architecture::Cyclegan => {
                GeneratorSpec::resnet(self.image_size, self.base_width, self.n_resblocks)
            }
            Architecture::UnetCyclegan => {
                GeneratorSpec::unet(self.image_size, self.base_width, self.unet_depth)
            }
            Architecture::Fpg => GeneratorSpec::conditional(
                self.image_size,
                self.base_width,
                self.n_resblocks,
                num_domains,
            ),
        }
    }

    pub fn disc_spec(&self, num_domains: usize) -> DiscriminatorSpec {
        match self.architecture {
            Architecture::Fpg => {
                DiscriminatorSpec::dualhead(self.image_size, self.base_width, num_domains)
            }
            _ => DiscriminatorSpec::patch(self.image_size, self.base_width),
        }
    }

    /// MS-SSIM scale count that fits the training resolution; 5 at 256²,
    /// fewer at desk scale. Recorded in the manifest.
    pub fn msssim_scales(&self) -> usize {
        let mut scales = 5usize;
        while scales > 1 && self.image_size < (1 << (scales - 1)) * self.ssim_window {
            scales -= 1;
        }
        scales
    }

    pub fn ssim_config(&self) -> SsimConfig {
        SsimConfig { window: self.ssim_window, ..SsimConfig::default() }
    }

    /// Stable FNV-1a hash of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// Steady-then-linear-decay learning rate: `lr_initial` before
/// `lr_steady_epochs`, then linear to zero at `epochs`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} out of range (schedule ends at {})",
            cfg.epochs
        )));
    }
    if epoch < cfg.lr_steady_epochs {
        return Ok(cfg.lr_initial);
    }
    let decay_span = (cfg.epochs - cfg.lr_steady_epochs) as f64;
    if decay_span == 0.0 {
        return Ok(0.0);
    }
    Ok(cfg.lr_initial * (1.0 - (epoch - cfg.lr_steady_epochs) as f64 / decay_span))
}

/// Train/validation images of one domain, unit range.
#[derive(Debug, Clone)]
pub struct DomainSet<F: Scalar> {
    pub train: Vec<ImageTensor<F>>,
    pub val: Vec<ImageTensor<F>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub generator_loss: f64,
    pub discriminator_loss: f64,
    pub val_generator_loss: f64,
    /// Output spread of the validation probe (mode-collapse detector).
    pub collapse_std: f64,
    pub collapse_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunStatus {
    Completed,
    /// Loss became non-finite; the manifest carries the diagnostic.
    AbortedNan { epoch: usize, step: usize, diagnostic: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub architecture: Architecture,
    pub extra_mode: ExtraMode,
    pub seed: u64,
    pub config_hash: String,
    pub effective_msssim_scales: usize,
    pub replay_buffer: bool,
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest validation generator loss.
    pub selected_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub checkpoint: Option<String>,
    pub collapse_flagged: bool,
    pub status: RunStatus,
    pub metric_report_ids: Vec<String>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some(selected) = self.selected_epoch {
            if !self.epochs.iter().any(|e| e.epoch == selected) {
                return Err(Error::Contract(format!(
                    "selected epoch {selected} missing from the recorded history"
                )));
            }
        }
        Ok(())
    }

    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let manifest: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Streams `epoch,term,value` rows.
struct LossLog {
    writer: std::io::BufWriter<std::fs::File>,
}

impl LossLog {
    fn create(path: &Path) -> Result<Self> {
        let mut writer = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(writer, "epoch,term,value")?;
        Ok(Self { writer })
    }

    fn record(&mut self, epoch: usize, term: &str, value: f64) -> Result<()> {
        writeln!(self.writer, "{epoch},{term},{value}")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn to_batches<F: Scalar>(images: &[ImageTensor<F>], size: usize) -> Result<Vec<ArrayD<F>>> {
    images
        .iter()
        .map(|img| {
            if img.height() != size || img.width() != size {
                return Err(Error::Dimension(format!(
                    "training image {}x{} does not match model size {size}",
                    img.height(),
                    img.width()
                )));
            }
            if img.channels() != 3 {
                return Err(Error::Channel("training images must have 3 channels".into()));
            }
            let sym = convert_range(img, ValueRange::Symmetric);
            Ok(image_to_batch(&sym))
        })
        .collect()
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// RMS spread of a set of generator outputs around their mean; near zero
/// means the generator ignores its input.
pub fn output_spread<F: Scalar>(outputs: &[ArrayD<F>]) -> f64 {
    if outputs.len() < 2 {
        return f64::INFINITY;
    }
    let n = outputs.len() as f64;
    let len = outputs[0].len() as f64;
    let mut mean = outputs[0].mapv(|v| v.as_f64());
    for out in &outputs[1..] {
        mean = mean + out.mapv(|v| v.as_f64());
    }
    mean = mean / n;
    let mut acc = 0.0;
    for out in outputs {
        for (v, m) in out.iter().zip(mean.iter()) {
            let d = v.as_f64() - m;
            acc += d * d;
        }
    }
    (acc / (n * len)).sqrt()
}

struct CycleStepLosses {
    total_g: f64,
    total_d: f64,
}

/// Validation generator loss for the NEW→TAR direction of a cycle pair:
/// weighted cycle + identity (+ configured extras at their base weights),
/// adversarial terms excluded so epochs stay comparable.
pub fn cycle_validation_loss<F: Scalar>(
    g_ab: &Generator<F>,
    g_ba: &Generator<F>,
    val_new: &[ArrayD<F>],
    val_tar: &[ArrayD<F>],
    cfg: &TrainConfig,
) -> Result<f64> {
    let ssim_cfg = cfg.ssim_config();
    let scales = cfg.msssim_scales();
    no_grad(|| {
        let mut total = 0.0;
        for a in val_new {
            let a = Var::constant(a.clone());
            let fake_b = g_ab.forward(&a, None)?;
            let rec_a = g_ba.forward(&fake_b, None)?;
            total += cfg.weights.cyc * cycle_loss(&a, &rec_a)?.scalar_value().as_f64();
            match cfg.extra.mode {
                ExtraMode::MsSsim | ExtraMode::Combined => {
                    total += cfg.weights.extra
                        * ms_ssim_loss(&a, &rec_a, &ssim_cfg, scales)?.scalar_value().as_f64();
                }
                ExtraMode::Structure => {
                    total += cfg.weights.extra
                        * structure_loss(&a, &fake_b, &ssim_cfg)?.scalar_value().as_f64();
                }
                ExtraMode::None => {}
            }
        }
        for b in val_tar {
            let b = Var::constant(b.clone());
            let idt_b = g_ab.forward(&b, None)?;
            total += cfg.weights.id * identity_loss(&b, &idt_b)?.scalar_value().as_f64();
        }
        Ok(total / (val_new.len() + val_tar.len()) as f64)
    })
}

/// Equivalent validation loss for the conditional model, translating
/// `val_source` domain images to `val_target`.
pub fn fpg_validation_loss<F: Scalar>(
    generator: &Generator<F>,
    val_source_images: &[ArrayD<F>],
    source_domain: usize,
    target_domain: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    let ssim_cfg = cfg.ssim_config();
    let scales = cfg.msssim_scales();
    no_grad(|| {
        let mut total = 0.0;
        for x in val_source_images {
            let x = Var::constant(x.clone());
            let fake = generator.forward(&x, Some(target_domain))?;
            let rec = generator.forward(&fake, Some(source_domain))?;
            let idt = generator.forward(&x, Some(source_domain))?;
            total += cfg.weights.cyc * cycle_loss(&x, &rec)?.scalar_value().as_f64();
            total += cfg.weights.id_conditional
                * conditional_identity_loss(&x, &idt, source_domain, source_domain)?
                    .scalar_value()
                    .as_f64();
            match cfg.extra.mode {
                ExtraMode::MsSsim | ExtraMode::Combined => {
                    total += cfg.weights.extra
                        * ms_ssim_loss(&x, &rec, &ssim_cfg, scales)?.scalar_value().as_f64();
                }
                ExtraMode::Structure => {
                    total += cfg.weights.extra
                        * structure_loss(&x, &fake, &ssim_cfg)?.scalar_value().as_f64();
                }
                ExtraMode::None => {}
            }
        }
        Ok(total / val_source_images.len() as f64)
    })
}

/// Trains a two-domain cycle model (`cyclegan` or `unet_cyclegan`) for one
/// seed. `data_new` is the domain to be transformed, `data_tar` the target.
pub fn train_cycle_pair<F: Scalar>(
    data_new: &DomainSet<F>,
    data_tar: &DomainSet<F>,
    cfg: &TrainConfig,
    seed: u64,
    run_dir: &Path,
) -> Result<RunManifest> {
    cfg.validate()?;
    if !cfg.architecture.is_cycle_variant() {
        return Err(Error::Config("train_cycle_pair requires a cycle-variant architecture".into()));
    }
    if data_new.train.is_empty() || data_tar.train.is_empty() {
        return Err(Error::Empty("training sets must be non-empty".into()));
    }
    if data_new.val.is_empty() || data_tar.val.is_empty() {
        return Err(Error::Empty("validation sets must be non-empty".into()));
    }
    std::fs::create_dir_all(run_dir)?;

    let train_a = to_batches(&data_new.train, cfg.image_size)?;
    let train_b = to_batches(&data_tar.train, cfg.image_size)?;
    let val_a = to_batches(&data_new.val, cfg.image_size)?;
    let val_b = to_batches(&data_tar.val, cfg.image_size)?;

    let domain_names: Vec<String> = vec!["NEW".into(), "TAR".into()];
    let bundle = ModelBundle::<F>::new(
        cfg.architecture,
        &domain_names,
        &cfg.gen_spec(2),
        &cfg.disc_spec(2),
        seed,
    )?;
    let g_ab = &bundle.generators[0];
    let g_ba = &bundle.generators[1];
    let d_b = &bundle.discriminators[0];
    let d_a = &bundle.discriminators[1];

    let mut g_params = g_ab.parameters();
    g_params.extend(g_ba.parameters());
    let mut d_params = d_b.parameters();
    d_params.extend(d_a.parameters());
    let mut opt_g = Adam::<F>::new(cfg.lr_initial, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt_d = Adam::<F>::new(cfg.lr_initial, cfg.adam_beta1, cfg.adam_beta2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let pool_capacity = if cfg.use_replay_buffer { 50 } else { 0 };
    let mut pool_b = ImagePool::<F>::new(pool_capacity);
    let mut pool_a = ImagePool::<F>::new(pool_capacity);

    let ssim_cfg = cfg.ssim_config();
    let scales = cfg.msssim_scales();
    let adv_weight = cfg.weights.adv * cfg.adv_weight_multiplier;

    let mut log = LossLog::create(&run_dir.join("losses.csv"))?;
    let mut manifest = RunManifest {
        architecture: cfg.architecture,
        extra_mode: cfg.extra.mode,
        seed,
        config_hash: cfg.config_hash(),
        effective_msssim_scales: scales,
        replay_buffer: cfg.use_replay_buffer,
        epochs: Vec::new(),
        selected_epoch: None,
        best_val_loss: None,
        checkpoint: None,
        collapse_flagged: false,
        status: RunStatus::Completed,
        metric_report_ids: Vec::new(),
    };

    let steps_per_epoch = train_a.len().max(train_b.len());
    let checkpoint_path = run_dir.join("best.ckpt");

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg)?;
        opt_g.set_lr(lr);
        opt_d.set_lr(lr);
        let order_a = shuffled_indices(train_a.len(), &mut rng);
        let order_b = shuffled_indices(train_b.len(), &mut rng);
        let add_id_weight = additional_identity_weight(epoch, cfg.extra.decay_epochs, cfg.weights.extra);

        let mut g_acc = 0.0;
        let mut d_acc = 0.0;
        for step in 0..steps_per_epoch {
            let a = Var::constant(train_a[order_a[step % train_a.len()]].clone());
            let b = Var::constant(train_b[order_b[step % train_b.len()]].clone());

            let losses = cycle_step(
                &a, &b, g_ab, g_ba, d_b, d_a, &g_params, &d_params, &mut opt_g, &mut opt_d,
                &mut pool_b, &mut pool_a, &mut rng, cfg, &ssim_cfg, scales, adv_weight,
                add_id_weight,
            )?;
            if !losses.total_g.is_finite() || !losses.total_d.is_finite() {
                let diagnostic = format!(
                    "non-finite loss at epoch {epoch} step {step}: G = {}, D = {}",
                    losses.total_g, losses.total_d
                );
                manifest.status = RunStatus::AbortedNan { epoch, step, diagnostic };
                manifest.save_json(run_dir.join("manifest.json"))?;
                log.flush()?;
                break 'epochs;
            }
            g_acc += losses.total_g;
            d_acc += losses.total_d;
        }

        let val_loss = cycle_validation_loss(g_ab, g_ba, &val_a, &val_b, cfg)?;
        let spread = no_grad(|| -> Result<f64> {
            let probes: Vec<ArrayD<F>> = val_a
                .iter()
                .take(8)
                .map(|x| Ok(g_ab.forward(&Var::constant(x.clone()), None)?.value()))
                .collect::<Result<_>>()?;
            Ok(output_spread(&probes))
        })?;
        let collapse_flagged = spread < cfg.collapse_std_threshold;
        manifest.collapse_flagged |= collapse_flagged;

        let record = EpochRecord {
            epoch,
            lr,
            generator_loss: g_acc / steps_per_epoch as f64,
            discriminator_loss: d_acc / steps_per_epoch as f64,
            val_generator_loss: val_loss,
            collapse_std: spread,
            collapse_flagged,
        };
        log.record(epoch, "lr", lr)?;
        log.record(epoch, "generator", record.generator_loss)?;
        log.record(epoch, "discriminator", record.discriminator_loss)?;
        log.record(epoch, "val_generator", val_loss)?;
        log.record(epoch, "collapse_std", spread)?;
        log.flush()?;
        manifest.epochs.push(record);

        if manifest.best_val_loss.map_or(true, |best| val_loss < best) {
            manifest.best_val_loss = Some(val_loss);
            manifest.selected_epoch = Some(epoch);
            save_checkpoint(&checkpoint_path, &bundle, epoch, seed)?;
            manifest.checkpoint = Some(checkpoint_path.to_string_lossy().into_owned());
        }
    }

    log.flush()?;
    manifest.save_json(run_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[allow(clippy::too_many_arguments)]
fn cycle_step<F: Scalar>(
    a: &Var<F>,
    b: &Var<F>,
    g_ab: &Generator<F>,
    g_ba: &Generator<F>,
    d_b: &crate::networks::Discriminator<F>,
    d_a: &crate::networks::Discriminator<F>,
    g_params: &[Var<F>],
    d_params: &[Var<F>],
    opt_g: &mut Adam<F>,
    opt_d: &mut Adam<F>,
    pool_b: &mut ImagePool<F>,
    pool_a: &mut ImagePool<F>,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
    ssim_cfg: &SsimConfig,
    scales: usize,
    adv_weight: f64,
    add_id_weight: f64,
) -> Result<CycleStepLosses> {
    // Generator update.
    let fake_b = g_ab.forward(a, None)?;
    let rec_a = g_ba.forward(&fake_b, None)?;
    let fake_a = g_ba.forward(b, None)?;
    let rec_b = g_ab.forward(&fake_a, None)?;
    let idt_b = g_ab.forward(b, None)?;
    let idt_a = g_ba.forward(a, None)?;

    let adv = lsgan_g_loss(&d_b.patch_map(&fake_b)).add(&lsgan_g_loss(&d_a.patch_map(&fake_a)));
    let cyc = cycle_loss(a, &rec_a)?.add(&cycle_loss(b, &rec_b)?);
    let id = identity_loss(b, &idt_b)?.add(&identity_loss(a, &idt_a)?);

    let mut total_g = adv
        .mul_scalar(adv_weight)
        .add(&cyc.mul_scalar(cfg.weights.cyc))
        .add(&id.mul_scalar(cfg.weights.id));
    match cfg.extra.mode {
        ExtraMode::None => {}
        ExtraMode::MsSsim => {
            let ms = ms_ssim_loss(a, &rec_a, ssim_cfg, scales)?
                .add(&ms_ssim_loss(b, &rec_b, ssim_cfg, scales)?);
            total_g = total_g.add(&ms.mul_scalar(cfg.weights.extra));
        }
        ExtraMode::Structure => {
            let st = structure_loss(a, &fake_b, ssim_cfg)?.add(&structure_loss(b, &fake_a, ssim_cfg)?);
            total_g = total_g.add(&st.mul_scalar(cfg.weights.extra));
        }
        ExtraMode::Combined => {
            let ms = ms_ssim_loss(a, &rec_a, ssim_cfg, scales)?
                .add(&ms_ssim_loss(b, &rec_b, ssim_cfg, scales)?);
            total_g = total_g.add(&ms.mul_scalar(cfg.weights.extra));
            if add_id_weight > 0.0 {
                total_g = total_g.add(&id.mul_scalar(add_id_weight));
            }
        }
    }
    let g_grads = grad_arrays(&total_g, &g_params.iter().collect::<Vec<_>>())?;
    opt_g.step(g_params, &g_grads)?;

    // Discriminator update against pooled history.
    let hist_b = Var::constant(pool_b.query(fake_b.value(), rng));
    let hist_a = Var::constant(pool_a.query(fake_a.value(), rng));
    let loss_d_b = lsgan_d_loss(&d_b.patch_map(b), &d_b.patch_map(&hist_b));
    let loss_d_a = lsgan_d_loss(&d_a.patch_map(a), &d_a.patch_map(&hist_a));
    let total_d = loss_d_b.add(&loss_d_a).mul_scalar(adv_weight);
    let d_grads = grad_arrays(&total_d, &d_params.iter().collect::<Vec<_>>())?;
    opt_d.step(d_params, &d_grads)?;

    Ok(CycleStepLosses {
        total_g: total_g.scalar_value().as_f64(),
        total_d: total_d.scalar_value().as_f64(),
    })
}

/// Trains the conditional multi-domain model for one seed. Validation
/// translates `val_source` → `val_target` (the NEW→TAR direction of the
/// benchmark).
#[allow(clippy::too_many_arguments)]
pub fn train_fpg<F: Scalar>(
    domains: &[DomainSet<F>],
    domain_names: &[String],
    val_source: usize,
    val_target: usize,
    cfg: &TrainConfig,
    seed: u64,
    run_dir: &Path,
) -> Result<RunManifest> {
    cfg.validate()?;
    if cfg.architecture != Architecture::Fpg {
        return Err(Error::Config("train_fpg requires the fpg architecture".into()));
    }
    if domains.len() < 2 {
        return Err(Error::Config("fpg needs at least two domains".into()));
    }
    if domains.len() != domain_names.len() {
        return Err(Error::Config("domain names must align with domain data".into()));
    }
    if val_source >= domains.len() || val_target >= domains.len() || val_source == val_target {
        return Err(Error::Config("invalid validation source/target domains".into()));
    }
    for d in domains {
        if d.train.is_empty() {
            return Err(Error::Empty("every domain needs training images".into()));
        }
    }
    if domains[val_source].val.is_empty() {
        return Err(Error::Empty("validation source domain has no images".into()));
    }
    std::fs::create_dir_all(run_dir)?;

    let k = domains.len();
    let train: Vec<Vec<ArrayD<F>>> = domains
        .iter()
        .map(|d| to_batches(&d.train, cfg.image_size))
        .collect::<Result<_>>()?;
    let val_src = to_batches(&domains[val_source].val, cfg.image_size)?;

    let bundle = ModelBundle::<F>::new(
        Architecture::Fpg,
        domain_names,
        &cfg.gen_spec(k),
        &cfg.disc_spec(k),
        seed,
    )?;
    let generator = &bundle.generators[0];
    let critic = &bundle.discriminators[0];
    let g_params = generator.parameters();
    let d_params = critic.parameters();
    let mut opt_g = Adam::<F>::new(cfg.lr_initial, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt_d = Adam::<F>::new(cfg.lr_initial, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));

    let ssim_cfg = cfg.ssim_config();
    let scales = cfg.msssim_scales();
    let adv_weight = cfg.weights.adv * cfg.adv_weight_multiplier;

    let mut log = LossLog::create(&run_dir.join("losses.csv"))?;
    let mut manifest = RunManifest {
        architecture: cfg.architecture,
        extra_mode: cfg.extra.mode,
        seed,
        config_hash: cfg.config_hash(),
        effective_msssim_scales: scales,
        replay_buffer: false,
        epochs: Vec::new(),
        selected_epoch: None,
        best_val_loss: None,
        checkpoint: None,
        collapse_flagged: false,
        status: RunStatus::Completed,
        metric_report_ids: Vec::new(),
    };
    let checkpoint_path = run_dir.join("best.ckpt");

    // One pass over every (domain, image) pair per epoch.
    let mut schedule: Vec<(usize, usize)> = Vec::new();
    for (di, imgs) in train.iter().enumerate() {
        for ii in 0..imgs.len() {
            schedule.push((di, ii));
        }
    }

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg)?;
        opt_g.set_lr(lr);
        opt_d.set_lr(lr);
        let order = shuffled_indices(schedule.len(), &mut rng);
        let add_id_weight =
            additional_identity_weight(epoch, cfg.extra.decay_epochs, cfg.weights.extra);

        let mut g_acc = 0.0;
        let mut d_acc = 0.0;
        for (step, &pick) in order.iter().enumerate() {
            let (src, img_idx) = schedule[pick];
            let x = Var::constant(train[src][img_idx].clone());
            let target = rng.gen_range(0..k);

            // Critic update: Wasserstein patch terms, gradient penalty and
            // domain classification on the real sample.
            let fake = no_grad(|| generator.forward(&x, Some(target)))?;
            let (patch_real, logits_real) = critic.dual_forward(&x)?;
            let patch_fake = critic.patch_map(&fake);
            let gp = gradient_penalty(|z| critic.patch_map(z), &x, &fake, &mut rng)?;
            let total_d = wasserstein_d_loss(&patch_real, &patch_fake)
                .mul_scalar(adv_weight)
                .add(&gp.mul_scalar(cfg.weights.gp))
                .add(&domain_classification_loss(&logits_real, src)?.mul_scalar(cfg.weights.domain));
            let d_grads = grad_arrays(&total_d, &d_params.iter().collect::<Vec<_>>())?;
            opt_d.step(&d_params, &d_grads)?;

            // Generator update.
            let fake = generator.forward(&x, Some(target))?;
            let (patch_fake, logits_fake) = critic.dual_forward(&fake)?;
            let rec = generator.forward(&fake, Some(src))?;
            let idt = generator.forward(&x, Some(src))?;
            let cyc = cycle_loss(&x, &rec)?;
            let cid = conditional_identity_loss(&x, &idt, src, src)?;
            let mut total_g = wasserstein_g_loss(&patch_fake)
                .mul_scalar(adv_weight)
                .add(&domain_classification_loss(&logits_fake, target)?.mul_scalar(cfg.weights.domain))
                .add(&cyc.mul_scalar(cfg.weights.cyc))
                .add(&cid.mul_scalar(cfg.weights.id_conditional));
            match cfg.extra.mode {
                ExtraMode::None => {}
                ExtraMode::MsSsim => {
                    total_g = total_g
                        .add(&ms_ssim_loss(&x, &rec, &ssim_cfg, scales)?.mul_scalar(cfg.weights.extra));
                }
                ExtraMode::Structure => {
                    total_g = total_g
                        .add(&structure_loss(&x, &fake, &ssim_cfg)?.mul_scalar(cfg.weights.extra));
                }
                ExtraMode::Combined => {
                    total_g = total_g
                        .add(&ms_ssim_loss(&x, &rec, &ssim_cfg, scales)?.mul_scalar(cfg.weights.extra));
                    if add_id_weight > 0.0 {
                        total_g = total_g.add(&cid.mul_scalar(add_id_weight));
                    }
                }
            }
            let g_grads = grad_arrays(&total_g, &g_params.iter().collect::<Vec<_>>())?;
            opt_g.step(&g_params, &g_grads)?;

            let gv = total_g.scalar_value().as_f64();
            let dv = total_d.scalar_value().as_f64();
            if !gv.is_finite() || !dv.is_finite() {
                let diagnostic =
                    format!("non-finite loss at epoch {epoch} step {step}: G = {gv}, D = {dv}");
                manifest.status = RunStatus::AbortedNan { epoch, step, diagnostic };
                manifest.save_json(run_dir.join("manifest.json"))?;
                log.flush()?;
                break 'epochs;
            }
            g_acc += gv;
            d_acc += dv;
        }

        let val_loss = fpg_validation_loss(generator, &val_src, val_source, val_target, cfg)?;
        let spread = no_grad(|| -> Result<f64> {
            let probes: Vec<ArrayD<F>> = val_src
                .iter()
                .take(8)
                .map(|x| Ok(generator.forward(&Var::constant(x.clone()), Some(val_target))?.value()))
                .collect::<Result<_>>()?;
            Ok(output_spread(&probes))
        })?;
        let collapse_flagged = spread < cfg.collapse_std_threshold;
        manifest.collapse_flagged |= collapse_flagged;

        let record = EpochRecord {
            epoch,
            lr,
            generator_loss: g_acc / schedule.len() as f64,
            discriminator_loss: d_acc / schedule.len() as f64,
            val_generator_loss: val_loss,
            collapse_std: spread,
            collapse_flagged,
        };
        log.record(epoch, "lr", lr)?;
        log.record(epoch, "generator", record.generator_loss)?;
        log.record(epoch, "discriminator", record.discriminator_loss)?;
        log.record(epoch, "val_generator", val_loss)?;
        log.record(epoch, "collapse_std", spread)?;
        log.flush()?;
        manifest.epochs.push(record);

        if manifest.best_val_loss.map_or(true, |best| val_loss < best) {
            manifest.best_val_loss = Some(val_loss);
            manifest.selected_epoch = Some(epoch);
            save_checkpoint(&checkpoint_path, &bundle, epoch, seed)?;
            manifest.checkpoint = Some(checkpoint_path.to_string_lossy().into_owned());
        }
    }

    log.flush()?;
    manifest.save_json(run_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Best run and epoch across seeded runs, judged on validation reports only.
///
/// Per run, the epoch is the recorded arg-min of the validation generator
/// loss; across runs the report with the lowest feature distance wins (mean
/// SSIM breaks ties). Passing a test-split report is a contract violation:
/// test metrics must never influence selection.
pub fn select_best(runs: &[(RunManifest, MetricReport)]) -> Result<(u64, usize)> {
    if runs.is_empty() {
        return Err(Error::Empty("select_best needs at least one run".into()));
    }
    for (_, report) in runs {
        if report.split != Split::Val {
            return Err(Error::Contract(
                "selection must only see validation-split metric reports".into(),
            ));
        }
    }
    let mut best: Option<(&RunManifest, &MetricReport)> = None;
    for (manifest, report) in runs {
        manifest.validate()?;
        if manifest.selected_epoch.is_none() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, current)) => {
                report.fid < current.fid
                    || (report.fid == current.fid && report.ssim_mean > current.ssim_mean)
            }
        };
        if better {
            best = Some((manifest, report));
        }
    }
    let (manifest, _) =
        best.ok_or_else(|| Error::Empty("no completed run with a selected epoch".into()))?;
    Ok((manifest.seed, manifest.selected_epoch.expect("filtered above")))
}

/// Full-resolution transform: pyramid down to the model resolution, transform
/// the base, collapse the band-pass layers back on top.
///
/// `transform_base` receives and returns a symmetric-range image at
/// `base_side`; the input image is unit-range and square with side
/// `base_side * 2^k`.
pub fn transform_full_resolution_with<F: Scalar>(
    img: &ImageTensor<F>,
    base_side: usize,
    transform_base: impl Fn(&ImageTensor<F>) -> Result<ImageTensor<F>>,
) -> Result<ImageTensor<F>> {
    if img.range() != ValueRange::Unit {
        return Err(Error::Contract("full-resolution transform expects unit-range input".into()));
    }
    let pyramid = build_pyramid(img, base_side)?;
    let base_sym = convert_range(pyramid.base(), ValueRange::Symmetric);
    let transformed = transform_base(&base_sym)?;
    if transformed.range() != ValueRange::Symmetric {
        return Err(Error::Contract("base transform must return a symmetric-range image".into()));
    }
    let new_base = convert_range(&transformed, ValueRange::Unit);
    collapse_pyramid(&pyramid, &new_base)
}

/// Full-resolution transform through a trained generator.
pub fn transform_full_resolution<F: Scalar>(
    generator: &Generator<F>,
    target_domain: Option<usize>,
    img: &ImageTensor<F>,
) -> Result<ImageTensor<F>> {
    transform_full_resolution_with(img, generator.spec().image_size, |base| {
        generator.transform_image(base, target_domain)
    })
}
