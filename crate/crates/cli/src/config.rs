//! Experiment configuration file.
//!
//! One TOML file drives every command. All defaults mirror the full-scale
//! training protocol (256×256, 200 epochs, steady rate for 100, five seeds),
//! so an empty `[train]` table reproduces it; `profile = "desk"` switches to
//! the small fast profile and individual keys override either profile.

use std::path::{Path, PathBuf};

use biastransfer::error::{Error, Result};
use biastransfer::losses::{ExtraLossConfig, ExtraMode};
use biastransfer::networks::Architecture;
use biastransfer::synth::{ClassRule, DomainBias, PhantomSpec};
use biastransfer::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable prefixed to `output_dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "BIASTRANSFER_OUTPUT_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub architecture: String,
    pub extra: String,
    /// `full` or `desk`.
    pub profile: String,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            architecture: "cyclegan".into(),
            extra: "none".into(),
            profile: "full".into(),
            output_dir: PathBuf::from("runs/experiment"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Benchmark root: `<root>/<domain>/<split>/images`.
    pub root: PathBuf,
    pub domain_new: String,
    pub domain_tar: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { root: PathBuf::from("data/benchmark"), domain_new: "NEW".into(), domain_tar: "TAR".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_images: usize,
    pub size: usize,
    pub seed: u64,
    /// Optional per-domain class weights (4 entries each) to skew labels.
    pub tar_class_weights: Option<[f64; 4]>,
    pub new_class_weights: Option<[f64; 4]>,
    /// Validation accuracy the downstream classifier must reach before the
    /// benchmark is considered usable.
    pub downstream_target: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_images: 100,
            size: 64,
            seed: 7,
            tar_class_weights: None,
            new_class_weights: None,
            downstream_target: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_steady_epochs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub image_size: Option<usize>,
    pub base_width: Option<usize>,
    pub n_resblocks: Option<usize>,
    pub unet_depth: Option<usize>,
    pub decay_epochs: Option<usize>,
    pub adv_weight_multiplier: Option<f64>,
    pub collapse_std_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub extractor: String,
    pub ssim_window: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { extractor: biastransfer::metrics::DEFAULT_EXTRACTOR_ID.into(), ssim_window: 11 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture()?;
        self.extra_mode()?;
        if !matches!(self.experiment.profile.as_str(), "full" | "desk") {
            return Err(Error::Config(format!(
                "profile must be `full` or `desk`, got `{}`",
                self.experiment.profile
            )));
        }
        self.train_config()?.validate()
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.experiment.architecture.parse()
    }

    pub fn extra_mode(&self) -> Result<ExtraMode> {
        self.experiment.extra.parse()
    }

    /// Output directory, honoring the output-root environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.experiment.output_dir),
            None => self.experiment.output_dir.clone(),
        }
    }

    /// Training configuration: profile defaults plus explicit overrides.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let architecture = self.architecture()?;
        let mut cfg = match self.experiment.profile.as_str() {
            "desk" => TrainConfig::desk(architecture),
            _ => TrainConfig::full(architecture),
        };
        cfg.extra = ExtraLossConfig {
            mode: self.extra_mode()?,
            decay_epochs: self.train.decay_epochs.unwrap_or(cfg.extra.decay_epochs),
        };
        if let Some(v) = self.train.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.train.lr_initial {
            cfg.lr_initial = v;
        }
        if let Some(v) = self.train.lr_steady_epochs {
            cfg.lr_steady_epochs = v;
        }
        if let Some(v) = &self.train.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = self.train.image_size {
            cfg.image_size = v;
        }
        if let Some(v) = self.train.base_width {
            cfg.base_width = v;
        }
        if let Some(v) = self.train.n_resblocks {
            cfg.n_resblocks = v;
        }
        if let Some(v) = self.train.unet_depth {
            cfg.unet_depth = v;
        }
        if let Some(v) = self.train.adv_weight_multiplier {
            cfg.adv_weight_multiplier = v;
        }
        if let Some(v) = self.train.collapse_std_threshold {
            cfg.collapse_std_threshold = v;
        }
        cfg.ssim_window = self.metrics.ssim_window;
        Ok(cfg)
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec { size: self.synth.size, seed: self.synth.seed, ..PhantomSpec::default() }
    }

    pub fn class_rules(&self) -> (ClassRule, ClassRule) {
        let tar = match self.synth.tar_class_weights {
            Some(w) => ClassRule::with_weights(w),
            None => ClassRule::default(),
        };
        let new = match self.synth.new_class_weights {
            Some(w) => ClassRule::with_weights(w),
            None => ClassRule::default(),
        };
        (tar, new)
    }

    pub fn bias_presets(&self) -> (DomainBias, DomainBias) {
        (DomainBias::tar_preset(), DomainBias::new_preset())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            data: DataSection::default(),
            synth: SynthSection::default(),
            train: TrainSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_full_scale_protocol() {
        let config: ExperimentConfig = toml::from_str("").unwrap();
        let train = config.train_config().unwrap();
        assert_eq!(train.epochs, 200);
        assert_eq!(train.lr_initial, 5e-4);
        assert_eq!(train.lr_steady_epochs, 100);
        assert_eq!(train.batch_size, 1);
        assert_eq!(train.seeds.len(), 5);
        assert_eq!(train.image_size, 256);
    }

    #[test]
    fn desk_profile_and_overrides() {
        let text = r#"
            [experiment]
            architecture = "unet_cyclegan"
            extra = "combined"
            profile = "desk"
            output_dir = "out"

            [train]
            seeds = [11, 12]
            epochs = 10
        "#;
        let config: ExperimentConfig = toml::from_str(text).unwrap();
        let train = config.train_config().unwrap();
        assert_eq!(train.image_size, 64);
        assert_eq!(train.epochs, 10);
        assert_eq!(train.seeds, vec![11, 12]);
        assert_eq!(train.extra.mode, ExtraMode::Combined);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[experiment]\nnope = 1\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }
}
