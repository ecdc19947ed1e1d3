//! `synth`: generate the two-domain benchmark and its downstream classifier.

use std::path::PathBuf;

use biastransfer::error::Result;
use biastransfer::synth::{
    make_benchmark_with_rules, train_downstream, write_benchmark, DownstreamConfig,
};
use serde_json::json;

use crate::commands::common::write_command_manifest;
use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let root = out.unwrap_or_else(|| config.data.root.clone());
    let spec = config.phantom_spec();
    let (tar_rule, new_rule) = config.class_rules();
    let (tar_bias, new_bias) = config.bias_presets();

    println!("generating benchmark: {} images/domain at {}x{} (seed {})",
        config.synth.n_images, spec.size, spec.size, spec.seed);
    let benchmark = make_benchmark_with_rules::<f32>(
        config.synth.n_images,
        &tar_bias,
        &new_bias,
        &spec,
        &tar_rule,
        &new_rule,
    )?;
    write_benchmark(&root, &benchmark)?;
    println!("wrote benchmark to {}", root.display());

    // Downstream classifier: trained on the TAR training split only, frozen
    // afterwards. A benchmark whose classifier cannot learn TAR is invalid.
    let train_data: Vec<_> = benchmark
        .domain_split("TAR", "train")?
        .into_iter()
        .map(|s| (s.image.clone(), s.class_label))
        .collect();
    let val_data: Vec<_> = benchmark
        .domain_split("TAR", "val")?
        .into_iter()
        .map(|s| (s.image.clone(), s.class_label))
        .collect();
    let mut downstream_cfg = DownstreamConfig {
        image_size: spec.size,
        seed: spec.seed ^ 0xd05e,
        ..DownstreamConfig::default()
    };
    if let Some(target) = config.synth.downstream_target {
        downstream_cfg.target_val_accuracy = target;
    }
    let model = train_downstream(&train_data, &val_data, &downstream_cfg)?;
    let model_path = root.join("downstream.bin");
    model.save(&model_path)?;
    println!("downstream classifier saved to {}", model_path.display());

    write_command_manifest(
        &root,
        "synth",
        &format!("{:016x}", config.synth.seed),
        json!({
            "n_images": config.synth.n_images,
            "size": spec.size,
            "seed": spec.seed,
            "tar_class_weights": config.synth.tar_class_weights,
            "new_class_weights": config.synth.new_class_weights,
            "downstream_model": model_path,
        }),
    )?;
    Ok(())
}
