//! `transform`: run every image of a folder through a trained generator at
//! full resolution.

use std::path::{Path, PathBuf};

use biastransfer::error::Result;
use biastransfer::image::save_image;
use serde_json::json;

use crate::commands::common::{
    load_folder, load_matching_checkpoint, transform_images, write_command_manifest,
};
use crate::config::ExperimentConfig;

pub fn run(
    config: &ExperimentConfig,
    checkpoint: &Path,
    input: &Path,
    out: PathBuf,
    target_domain: Option<String>,
) -> Result<()> {
    let train_cfg = config.train_config()?;
    // Refuses to run when the checkpoint does not match the configured spec.
    let (bundle, meta) = load_matching_checkpoint(checkpoint, &train_cfg, 2)?;
    let images = load_folder(input)?;
    println!("transforming {} images from {}", images.len(), input.display());

    let transformed = transform_images(&bundle, &meta, &images, target_domain.as_deref())?;
    std::fs::create_dir_all(&out)?;
    for (name, img) in &transformed {
        save_image(img, out.join(name))?;
    }
    println!("wrote {} images to {}", transformed.len(), out.display());

    write_command_manifest(
        &out,
        "transform",
        &train_cfg.config_hash(),
        json!({
            "checkpoint": checkpoint,
            "checkpoint_epoch": meta.epoch,
            "checkpoint_seed": meta.seed,
            "input": input,
            "count": transformed.len(),
            "target_domain": target_domain,
        }),
    )?;
    Ok(())
}
