//! `baseline`: color transfer against a single seeded random reference image
//! from the target domain.

use std::path::{Path, PathBuf};

use biastransfer::colorxfer::{color_transfer, pick_reference};
use biastransfer::error::{Error, Result};
use biastransfer::image::save_image;
use rayon::prelude::*;
use serde_json::json;

use crate::commands::common::{load_folder, write_command_manifest};
use crate::config::ExperimentConfig;

pub fn run(
    _config: &ExperimentConfig,
    input: &Path,
    target: &Path,
    seed: u64,
    out: PathBuf,
) -> Result<()> {
    let inputs = load_folder(input)?;
    let targets = load_folder(target)?;
    if targets.is_empty() {
        return Err(Error::Empty("target folder has no images".into()));
    }

    let ids: Vec<String> = targets.iter().map(|(name, _)| name.clone()).collect();
    let spec = pick_reference(&ids, seed)?;
    let reference = &targets
        .iter()
        .find(|(name, _)| name == &spec.reference_image_id)
        .expect("picked id exists")
        .1;
    println!(
        "color transfer of {} images against reference {}",
        inputs.len(),
        spec.reference_image_id
    );

    let transferred: Vec<(String, _)> = inputs
        .par_iter()
        .map(|(name, img)| Ok((name.clone(), color_transfer(img, reference)?)))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&out)?;
    for (name, img) in &transferred {
        save_image(img, out.join(name))?;
    }
    println!("wrote {} images to {}", transferred.len(), out.display());

    write_command_manifest(
        &out,
        "baseline",
        "-",
        json!({
            "input": input,
            "target": target,
            "seed": seed,
            "reference_image_id": spec.reference_image_id,
            "count": transferred.len(),
        }),
    )?;
    Ok(())
}
