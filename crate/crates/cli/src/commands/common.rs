//! Shared command plumbing: folder loading, metric evaluation, manifests.

use std::path::{Path, PathBuf};

use biastransfer::error::{Error, Result};
use biastransfer::image::ImageTensor;
use biastransfer::metrics::{
    extract_features, frechet_distance, ms_ssim_with_scales, ssim, MetricReport, PairRecord,
    Split, SsimConfig, MS_SSIM_WEIGHTS,
};
use biastransfer::networks::checkpoint::{load_checkpoint, CheckpointMeta};
use biastransfer::networks::{Architecture, ModelBundle};
use biastransfer::synth::load_domain_images;
use biastransfer::training::{transform_full_resolution, TrainConfig};
use rayon::prelude::*;
use serde_json::json;

pub type Image32 = ImageTensor<f32>;

/// Writes `<out>/<name>-manifest.json` describing the invocation so it can be
/// replayed exactly. No wall-clock fields: identical invocations produce
/// identical manifests.
pub fn write_command_manifest(
    out: &Path,
    name: &str,
    config_hash: &str,
    details: serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let manifest = json!({
        "command": name,
        "config_hash": config_hash,
        "details": details,
    });
    std::fs::write(
        out.join(format!("{name}-manifest.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads `<dir>/*.png|tif`, sorted by filename.
pub fn load_folder(dir: &Path) -> Result<Vec<(String, Image32)>> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png") || n.ends_with(".tif") || n.ends_with(".tiff"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Empty(format!("no images found in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|name| Ok((name.clone(), biastransfer::image::load_image(dir.join(&name))?)))
        .collect()
}

/// Loads one split of a benchmark-layout domain folder.
pub fn load_split(root: &Path, domain: &str, split: &str) -> Result<Vec<(String, Image32)>> {
    load_domain_images::<f32>(root, domain, split)
}

/// Checks that two image lists align by filename.
pub fn check_alignment(a: &[(String, Image32)], b: &[(String, Image32)]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "folder sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    for ((na, _), (nb, _)) in a.iter().zip(b.iter()) {
        if na != nb {
            return Err(Error::Alignment(format!("filenames differ: {na} vs {nb}")));
        }
    }
    Ok(())
}

/// SSIM per aligned pair plus feature distances against the target domain.
pub fn evaluate_sets(
    original: &[(String, Image32)],
    transformed: &[(String, Image32)],
    target: &[(String, Image32)],
    split: Split,
    extractor_id: &str,
    ssim_window: usize,
) -> Result<(MetricReport, Vec<PairRecord>)> {
    check_alignment(original, transformed)?;
    if target.is_empty() {
        return Err(Error::Empty("target folder has no images".into()));
    }
    let cfg = SsimConfig { window: ssim_window, ..SsimConfig::default() };
    // Largest MS-SSIM scale count the images support (None if even one scale
    // does not fit).
    let min_side = original
        .iter()
        .map(|(_, img)| img.height().min(img.width()))
        .min()
        .unwrap_or(0);
    let mut scales = MS_SSIM_WEIGHTS.len();
    while scales > 0 && min_side < (1 << (scales - 1)) * cfg.window {
        scales -= 1;
    }

    let records: Vec<PairRecord> = original
        .par_iter()
        .zip(transformed.par_iter())
        .map(|((name, orig), (_, trans))| -> Result<PairRecord> {
            let s: f64 = ssim(&orig.to_f64(), &trans.to_f64(), &cfg)?;
            let ms = if scales > 0 {
                Some(ms_ssim_with_scales(&orig.to_f64(), &trans.to_f64(), &cfg, scales)?)
            } else {
                None
            };
            Ok(PairRecord { image_id: name.clone(), ssim: s, ms_ssim: ms })
        })
        .collect::<Result<_>>()?;

    let n = records.len() as f64;
    let ssim_mean = records.iter().map(|r| r.ssim).sum::<f64>() / n;
    let ssim_std =
        (records.iter().map(|r| (r.ssim - ssim_mean).powi(2)).sum::<f64>() / n).sqrt();
    let ms_ssim_mean = if scales > 0 {
        Some(records.iter().filter_map(|r| r.ms_ssim).sum::<f64>() / n)
    } else {
        None
    };

    let transformed_images: Vec<Image32> = transformed.iter().map(|(_, i)| i.clone()).collect();
    let original_images: Vec<Image32> = original.iter().map(|(_, i)| i.clone()).collect();
    let target_images: Vec<Image32> = target.iter().map(|(_, i)| i.clone()).collect();
    let feat_transformed = extract_features(&transformed_images, extractor_id)?;
    let feat_original = extract_features(&original_images, extractor_id)?;
    let feat_target = extract_features(&target_images, extractor_id)?;
    let fid = frechet_distance(&feat_transformed, &feat_target)? as f64;
    let fid_original = frechet_distance(&feat_original, &feat_target)? as f64;

    let report = MetricReport {
        split,
        ssim_mean,
        ssim_std,
        ms_ssim_mean,
        fid,
        fid_original: Some(fid_original),
        dice_glom_pix: None,
        dice_podo_pix: None,
        dice_podo_obj: None,
        accuracy: None,
        macro_f1: None,
    };
    Ok((report, records))
}

/// Loads a checkpoint and refuses it unless it matches the configured model.
pub fn load_matching_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    num_domains: usize,
) -> Result<(ModelBundle<f32>, CheckpointMeta)> {
    let (bundle, meta) = load_checkpoint::<f32, _>(path)?;
    meta.ensure_matches(cfg.architecture, &cfg.gen_spec(num_domains), &cfg.disc_spec(num_domains))?;
    Ok((bundle, meta))
}

/// Transforms every image through the generator at full resolution.
pub fn transform_images(
    bundle: &ModelBundle<f32>,
    meta: &CheckpointMeta,
    images: &[(String, Image32)],
    target_domain_name: Option<&str>,
) -> Result<Vec<(String, Image32)>> {
    let target_domain = match bundle.architecture {
        Architecture::Fpg => {
            let name = target_domain_name.unwrap_or("TAR");
            let idx = meta
                .domain_names
                .iter()
                .position(|d| d == name)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "target domain `{name}` not in checkpoint domains {:?}",
                        meta.domain_names
                    ))
                })?;
            Some(idx)
        }
        _ => None,
    };
    // Model graphs are single-threaded; images go through sequentially.
    images
        .iter()
        .map(|(name, img)| {
            let out = transform_full_resolution(&bundle.generators[0], target_domain, img)?;
            Ok((name.clone(), out))
        })
        .collect()
}

/// Run directory of one seed under the experiment output root.
pub fn run_dir(out: &Path, architecture: Architecture, extra: &str, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{architecture}-{extra}")).join(format!("seed{seed:02}"))
}
