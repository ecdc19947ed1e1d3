//! `train`: the multi-seed protocol for one architecture/extra-loss variant.
//!
//! Each seed trains independently (in parallel), leaves a run directory with
//! its manifest, loss log and best checkpoint, and gets a validation metric
//! report. Selection across runs sees validation reports only; test metrics
//! are never computed here. Re-running with the same config is idempotent:
//! finished runs are detected by their config hash and reused.

use biastransfer::error::{Error, Result};
use biastransfer::metrics::{MetricReport, Split};
use biastransfer::networks::Architecture;
use biastransfer::training::{
    select_best, train_cycle_pair, train_fpg, DomainSet, RunManifest, TrainConfig,
};
use rayon::prelude::*;
use serde_json::json;

use crate::commands::common::{
    evaluate_sets, load_matching_checkpoint, load_split, run_dir, transform_images,
    write_command_manifest, Image32,
};
use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig) -> Result<()> {
    let train_cfg = config.train_config()?;
    let architecture = config.architecture()?;
    let out = config.output_dir();
    let root = &config.data.root;
    let extra = train_cfg.extra.mode.to_string();

    let new_domain = DomainSet {
        train: strip(load_split(root, &config.data.domain_new, "train")?),
        val: strip(load_split(root, &config.data.domain_new, "val")?),
    };
    let tar_domain = DomainSet {
        train: strip(load_split(root, &config.data.domain_tar, "train")?),
        val: strip(load_split(root, &config.data.domain_tar, "val")?),
    };
    let val_new_named = load_split(root, &config.data.domain_new, "val")?;
    let val_tar_named = load_split(root, &config.data.domain_tar, "val")?;

    println!(
        "training {architecture} ({extra}) for {} seeds x {} epochs at {}x{}",
        train_cfg.seeds.len(),
        train_cfg.epochs,
        train_cfg.image_size,
        train_cfg.image_size
    );

    let hash = train_cfg.config_hash();
    let runs: Vec<(RunManifest, MetricReport)> = train_cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(RunManifest, MetricReport)> {
            let dir = run_dir(&out, architecture, &extra, seed);
            let manifest_path = dir.join("manifest.json");
            let report_path = dir.join("val-report.json");
            if manifest_path.exists() && report_path.exists() {
                let manifest = RunManifest::load_json(&manifest_path)?;
                if manifest.config_hash == hash {
                    println!("seed {seed}: reusing finished run in {}", dir.display());
                    return Ok((manifest, MetricReport::load_json(&report_path)?));
                }
            }
            let manifest = run_one_seed(
                &train_cfg,
                architecture,
                &new_domain,
                &tar_domain,
                seed,
                &dir,
                config,
            )?;
            let report = validation_report(
                &train_cfg,
                config,
                &dir,
                &val_new_named,
                &val_tar_named,
            )?;
            report.save_json(&report_path)?;
            println!(
                "seed {seed}: best epoch {:?}, val fid {:.4}, val ssim {:.4}",
                manifest.selected_epoch, report.fid, report.ssim_mean
            );
            Ok((manifest, report))
        })
        .collect::<Result<_>>()?;

    let (best_seed, best_epoch) = select_best(&runs)?;
    let best_dir = run_dir(&out, architecture, &extra, best_seed);
    let selection = json!({
        "seed": best_seed,
        "epoch": best_epoch,
        "checkpoint": best_dir.join("best.ckpt"),
        "config_hash": hash,
    });
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join(format!("selection-{architecture}-{extra}.json")),
        serde_json::to_string_pretty(&selection)?,
    )?;
    println!("selected seed {best_seed}, epoch {best_epoch}");

    write_command_manifest(
        &out,
        "train",
        &hash,
        json!({
            "architecture": architecture.to_string(),
            "extra": extra,
            "seeds": train_cfg.seeds,
            "data_root": root,
            "selection": selection,
        }),
    )?;
    Ok(())
}

fn strip(named: Vec<(String, Image32)>) -> Vec<Image32> {
    named.into_iter().map(|(_, img)| img).collect()
}

fn run_one_seed(
    train_cfg: &TrainConfig,
    architecture: Architecture,
    new_domain: &DomainSet<f32>,
    tar_domain: &DomainSet<f32>,
    seed: u64,
    dir: &std::path::Path,
    config: &ExperimentConfig,
) -> Result<RunManifest> {
    match architecture {
        Architecture::Cyclegan | Architecture::UnetCyclegan => {
            train_cycle_pair(new_domain, tar_domain, train_cfg, seed, dir)
        }
        Architecture::Fpg => {
            let domains = vec![new_domain.clone(), tar_domain.clone()];
            let names = vec![config.data.domain_new.clone(), config.data.domain_tar.clone()];
            train_fpg(&domains, &names, 0, 1, train_cfg, seed, dir)
        }
    }
}

/// Validation metric report for a finished run: transform the validation NEW
/// images with the run's best checkpoint and score them against validation
/// TAR.
fn validation_report(
    train_cfg: &TrainConfig,
    config: &ExperimentConfig,
    dir: &std::path::Path,
    val_new: &[(String, Image32)],
    val_tar: &[(String, Image32)],
) -> Result<MetricReport> {
    let checkpoint = dir.join("best.ckpt");
    if !checkpoint.exists() {
        return Err(Error::Empty(format!(
            "run {} finished without a checkpoint (aborted?)",
            dir.display()
        )));
    }
    let (bundle, meta) = load_matching_checkpoint(&checkpoint, train_cfg, 2)?;
    let transformed = transform_images(&bundle, &meta, val_new, Some(&config.data.domain_tar))?;
    let (report, _) = evaluate_sets(
        val_new,
        &transformed,
        val_tar,
        Split::Val,
        &config.metrics.extractor,
        config.metrics.ssim_window,
    )?;
    Ok(report)
}
