//! `report`: aggregate run manifests and metric reports under the output
//! root into boxplots and a markdown summary, validation and test separately.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use biastransfer::error::{Error, Result};
use biastransfer::metrics::MetricReport;
use biastransfer::report::{render_boxplot, BoxSeries};
use biastransfer::training::RunManifest;
use serde_json::json;

use crate::commands::common::write_command_manifest;
use crate::config::ExperimentConfig;

struct VariantRuns {
    manifests: Vec<RunManifest>,
    val_reports: Vec<MetricReport>,
    test_reports: Vec<MetricReport>,
}

pub fn run(config: &ExperimentConfig, out_override: Option<PathBuf>) -> Result<()> {
    let out = out_override.unwrap_or_else(|| config.output_dir());
    let runs_root = out.join("runs");
    if !runs_root.is_dir() {
        return Err(Error::Empty(format!("no runs found under {}", runs_root.display())));
    }

    let mut variants: BTreeMap<String, VariantRuns> = BTreeMap::new();
    for variant_entry in std::fs::read_dir(&runs_root)? {
        let variant_dir = variant_entry?.path();
        if !variant_dir.is_dir() {
            continue;
        }
        let variant = variant_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let runs = variants
            .entry(variant)
            .or_insert_with(|| VariantRuns {
                manifests: Vec::new(),
                val_reports: Vec::new(),
                test_reports: Vec::new(),
            });
        let mut seed_dirs: Vec<PathBuf> = std::fs::read_dir(&variant_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        seed_dirs.sort();
        for seed_dir in seed_dirs {
            let manifest_path = seed_dir.join("manifest.json");
            if !manifest_path.exists() {
                continue;
            }
            runs.manifests.push(RunManifest::load_json(&manifest_path)?);
            let val_path = seed_dir.join("val-report.json");
            if val_path.exists() {
                runs.val_reports.push(MetricReport::load_json(&val_path)?);
            }
            let test_path = seed_dir.join("test-report.json");
            if test_path.exists() {
                runs.test_reports.push(MetricReport::load_json(&test_path)?);
            }
        }
    }
    if variants.is_empty() {
        return Err(Error::Empty("no run manifests found".into()));
    }

    let report_dir = out.join("report");
    std::fs::create_dir_all(&report_dir)?;

    // Validation and test scores rendered separately.
    let splits: [(&str, fn(&VariantRuns) -> &Vec<MetricReport>); 2] =
        [("val", |v| &v.val_reports), ("test", |v| &v.test_reports)];
    for (split, pick) in splits {
        let fid_series: Vec<BoxSeries> = variants
            .iter()
            .filter(|(_, v)| !pick(v).is_empty())
            .map(|(name, v)| {
                let values: Vec<f64> = pick(v).iter().map(|r| r.fid).collect();
                let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
                BoxSeries { label: shorten(name), values, marker: Some(best) }
            })
            .collect();
        if !fid_series.is_empty() {
            render_boxplot(
                report_dir.join(format!("fid-{split}.png")),
                &format!("FID {split}"),
                "FID",
                &fid_series,
            )?;
        }
        let ssim_series: Vec<BoxSeries> = variants
            .iter()
            .filter(|(_, v)| !pick(v).is_empty())
            .map(|(name, v)| {
                let values: Vec<f64> = pick(v).iter().map(|r| 1.0 - r.ssim_mean).collect();
                let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
                BoxSeries { label: shorten(name), values, marker: Some(best) }
            })
            .collect();
        if !ssim_series.is_empty() {
            render_boxplot(
                report_dir.join(format!("ssim-{split}.png")),
                &format!("1-SSIM {split}"),
                "1-SSIM",
                &ssim_series,
            )?;
        }
    }

    // Markdown summary.
    let mut md = std::io::BufWriter::new(std::fs::File::create(report_dir.join("summary.md"))?);
    writeln!(md, "# Experiment summary\n")?;
    writeln!(md, "| variant | runs | collapsed | best val loss | val FID (mean) | val SSIM (mean) | test FID | test SSIM |")?;
    writeln!(md, "|---|---|---|---|---|---|---|---|")?;
    for (name, v) in &variants {
        let collapsed = v.manifests.iter().filter(|m| m.collapse_flagged).count();
        let best_loss = v
            .manifests
            .iter()
            .filter_map(|m| m.best_val_loss)
            .fold(f64::INFINITY, f64::min);
        let mean = |reports: &Vec<MetricReport>, f: fn(&MetricReport) -> f64| -> String {
            if reports.is_empty() {
                "-".into()
            } else {
                format!("{:.4}", reports.iter().map(f).sum::<f64>() / reports.len() as f64)
            }
        };
        writeln!(
            md,
            "| {} | {} | {} | {:.4} | {} | {} | {} | {} |",
            name,
            v.manifests.len(),
            collapsed,
            best_loss,
            mean(&v.val_reports, |r| r.fid),
            mean(&v.val_reports, |r| r.ssim_mean),
            mean(&v.test_reports, |r| r.fid),
            mean(&v.test_reports, |r| r.ssim_mean),
        )?;
    }
    md.flush()?;
    println!("report written to {}", report_dir.display());

    write_command_manifest(
        &out,
        "report",
        "-",
        json!({ "variants": variants.keys().collect::<Vec<_>>() }),
    )?;
    Ok(())
}

fn shorten(name: &str) -> String {
    name.replace("cyclegan", "CG").replace("unet_", "U").replace("fpg", "FPG").to_uppercase()
}
