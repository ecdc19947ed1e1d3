//! `evaluate`: content preservation, domain imitation and (optionally)
//! downstream impact of a transformed folder.

use std::path::{Path, PathBuf};

use biastransfer::error::{Error, Result};
use biastransfer::metrics::{write_pair_csv, Split};
use biastransfer::report::{render_boxplot, BoxSeries};
use biastransfer::synth::{evaluate_downstream, DownstreamModel};
use serde_json::json;

use crate::commands::common::{load_folder, write_command_manifest, Image32};
use crate::config::ExperimentConfig;

pub struct EvaluateArgs {
    pub original: PathBuf,
    pub transformed: PathBuf,
    pub target: PathBuf,
    pub split: Split,
    pub out: PathBuf,
    pub downstream: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

pub fn run(config: &ExperimentConfig, args: &EvaluateArgs) -> Result<()> {
    let original = load_folder(&args.original)?;
    let transformed = load_folder(&args.transformed)?;
    let target = load_folder(&args.target)?;

    let (mut report, records) = crate::commands::common::evaluate_sets(
        &original,
        &transformed,
        &target,
        args.split,
        &config.metrics.extractor,
        config.metrics.ssim_window,
    )?;

    if let (Some(model_path), Some(labels_path)) = (&args.downstream, &args.labels) {
        let model = DownstreamModel::<f32>::load(model_path)?;
        let labels = read_labels(labels_path)?;
        let (acc, f1) = score_downstream(&model, &transformed, &labels)?;
        report.accuracy = Some(acc);
        report.macro_f1 = Some(f1);
    }

    std::fs::create_dir_all(&args.out)?;
    report.save_json(args.out.join(format!("report-{}.json", args.split)))?;
    write_pair_csv(args.out.join(format!("pairs-{}.csv", args.split)), &records)?;

    // Boxplot-style summaries: per-pair 1-SSIM distribution and the two
    // feature distances.
    let one_minus_ssim: Vec<f64> = records.iter().map(|r| 1.0 - r.ssim).collect();
    render_boxplot(
        args.out.join(format!("ssim-{}.png", args.split)),
        &format!("1-SSIM {}", args.split),
        "1-SSIM",
        &[BoxSeries { label: "PAIRS".into(), values: one_minus_ssim, marker: None }],
    )?;
    render_boxplot(
        args.out.join(format!("fid-{}.png", args.split)),
        &format!("FEATURE DISTANCE {}", args.split),
        "FID",
        &[
            BoxSeries {
                label: "ORIGINAL".into(),
                values: vec![report.fid_original.unwrap_or(f64::NAN)],
                marker: None,
            },
            BoxSeries { label: "TRANSFORMED".into(), values: vec![report.fid], marker: None },
        ],
    )?;

    println!(
        "{}: ssim {:.4} ± {:.4}, fid {:.4} (original {:.4}){}",
        args.split,
        report.ssim_mean,
        report.ssim_std,
        report.fid,
        report.fid_original.unwrap_or(f64::NAN),
        match (report.accuracy, report.macro_f1) {
            (Some(a), Some(f)) => format!(", accuracy {a:.3}, macro F1 {f:.3}"),
            _ => String::new(),
        }
    );

    write_command_manifest(
        &args.out,
        "evaluate",
        "-",
        json!({
            "original": args.original,
            "transformed": args.transformed,
            "target": args.target,
            "split": args.split.to_string(),
            "downstream": args.downstream,
            "labels": args.labels,
        }),
    )?;
    Ok(())
}

/// Reads `filename -> class_label` from a benchmark-style labels.csv.
fn read_labels(path: &Path) -> Result<Vec<(String, usize)>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    let filename_idx = headers
        .iter()
        .position(|h| h == "filename")
        .ok_or_else(|| Error::Config("labels.csv needs a `filename` column".into()))?;
    let label_idx = headers
        .iter()
        .position(|h| h == "class_label" || h == "label")
        .ok_or_else(|| Error::Config("labels.csv needs a `class_label` column".into()))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Config(format!("bad labels.csv row: {e}")))?;
        let filename = row.get(filename_idx).unwrap_or_default().to_string();
        let label: usize = row
            .get(label_idx)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::Config("non-integer class label".into()))?;
        out.push((filename, label));
    }
    out.sort();
    Ok(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::Reader::from_path(path)?)
}

fn score_downstream(
    model: &DownstreamModel<f32>,
    transformed: &[(String, Image32)],
    labels: &[(String, usize)],
) -> Result<(f64, f64)> {
    let mut images = Vec::new();
    let mut truth = Vec::new();
    for (name, img) in transformed {
        let label = labels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| *l)
            .ok_or_else(|| Error::Alignment(format!("no label for image {name}")))?;
        images.push(img.clone());
        truth.push(label);
    }
    evaluate_downstream(model, &images, &truth)
}
