//! Two-domain benchmark assembly, splits and on-disk layout.
//!
//! Both domains draw phantom content independently from the same spec, then
//! receive their own bias preset, so appearance differs while content
//! statistics match. Images are grouped into synthetic "patients"; groups
//! never straddle splits and the split ratio is approximately 70/15/15.
//!
//! On disk: `<root>/<domain>/<split>/images/*.png`,
//! `<root>/<domain>/<split>/masks/*_{blobs,dots}.png` (16-bit label maps),
//! one `labels.csv` per domain/split and a `manifest.json` at the root.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bias::{apply_domain_bias, DomainBias};
use super::phantom::{generate_phantom, ClassRule, PhantomSpec};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ImageTensor};
use crate::metrics::SegMask;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn split_of(&self, id: usize) -> Option<&'static str> {
        if self.train.contains(&id) {
            Some("train")
        } else if self.val.contains(&id) {
            Some("val")
        } else if self.test.contains(&id) {
            Some("test")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample<F: Scalar> {
    pub id: usize,
    pub group: usize,
    pub class_label: usize,
    pub image: ImageTensor<F>,
    pub blobs: SegMask,
    pub dots: SegMask,
}

/// Everything needed to regenerate the benchmark byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub n_images: usize,
    pub spec: PhantomSpec,
    pub tar_rule: ClassRule,
    pub new_rule: ClassRule,
    pub tar_bias: DomainBias,
    pub new_bias: DomainBias,
    pub split_tar: DatasetSplit,
    pub split_new: DatasetSplit,
}

#[derive(Debug, Clone)]
pub struct Benchmark<F: Scalar> {
    pub tar: Vec<Sample<F>>,
    pub new: Vec<Sample<F>>,
    pub manifest: BenchmarkManifest,
}

impl<F: Scalar> Benchmark<F> {
    /// Images of one domain restricted to a split, sorted by id.
    pub fn domain_split(&self, domain: &str, split: &str) -> Result<Vec<&Sample<F>>> {
        let (samples, dsplit) = match domain {
            "TAR" => (&self.tar, &self.manifest.split_tar),
            "NEW" => (&self.new, &self.manifest.split_new),
            other => return Err(Error::Config(format!("unknown domain `{other}`"))),
        };
        let ids = match split {
            "train" => &dsplit.train,
            "val" => &dsplit.val,
            "test" => &dsplit.test,
            other => return Err(Error::Config(format!("unknown split `{other}`"))),
        };
        Ok(samples.iter().filter(|s| ids.contains(&s.id)).collect())
    }
}

/// Groups of 2–4 consecutive ids ("patients"), split 70/15/15 without
/// letting a group straddle splits.
fn grouped_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, DatasetSplit) {
    let mut group_of = vec![0usize; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut id = 0usize;
    while id < n {
        let size = rng.gen_range(2..=4).min(n - id);
        let group: Vec<usize> = (id..id + size).collect();
        for &g in &group {
            group_of[g] = groups.len();
        }
        id += size;
        groups.push(group);
    }
    // Shuffle group order, then fill splits greedily.
    let mut order: Vec<usize> = (0..groups.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut split = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let train_target = (0.70 * n as f64).round() as usize;
    let val_target = (0.15 * n as f64).round() as usize;
    for &gi in &order {
        let bucket = if split.train.len() < train_target {
            &mut split.train
        } else if split.val.len() < val_target {
            &mut split.val
        } else {
            &mut split.test
        };
        bucket.extend(&groups[gi]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    (group_of, split)
}

fn build_domain<F: Scalar>(
    n: usize,
    spec: &PhantomSpec,
    rule: &ClassRule,
    bias: &DomainBias,
    domain_tag: u64,
) -> Result<(Vec<Sample<F>>, DatasetSplit)> {
    let domain_spec = PhantomSpec {
        seed: spec.seed ^ domain_tag.wrapping_mul(0xa076_1d64_78bd_642f),
        class_rule: rule.clone(),
        ..spec.clone()
    };
    let mut samples = Vec::with_capacity(n);
    for id in 0..n {
        let phantom = generate_phantom::<F>(&domain_spec, id as u64)?;
        let mut bias_rng = ChaCha8Rng::seed_from_u64(
            domain_spec.seed ^ (id as u64).wrapping_mul(0xe703_7ed1_a0b4_28db) ^ 0xb1a5,
        );
        let image = apply_domain_bias(&phantom.image, bias, &mut bias_rng)?;
        samples.push(Sample {
            id,
            group: 0,
            class_label: phantom.class_label,
            image,
            blobs: phantom.blobs,
            dots: phantom.dots,
        });
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(domain_spec.seed ^ 0x5911_d2a7);
    let (group_of, split) = grouped_split(n, &mut split_rng);
    for sample in &mut samples {
        sample.group = group_of[sample.id];
    }
    Ok((samples, split))
}

/// Builds both domains with per-domain class rules (to skew one domain's
/// label distribution when wanted).
pub fn make_benchmark_with_rules<F: Scalar>(
    n_images: usize,
    tar_bias: &DomainBias,
    new_bias: &DomainBias,
    spec: &PhantomSpec,
    tar_rule: &ClassRule,
    new_rule: &ClassRule,
) -> Result<Benchmark<F>> {
    if n_images < 40 {
        return Err(Error::Config(format!(
            "benchmark needs >= 40 images per domain to honor grouping, got {n_images}"
        )));
    }
    let (tar, split_tar) = build_domain(n_images, spec, tar_rule, tar_bias, 1)?;
    let (new, split_new) = build_domain(n_images, spec, new_rule, new_bias, 2)?;
    Ok(Benchmark {
        tar,
        new,
        manifest: BenchmarkManifest {
            n_images,
            spec: spec.clone(),
            tar_rule: tar_rule.clone(),
            new_rule: new_rule.clone(),
            tar_bias: tar_bias.clone(),
            new_bias: new_bias.clone(),
            split_tar,
            split_new,
        },
    })
}

/// Builds both domains with the spec's class rule.
pub fn make_benchmark<F: Scalar>(
    n_images: usize,
    tar_bias: &DomainBias,
    new_bias: &DomainBias,
    spec: &PhantomSpec,
) -> Result<Benchmark<F>> {
    make_benchmark_with_rules(n_images, tar_bias, new_bias, spec, &spec.class_rule, &spec.class_rule)
}

fn mask_to_png(mask: &SegMask, path: &Path) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([mask.labels()[[y as usize, x as usize]] as u16])
        });
    buf.save(path)?;
    Ok(())
}

fn mask_from_png(path: &Path) -> Result<SegMask> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let labels = ndarray::Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0[0] as u32
    });
    Ok(SegMask::new(labels))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: usize,
    filename: String,
    class_label: usize,
    group: usize,
}

/// Writes the benchmark folder tree plus its manifest.
pub fn write_benchmark<F: Scalar>(root: &Path, benchmark: &Benchmark<F>) -> Result<()> {
    for (domain, samples, split) in [
        ("TAR", &benchmark.tar, &benchmark.manifest.split_tar),
        ("NEW", &benchmark.new, &benchmark.manifest.split_new),
    ] {
        for split_name in ["train", "val", "test"] {
            let ids = match split_name {
                "train" => &split.train,
                "val" => &split.val,
                _ => &split.test,
            };
            let dir = root.join(domain).join(split_name);
            std::fs::create_dir_all(dir.join("images"))?;
            std::fs::create_dir_all(dir.join("masks"))?;
            let mut rows = Vec::new();
            for &id in ids {
                let sample = &samples[id];
                let filename = format!("img_{id:04}.png");
                save_image(&sample.image, dir.join("images").join(&filename))?;
                mask_to_png(&sample.blobs, &dir.join("masks").join(format!("img_{id:04}_blobs.png")))?;
                mask_to_png(&sample.dots, &dir.join("masks").join(format!("img_{id:04}_dots.png")))?;
                rows.push(LabelRow {
                    id,
                    filename,
                    class_label: sample.class_label,
                    group: sample.group,
                });
            }
            let mut writer = csv::Writer::from_path(dir.join("labels.csv"))?;
            for row in &rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
        }
    }
    std::fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&benchmark.manifest)?,
    )?;
    Ok(())
}

/// Loads the images of one domain/split folder, sorted by filename.
pub fn load_domain_images<F: Scalar>(
    root: &Path,
    domain: &str,
    split: &str,
) -> Result<Vec<(String, ImageTensor<F>)>> {
    let dir = root.join(domain).join(split).join("images");
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png") || n.ends_with(".tif") || n.ends_with(".tiff"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| Ok((name.clone(), load_image(dir.join(&name))?)))
        .collect()
}

/// Loads `filename -> class label` for one domain/split.
pub fn load_domain_labels(root: &Path, domain: &str, split: &str) -> Result<Vec<(String, usize)>> {
    let path = root.join(domain).join(split).join("labels.csv");
    let mut reader = csv::Reader::from_path(&path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        out.push((row.filename, row.class_label));
    }
    out.sort();
    Ok(out)
}

/// Loads the ground-truth masks for one domain/split, keyed by image
/// filename.
pub fn load_domain_masks(
    root: &Path,
    domain: &str,
    split: &str,
) -> Result<Vec<(String, SegMask, SegMask)>> {
    let labels = load_domain_labels(root, domain, split)?;
    let dir = root.join(domain).join(split).join("masks");
    labels
        .into_iter()
        .map(|(filename, _)| {
            let stem = filename.trim_end_matches(".png");
            let blobs = mask_from_png(&dir.join(format!("{stem}_blobs.png")))?;
            let dots = mask_from_png(&dir.join(format!("{stem}_dots.png")))?;
            Ok((filename, blobs, dots))
        })
        .collect()
}
