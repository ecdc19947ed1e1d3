//! Procedural tissue-like phantoms with ground-truth masks.
//!
//! Each phantom is drawn from its (seed, id) pair alone: a textured dark
//! background, `n_blobs` smooth closed regions (wobbled ellipses) and small
//! bright discs ("dots") strictly inside the blobs. The class label is a
//! deterministic function of geometry: few/many blobs × sparse/dense total
//! dot count gives four classes. Blob radii scale down with the blob count
//! and dots sit on a jittered grid inside each blob, so every class is
//! geometrically realizable at small image sizes.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};
use crate::metrics::SegMask;
use crate::scalar::Scalar;

/// Maps geometry to one of four classes and weighs their frequencies during
/// generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassRule {
    /// Blob count at or above this is "many blobs".
    pub blob_high_min: usize,
    /// Sampled total dot count for the sparse classes (inclusive).
    pub sparse_total: (usize, usize),
    /// Sampled total dot count for the dense classes (inclusive).
    pub dense_total: (usize, usize),
    /// Realized totals at or above this classify as dense; kept strictly
    /// between the two sampling ranges.
    pub dense_threshold: usize,
    /// Sampling weights of classes 0..4 (few/sparse, few/dense, many/sparse,
    /// many/dense).
    pub class_weights: [f64; 4],
}

impl Default for ClassRule {
    fn default() -> Self {
        Self {
            blob_high_min: 3,
            sparse_total: (1, 2),
            dense_total: (8, 10),
            dense_threshold: 5,
            class_weights: [0.25; 4],
        }
    }
}

impl ClassRule {
    pub fn with_weights(weights: [f64; 4]) -> Self {
        Self { class_weights: weights, ..Self::default() }
    }

    fn sample_class(&self, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = self.class_weights.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        for (i, &w) in self.class_weights.iter().enumerate() {
            if draw < w {
                return i;
            }
            draw -= w;
        }
        3
    }

    /// Label derived from realized geometry.
    pub fn classify(&self, n_blobs: usize, total_dots: usize) -> usize {
        let blob_high = n_blobs >= self.blob_high_min;
        let dot_high = total_dots >= self.dense_threshold;
        2 * blob_high as usize + dot_high as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sparse_total.0 == 0 || self.sparse_total.0 > self.sparse_total.1 {
            return Err(Error::Config("invalid sparse dot range".into()));
        }
        if self.dense_total.0 > self.dense_total.1 {
            return Err(Error::Config("invalid dense dot range".into()));
        }
        if !(self.sparse_total.1 < self.dense_threshold
            && self.dense_threshold <= self.dense_total.0)
        {
            return Err(Error::Config(
                "dense threshold must separate the sparse and dense ranges".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    /// Inclusive blob-count range; the class rule carves it into buckets.
    pub n_blobs: (usize, usize),
    /// Inclusive per-blob dot capacity bounds.
    pub n_dots_per_blob: (usize, usize),
    pub texture_scale: f64,
    pub class_rule: ClassRule,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_blobs: (1, 4),
            n_dots_per_blob: (1, 10),
            texture_scale: 1.0,
            class_rule: ClassRule::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::Config("phantom size must be >= 32".into()));
        }
        if self.n_blobs.0 == 0 || self.n_blobs.0 > self.n_blobs.1 {
            return Err(Error::Config("invalid blob-count range".into()));
        }
        if self.n_dots_per_blob.0 == 0 || self.n_dots_per_blob.0 > self.n_dots_per_blob.1 {
            return Err(Error::Config("invalid dots-per-blob range".into()));
        }
        self.class_rule.validate()
    }
}

/// One rendered phantom with its ground truth.
#[derive(Debug, Clone)]
pub struct Phantom<F: Scalar> {
    pub image: ImageTensor<F>,
    pub blobs: SegMask,
    pub dots: SegMask,
    pub class_label: usize,
}

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    elong: f64,
    angle: f64,
    wobble: [(f64, f64); 2],
}

impl Blob {
    /// Boundary radius along direction `phi` in the blob frame.
    fn boundary(&self, phi: f64) -> f64 {
        let (a3, p3) = self.wobble[0];
        let (a5, p5) = self.wobble[1];
        self.radius * (1.0 + a3 * (3.0 * phi + p3).sin() + a5 * (5.0 * phi + p5).sin())
    }

    fn min_boundary(&self) -> f64 {
        self.radius * (1.0 - self.wobble[0].0 - self.wobble[1].0)
    }

    /// Largest image-space distance from center for overlap checks.
    fn outer_bound(&self) -> f64 {
        self.radius * self.elong * (1.0 + self.wobble[0].0 + self.wobble[1].0)
    }

    /// Blob-frame polar coordinates of an image point.
    fn local(&self, y: f64, x: f64) -> (f64, f64) {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let cos = self.angle.cos();
        let sin = self.angle.sin();
        let lx = (dx * cos + dy * sin) / self.elong;
        let ly = -dx * sin + dy * cos;
        ((lx * lx + ly * ly).sqrt(), ly.atan2(lx))
    }

    /// Image coordinates of a blob-frame point.
    fn to_image(&self, ly: f64, lx: f64) -> (f64, f64) {
        let cos = self.angle.cos();
        let sin = self.angle.sin();
        let sx = lx * self.elong;
        (self.cy + ly * cos + sx * sin, self.cx + sx * cos - ly * sin)
    }
}

/// Blob radius range (as a fraction of image size) by blob count: fewer
/// blobs are larger, so dense dot totals always fit somewhere.
fn blob_radius_range(n_blobs: usize) -> (f64, f64) {
    match n_blobs {
        1 => (0.16, 0.20),
        2 => (0.12, 0.15),
        3 => (0.10, 0.12),
        _ => (0.088, 0.105),
    }
}

fn smoothstep(edge: f64) -> f64 {
    let t = edge.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly upsampled coarse value noise in [0, 1].
fn smooth_noise(size: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let grid = size / cell + 2;
    let coarse = Array2::from_shape_simple_fn((grid, grid), || rng.gen::<f64>());
    Array2::from_shape_fn((size, size), |(y, x)| {
        let fy = y as f64 / cell as f64;
        let fx = x as f64 / cell as f64;
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let v00 = coarse[[y0, x0]];
        let v01 = coarse[[y0, x0 + 1]];
        let v10 = coarse[[y0 + 1, x0]];
        let v11 = coarse[[y0 + 1, x0 + 1]];
        v00 * (1.0 - ty) * (1.0 - tx) + v01 * (1.0 - ty) * tx + v10 * ty * (1.0 - tx) + v11 * ty * tx
    })
}

/// Renders the phantom with index `id`; deterministic in `(spec.seed, id)`.
pub fn generate_phantom<F: Scalar>(spec: &PhantomSpec, id: u64) -> Result<Phantom<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ (id.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let s = spec.size;
    let sf = s as f64;
    let rule = &spec.class_rule;

    // Draw the class first, then geometry consistent with it; the label is
    // re-derived from the realized geometry at the end. Buckets the blob
    // range cannot express are clamped to the expressible side.
    let class = rule.sample_class(&mut rng);
    let many_blobs = if spec.n_blobs.1 < rule.blob_high_min {
        false
    } else if spec.n_blobs.0 >= rule.blob_high_min {
        true
    } else {
        class >= 2
    };
    let dense_dots = class % 2 == 1;
    // A separating gap below `blob_high_min` (mirroring the dot gap) keeps
    // the two blob-count populations visually distinct.
    let blob_range = if many_blobs {
        (rule.blob_high_min.max(spec.n_blobs.0), spec.n_blobs.1)
    } else {
        (spec.n_blobs.0, spec.n_blobs.1.min(rule.blob_high_min.saturating_sub(2).max(spec.n_blobs.0)))
    };
    let dot_total_target = if dense_dots {
        rng.gen_range(rule.dense_total.0..=rule.dense_total.1)
    } else {
        rng.gen_range(rule.sparse_total.0..=rule.sparse_total.1)
    };
    let n_blobs = rng.gen_range(blob_range.0..=blob_range.1);

    // Background texture.
    let noise = smooth_noise(s, 8, &mut rng);
    let fine = smooth_noise(s, 3, &mut rng);
    let bg_base = [0.10, 0.11, 0.16];
    let bg_amp = [0.08, 0.08, 0.10];
    let mut image = Array3::<f64>::zeros((s, s, 3));
    for y in 0..s {
        for x in 0..s {
            let n = 0.7 * noise[[y, x]] + 0.3 * fine[[y, x]];
            for c in 0..3 {
                image[[y, x, c]] = bg_base[c] + bg_amp[c] * spec.texture_scale * (n - 0.5) * 2.0;
            }
        }
    }

    // Non-overlapping blob placement; radii shrink on repeated rejection.
    let (r_lo, r_hi) = blob_radius_range(n_blobs);
    let mut blobs: Vec<Blob> = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let mut radius = sf * rng.gen_range(r_lo..r_hi);
        let mut placed = false;
        'attempts: for attempt in 0..400 {
            if attempt > 0 && attempt % 50 == 0 {
                radius *= 0.88;
            }
            let elong = rng.gen_range(1.0..1.4);
            let wobble = [
                (rng.gen_range(0.04..0.09), rng.gen_range(0.0..std::f64::consts::TAU)),
                (rng.gen_range(0.02..0.04), rng.gen_range(0.0..std::f64::consts::TAU)),
            ];
            let candidate = Blob { cy: 0.0, cx: 0.0, radius, elong, angle: 0.0, wobble };
            let bound = candidate.outer_bound();
            if 2.0 * (bound + 2.0) >= sf {
                continue;
            }
            let cy = rng.gen_range(bound + 1.0..sf - bound - 1.0);
            let cx = rng.gen_range(bound + 1.0..sf - bound - 1.0);
            for other in &blobs {
                let dist = ((cy - other.cy).powi(2) + (cx - other.cx).powi(2)).sqrt();
                if dist < bound + other.outer_bound() + 3.0 {
                    continue 'attempts;
                }
            }
            blobs.push(Blob {
                cy,
                cx,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                ..candidate
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Numeric(
                "phantom blob placement failed; lower n_blobs or raise size".into(),
            ));
        }
    }

    // Rasterize blobs.
    let mut blob_mask = Array2::<u32>::zeros((s, s));
    for (bi, blob) in blobs.iter().enumerate() {
        let fill = [
            0.34 + rng.gen_range(-0.05..0.05),
            0.48 + rng.gen_range(-0.05..0.05),
            0.30 + rng.gen_range(-0.05..0.05),
        ];
        for y in 0..s {
            for x in 0..s {
                let (d, phi) = blob.local(y as f64, x as f64);
                let boundary = blob.boundary(phi);
                if d <= boundary {
                    blob_mask[[y, x]] = (bi + 1) as u32;
                }
                let cover = smoothstep((boundary - d) / 1.2 + 0.5);
                if cover > 0.0 {
                    let inner = 1.0 - 0.25 * (d / boundary.max(1e-9)).powi(2);
                    for c in 0..3 {
                        let target = fill[c] * inner + 0.05 * (fine[[y, x]] - 0.5);
                        image[[y, x, c]] = image[[y, x, c]] * (1.0 - cover) + target * cover;
                    }
                }
            }
        }
    }

    // Dot candidate positions: concentric rings in each blob frame, kept far
    // enough inside the minimum boundary that a whole dot always fits. Dot
    // radii scale down with small blobs so every blob holds several dots.
    let mut per_blob_candidates: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(blobs.len());
    for blob in &blobs {
        let dot_r = (sf * 0.022).clamp(0.9, 2.2).min(0.25 * blob.min_boundary());
        let spacing = 2.0 * dot_r + 1.4;
        let ring_gap = spacing * 0.87;
        let r_place = blob.min_boundary() - dot_r - 0.3;
        let mut candidates = Vec::new();
        if r_place > 0.0 {
            candidates.push((0.0, 0.0, dot_r));
            let mut ring = 1usize;
            while ring as f64 * ring_gap <= r_place {
                let radius = ring as f64 * ring_gap;
                let count = (std::f64::consts::TAU * radius / spacing).floor() as usize;
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                for i in 0..count.max(1) {
                    let angle = phase + std::f64::consts::TAU * i as f64 / count.max(1) as f64;
                    candidates.push((radius * angle.sin(), radius * angle.cos(), dot_r));
                }
                ring += 1;
            }
        }
        // Shuffle candidate order.
        for i in (1..candidates.len()).rev() {
            let j = rng.gen_range(0..=i);
            candidates.swap(i, j);
        }
        per_blob_candidates.push(candidates);
    }

    // Round-robin assignment until the target is met or capacity runs out,
    // honoring the per-blob bounds.
    let mut per_blob_counts = vec![0usize; blobs.len()];
    let mut dots: Vec<(f64, f64, f64)> = Vec::new();
    let mut exhausted = false;
    while dots.len() < dot_total_target && !exhausted {
        exhausted = true;
        for (bi, candidates) in per_blob_candidates.iter_mut().enumerate() {
            if dots.len() >= dot_total_target {
                break;
            }
            if per_blob_counts[bi] >= spec.n_dots_per_blob.1 {
                continue;
            }
            if let Some((ly, lx, dot_r)) = candidates.pop() {
                let (cy, cx) = blobs[bi].to_image(ly, lx);
                dots.push((cy, cx, dot_r));
                per_blob_counts[bi] += 1;
                exhausted = false;
            }
        }
    }

    let mut dot_mask = Array2::<u32>::zeros((s, s));
    let dot_color = [0.95, 0.78, 0.22];
    for (di, &(cy, cx, dot_r)) in dots.iter().enumerate() {
        let y0 = (cy - dot_r - 2.0).floor().max(0.0) as usize;
        let y1 = (cy + dot_r + 2.0).ceil().min(sf - 1.0) as usize;
        let x0 = (cx - dot_r - 2.0).floor().max(0.0) as usize;
        let x1 = (cx + dot_r + 2.0).ceil().min(sf - 1.0) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                if d <= dot_r {
                    dot_mask[[y, x]] = (di + 1) as u32;
                }
                let cover = smoothstep((dot_r - d) / 0.8 + 0.5);
                if cover > 0.0 {
                    for c in 0..3 {
                        image[[y, x, c]] = image[[y, x, c]] * (1.0 - cover) + dot_color[c] * cover;
                    }
                }
            }
        }
    }

    let class_label = rule.classify(n_blobs, dots.len());
    let data = image.mapv(|v| F::of_f64(v.clamp(0.0, 1.0)));
    Ok(Phantom {
        image: ImageTensor::new(data, ValueRange::Unit)?,
        blobs: SegMask::new(blob_mask),
        dots: SegMask::new(dot_mask),
        class_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::connected_components;

    #[test]
    fn deterministic_given_seed_and_id() {
        let spec = PhantomSpec::default();
        let a: Phantom<f32> = generate_phantom(&spec, 5).unwrap();
        let b: Phantom<f32> = generate_phantom(&spec, 5).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.blobs.labels(), b.blobs.labels());
        assert_eq!(a.dots.labels(), b.dots.labels());
        assert_eq!(a.class_label, b.class_label);
        let c: Phantom<f32> = generate_phantom(&spec, 6).unwrap();
        assert_ne!(a.image.data(), c.image.data());
    }

    #[test]
    fn single_blob_spec_yields_one_component() {
        let spec = PhantomSpec { n_blobs: (1, 1), ..PhantomSpec::default() };
        for id in 0..5 {
            let p: Phantom<f32> = generate_phantom(&spec, id).unwrap();
            let binary = SegMask::new(p.blobs.labels().mapv(|v| (v > 0) as u32));
            let cc = connected_components(&binary);
            assert_eq!(cc.object_labels().len(), 1, "id {id}");
        }
    }

    #[test]
    fn dots_lie_inside_blobs() {
        let spec = PhantomSpec::default();
        for id in 0..10 {
            let p: Phantom<f32> = generate_phantom(&spec, id).unwrap();
            for (dot, blob) in p.dots.labels().iter().zip(p.blobs.labels().iter()) {
                if *dot > 0 {
                    assert!(*blob > 0, "dot pixel outside every blob (id {id})");
                }
            }
        }
    }

    #[test]
    fn census_covers_all_classes() {
        let spec = PhantomSpec::default();
        let mut counts = [0usize; 4];
        let n = 1000;
        for id in 0..n {
            let p: Phantom<f32> = generate_phantom(&spec, id).unwrap();
            counts[p.class_label] += 1;
        }
        for (class, &count) in counts.iter().enumerate() {
            assert!(
                count as f64 >= 0.10 * n as f64,
                "class {class} underrepresented: {count}/{n} (census {counts:?})"
            );
        }
    }

    #[test]
    fn labels_match_geometry_census_oracle() {
        // Independent re-derivation: count blob components and dot objects
        // from the masks and apply the rule.
        let spec = PhantomSpec::default();
        for id in 0..30 {
            let p: Phantom<f32> = generate_phantom(&spec, id).unwrap();
            let blob_cc = connected_components(&SegMask::new(
                p.blobs.labels().mapv(|v| (v > 0) as u32),
            ));
            let n_blobs = blob_cc.object_labels().len();
            let n_dots = p.dots.object_labels().len();
            let expect = spec.class_rule.classify(n_blobs, n_dots);
            assert_eq!(p.class_label, expect, "id {id}");
        }
    }
}
