//! Toy downstream classifier.
//!
//! A small convolutional network trained on target-domain images only; its
//! accuracy drop on the shifted domain and recovery after bias transfer is
//! the benchmark's end-to-end signal. Training aborts if the model cannot
//! reach the configured target accuracy on its own validation split, because
//! every transfer experiment downstream of it would be meaningless.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_arrays, no_grad, Var};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};
use crate::losses::domain_classification_loss;
use crate::metrics::classification_scores;
use crate::networks::image_to_batch;
use crate::nn::init::normal_param;
use crate::nn::{Adam, Conv2d, Layer, PadMode};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct DownstreamConfig {
    pub classes: usize,
    /// Square input side the classifier is built for.
    pub image_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Horizontal/vertical flips and small intensity jitter.
    pub augment: bool,
    /// Minimum validation accuracy; failing it aborts the benchmark.
    pub target_val_accuracy: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            image_size: 64,
            epochs: 50,
            lr: 7e-4,
            batch: 8,
            seed: 17,
            augment: true,
            target_val_accuracy: 0.85,
        }
    }
}

/// Three stride-2 conv stages, then a linear head over the flattened feature
/// map (position-sensitive, so object counts stay learnable).
pub struct DownstreamModel<F: Scalar> {
    convs: Vec<Conv2d<F>>,
    /// Linear head over the flattened feature map (counts, layout).
    head_weight: Var<F>,
    /// Linear head over globally pooled features (densities, color).
    gap_weight: Var<F>,
    head_bias: Var<F>,
    pub classes: usize,
    pub image_size: usize,
}

impl<F: Scalar> DownstreamModel<F> {
    fn new(classes: usize, image_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        // Full-resolution stem so few-pixel structures register before any
        // downsampling, then three stride-2 stages.
        let stem_std = (2.0f64 / (3.0 * 9.0)).sqrt();
        let mut stem = Conv2d::new(3, 16, 3, 1, 1, PadMode::Zeros, true, &mut rng);
        stem.weight = normal_param(&[16, 3, 3, 3], stem_std, &mut rng);
        convs.push(stem);
        let widths = [24usize, 48, 96];
        let mut c_in = 16usize;
        for &c_out in &widths {
            let std = (2.0 / (c_in as f64 * 16.0)).sqrt();
            let mut conv = Conv2d::new(c_in, c_out, 4, 2, 1, PadMode::Zeros, true, &mut rng);
            conv.weight = normal_param(&[c_out, c_in, 4, 4], std, &mut rng);
            convs.push(conv);
            c_in = c_out;
        }
        let feat = 96 * (image_size / 8) * (image_size / 8);
        let head_weight = normal_param(&[classes, feat], (1.0 / feat as f64).sqrt(), &mut rng);
        let gap_weight = normal_param(&[classes, 96], (1.0f64 / 96.0).sqrt(), &mut rng);
        let head_bias = Var::param(ArrayD::zeros(IxDyn(&[classes])));
        Self { convs, head_weight, gap_weight, head_bias, classes, image_size }
    }

    fn params(&self) -> Vec<Var<F>> {
        let mut out = Vec::new();
        for c in &self.convs {
            c.collect_params(&mut out);
        }
        out.push(self.head_weight.clone());
        out.push(self.gap_weight.clone());
        out.push(self.head_bias.clone());
        out
    }

    /// Logits `[classes]` for a `[1,3,H,W]` batch.
    fn logits(&self, x: &Var<F>) -> Var<F> {
        let mut y = x.clone();
        for conv in &self.convs {
            y = conv.forward(&y).relu();
        }
        let feat = y.len();
        let shape = y.shape();
        let n_spatial = (shape[2] * shape[3]) as f64;
        let flat = y.reshape(&[feat, 1]);
        let flat_logits = self
            .head_weight
            .reshape(&[self.classes, feat, 1, 1])
            .conv2d_matvec(&flat);
        let pooled = y
            .spatial_sum()
            .mul_scalar(1.0 / n_spatial)
            .reshape(&[shape[1], 1]);
        let gap_logits = self
            .gap_weight
            .reshape(&[self.classes, shape[1], 1, 1])
            .conv2d_matvec(&pooled);
        flat_logits.add(&gap_logits).add(&self.head_bias)
    }

    /// Predicted class of a unit-range image.
    pub fn predict(&self, img: &ImageTensor<F>) -> Result<usize> {
        let logits = no_grad(|| self.forward_image(img))?;
        let v = logits.value();
        let mut best = 0usize;
        for i in 1..self.classes {
            if v[[i]] > v[[best]] {
                best = i;
            }
        }
        Ok(best)
    }

    fn forward_image(&self, img: &ImageTensor<F>) -> Result<Var<F>> {
        if img.range() != ValueRange::Unit {
            return Err(Error::Contract("downstream model expects unit-range images".into()));
        }
        if img.channels() != 3 {
            return Err(Error::Channel("downstream model expects 3 channels".into()));
        }
        if img.height() != self.image_size || img.width() != self.image_size {
            return Err(Error::Dimension(format!(
                "downstream model built for {0}x{0}, got {1}x{2}",
                self.image_size,
                img.height(),
                img.width()
            )));
        }
        Ok(self.logits(&Var::constant(image_to_batch(img))))
    }

    /// Writes the frozen classifier (JSON header + little-endian payload).
    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        use std::io::Write;
        let params = self.params();
        let header = serde_json::json!({
            "magic": "BTDOWN01",
            "classes": self.classes,
            "image_size": self.image_size,
            "dtype": F::DTYPE,
            "shapes": params.iter().map(|p| p.shape()).collect::<Vec<_>>(),
        });
        let header_bytes = serde_json::to_vec(&header)?;
        if let Some(parent) = path.as_ref().parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for p in &params {
            for v in p.value().iter() {
                file.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Loads a classifier saved by [`DownstreamModel::save`].
    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        use std::io::Read;
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)?;
        let mut header_bytes = vec![0u8; u64::from_le_bytes(len_bytes) as usize];
        file.read_exact(&mut header_bytes)?;
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
        if header["magic"] != "BTDOWN01" {
            return Err(Error::SpecMismatch("not a downstream model file".into()));
        }
        if header["dtype"] != F::DTYPE {
            return Err(Error::SpecMismatch(format!(
                "downstream model dtype {} does not match requested {}",
                header["dtype"],
                F::DTYPE
            )));
        }
        let classes = header["classes"]
            .as_u64()
            .ok_or_else(|| Error::SpecMismatch("missing class count".into()))? as usize;
        let image_size = header["image_size"]
            .as_u64()
            .ok_or_else(|| Error::SpecMismatch("missing image size".into()))? as usize;
        let model = Self::new(classes, image_size, 0);
        let params = model.params();
        let shapes: Vec<Vec<usize>> = serde_json::from_value(header["shapes"].clone())?;
        if shapes.len() != params.len() {
            return Err(Error::SpecMismatch("downstream tensor count mismatch".into()));
        }
        for (p, shape) in params.iter().zip(shapes.iter()) {
            if &p.shape() != shape {
                return Err(Error::SpecMismatch("downstream tensor shape mismatch".into()));
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            file.read_exact(&mut bytes)?;
            let values: Vec<F> = bytes
                .chunks_exact(8)
                .map(|c| F::of_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            p.assign(&ArrayD::from_shape_vec(IxDyn(shape), values).unwrap());
        }
        Ok(model)
    }
}

/// Helper trait kept private: a tiny matrix-vector product expressed through
/// existing ops so gradients flow.
trait ConvMatVec<F: Scalar> {
    fn conv2d_matvec(&self, v: &Var<F>) -> Var<F>;
}

impl<F: Scalar> ConvMatVec<F> for Var<F> {
    /// `self: [K, C, 1, 1]` interpreted as a K×C matrix, `v: [C, 1]` column.
    fn conv2d_matvec(&self, v: &Var<F>) -> Var<F> {
        let shape = self.shape();
        let (k, c) = (shape[0], shape[1]);
        let x = v.reshape(&[1, c, 1, 1]);
        let w = self.reshape(&[k, c, 1, 1]);
        x.conv2d(&w, 1, 0).reshape(&[k])
    }
}

/// One of the eight dihedral variants (flips × transpose) plus a small
/// brightness jitter. Geometric only: color jitter would harden the
/// classifier against the very appearance shifts the benchmark measures.
fn augment_image<F: Scalar>(
    img: &ImageTensor<F>,
    variant: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor<F>> {
    let mut data = img.data().clone();
    if variant & 1 != 0 {
        data.invert_axis(ndarray::Axis(1));
    }
    if variant & 2 != 0 {
        data.invert_axis(ndarray::Axis(0));
    }
    if variant & 4 != 0 {
        data = data.permuted_axes([1, 0, 2]).as_standard_layout().to_owned();
    }
    let offset = F::of_f64((rng.gen::<f64>() - 0.5) * 0.02);
    let one = F::one();
    let zero = F::zero();
    data.mapv_inplace(|v| (v + offset).max(zero).min(one));
    ImageTensor::new(data, ValueRange::Unit)
}

/// Trains the classifier on labeled target-domain images; returns the frozen
/// model once the validation accuracy target is met.
pub fn train_downstream<F: Scalar>(
    train: &[(ImageTensor<F>, usize)],
    val: &[(ImageTensor<F>, usize)],
    cfg: &DownstreamConfig,
) -> Result<DownstreamModel<F>> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("downstream training needs train and val data".into()));
    }
    for (_, label) in train.iter().chain(val.iter()) {
        if *label >= cfg.classes {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                cfg.classes
            )));
        }
    }
    let model = DownstreamModel::<F>::new(cfg.classes, cfg.image_size, cfg.seed);
    let params = model.params();
    let mut opt = Adam::<F>::new(cfg.lr, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xdead_beef);

    let mut best_val = -1.0f64;
    let mut best_params: Vec<ArrayD<F>> = params.iter().map(|p| p.value()).collect();
    // Deterministic 8x dihedral expansion of the training set.
    let variants = if cfg.augment { 8usize } else { 1 };
    let mut pool: Vec<(usize, usize)> = Vec::with_capacity(train.len() * variants);
    for idx in 0..train.len() {
        for variant in 0..variants {
            pool.push((idx, variant));
        }
    }
    for epoch in 0..cfg.epochs {
        // Halve the rate twice over the budget.
        opt.set_lr(cfg.lr * 0.5f64.powi((3 * epoch / cfg.epochs.max(1)) as i32));
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch) {
            let mut loss: Option<Var<F>> = None;
            for &pick in chunk {
                let (idx, variant) = pool[pick];
                let (img, label) = &train[idx];
                let input = if cfg.augment {
                    augment_image(img, variant, &mut rng)?
                } else {
                    img.clone()
                };
                let logits = model.logits(&Var::constant(image_to_batch(&input)));
                let ce = domain_classification_loss(&logits, *label)?;
                loss = Some(match loss {
                    Some(acc) => acc.add(&ce),
                    None => ce,
                });
            }
            let loss = loss.expect("non-empty chunk").mul_scalar(1.0 / chunk.len() as f64);
            let grads = grad_arrays(&loss, &params.iter().collect::<Vec<_>>())?;
            opt.step(&params, &grads)?;
        }

        let (val_acc, _) = evaluate_split(&model, val)?;
        // >= prefers later epochs among equal validation scores.
        if val_acc >= best_val {
            best_val = val_acc;
            best_params = params.iter().map(|p| p.value()).collect();
        }
    }
    // Restore the best weights before deciding.
    for (p, best) in params.iter().zip(best_params.iter()) {
        p.assign(best);
    }
    if best_val >= cfg.target_val_accuracy {
        return Ok(model);
    }
    Err(Error::Contract(format!(
        "downstream classifier reached only {best_val:.3} validation accuracy \
         (target {:.3}); the benchmark would be uninformative",
        cfg.target_val_accuracy
    )))
}

fn evaluate_split<F: Scalar>(
    model: &DownstreamModel<F>,
    data: &[(ImageTensor<F>, usize)],
) -> Result<(f64, f64)> {
    let preds: Vec<usize> =
        data.iter().map(|(img, _)| model.predict(img)).collect::<Result<_>>()?;
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    let classes: Vec<usize> = (0..model.classes).collect();
    classification_scores(&preds, &labels, &classes)
}

/// Accuracy and macro F1 of the frozen model on labeled images.
pub fn evaluate_downstream<F: Scalar>(
    model: &DownstreamModel<F>,
    images: &[ImageTensor<F>],
    labels: &[usize],
) -> Result<(f64, f64)> {
    if images.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "images/labels length mismatch: {} vs {}",
            images.len(),
            labels.len()
        )));
    }
    let data: Vec<(ImageTensor<F>, usize)> =
        images.iter().cloned().zip(labels.iter().copied()).collect();
    evaluate_split(model, &data)
}
