//! Acceptance suite.
//!
//! Fast property criteria (1–6, 12) plus a synthetic end-to-end experiment
//! (7–11) at the 64×64 desk profile: 100 images per domain, 30 epochs, two
//! seeds. The heavy pipeline runs once in a shared fixture; each criterion
//! prints one pass/fail line (run with `--nocapture` to see them).

use std::sync::OnceLock;

use biastransfer::autodiff::{grad_arrays, gradcheck::max_relative_error, Var};
use biastransfer::colorxfer::{color_transfer, histogram_match_channel, pick_reference};
use biastransfer::image::{convert_range, ImageTensor, ValueRange};
use biastransfer::losses::{
    additional_identity_weight, cycle_loss, domain_classification_loss, gradient_penalty,
    identity_loss, lsgan_d_loss, lsgan_g_loss, ms_ssim_loss, structure_loss, wasserstein_d_loss,
    ExtraMode,
};
use biastransfer::metrics::{
    dice_object, dice_pixel, extract_features, frechet_distance, ms_ssim, ssim,
    structure_similarity, FeatureEmbedding, MetricReport, SegMask, Split, SsimConfig,
    DEFAULT_EXTRACTOR_ID,
};
use biastransfer::networks::checkpoint::load_checkpoint;
use biastransfer::networks::{
    make_discriminator, make_generator, Architecture, DiscriminatorSpec, GeneratorSpec,
};
use biastransfer::synth::{
    evaluate_downstream, make_benchmark, train_downstream, DomainBias, DownstreamConfig,
    DownstreamModel, PhantomSpec,
};
use biastransfer::training::{
    lr_schedule, select_best, train_cycle_pair, transform_full_resolution, DomainSet,
    EpochRecord, RunManifest, RunStatus, TrainConfig,
};
use biastransfer::{Image32, Result};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(criterion: usize, what: &str) {
    println!("[PASS] criterion {criterion}: {what}");
}

fn random_image(side: usize, channels: usize, seed: u64) -> ImageTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_simple_fn((side, side, channels), || rng.gen::<f64>());
    ImageTensor::new(data, ValueRange::Unit).unwrap()
}

// --------------------------------------------------------------------------
// Criterion 1: pyramid round trip on 200 random images.
// --------------------------------------------------------------------------

#[test]
fn criterion_01_pyramid_round_trip() {
    use biastransfer::pyramid::{build_pyramid, collapse_pyramid};
    let mut worst = 0f32;
    let mut count = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9141);
    let plan: [(usize, usize); 3] = [(256, 120), (512, 50), (1024, 30)];
    for (side, n) in plan {
        for _ in 0..n {
            let channels = if rng.gen::<bool>() { 3 } else { 1 };
            let data =
                Array3::from_shape_simple_fn((side, side, channels), || rng.gen::<f32>());
            let img = ImageTensor::new(data, ValueRange::Unit).unwrap();
            let pyramid = build_pyramid(&img, 256).unwrap();
            let rec = collapse_pyramid(&pyramid, pyramid.base()).unwrap();
            worst = worst.max(img.max_abs_diff(&rec).unwrap());
            count += 1;
        }
    }
    assert_eq!(count, 200);
    assert!(worst <= 1e-5, "pyramid round-trip error {worst}");
    pass(1, &format!("pyramid round trip over {count} images, max error {worst:.2e} <= 1e-5"));
}

// --------------------------------------------------------------------------
// Criterion 2: metric identities.
// --------------------------------------------------------------------------

#[test]
fn criterion_02_metric_identities() {
    let cfg = SsimConfig::default();

    let x = random_image(64, 3, 1);
    let s: f64 = ssim(&x, &x, &cfg).unwrap();
    assert!((s - 1.0).abs() < 1e-9, "ssim(x,x) = {s}");

    let big = random_image(256, 1, 2);
    let ms: f64 = ms_ssim(&big, &big, &cfg).unwrap();
    assert!((ms - 1.0).abs() < 1e-6, "ms_ssim(x,x) = {ms}");

    let affine = ImageTensor::new(x.data().mapv(|v| 0.62 * v + 0.19), ValueRange::Unit).unwrap();
    let st: f64 = structure_similarity(&x, &affine, &cfg).unwrap();
    assert!((st - 1.0).abs() < 1e-6, "structure under affine map = {st}");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let feats = Array2::from_shape_simple_fn((40, 16), || rng.gen::<f64>());
    let emb = FeatureEmbedding::new("test", feats).unwrap();
    let d: f64 = frechet_distance(&emb, &emb).unwrap();
    assert!(d <= 1e-4, "frechet_distance(A,A) = {d}");

    // Exhaustive 3x3 dice against direct popcount arithmetic.
    for abits in 0u32..512 {
        for bbits in 0u32..512 {
            let a = SegMask::new(Array2::from_shape_fn((3, 3), |(y, x)| (abits >> (y * 3 + x)) & 1));
            let b = SegMask::new(Array2::from_shape_fn((3, 3), |(y, x)| (bbits >> (y * 3 + x)) & 1));
            let na = abits.count_ones() as f64;
            let nb = bbits.count_ones() as f64;
            let ni = (abits & bbits).count_ones() as f64;
            let expect = if na + nb == 0.0 { 1.0 } else { 2.0 * ni / (na + nb) };
            assert_eq!(dice_pixel(&a, &b).unwrap(), expect);
        }
    }
    // Object dice identities on the exhaustive corner cases.
    let empty = SegMask::new(Array2::zeros((3, 3)));
    assert_eq!(dice_object(&empty, &empty).unwrap(), 1.0);

    pass(2, "metric identities (ssim, ms_ssim, structure invariance, fid self-distance, exhaustive dice)");
}

// --------------------------------------------------------------------------
// Criterion 3: loss gradient checks on 4x4 tensors.
// --------------------------------------------------------------------------

#[test]
fn criterion_03_loss_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rand4 = |rng: &mut ChaCha8Rng| {
        Var::param(ArrayD::from_shape_simple_fn(IxDyn(&[1, 1, 4, 4]), || {
            rng.gen::<f64>() * 1.6 - 0.8
        }))
    };
    let x = rand4(&mut rng);
    let y = rand4(&mut rng);
    let cfg = SsimConfig { window: 3, ..SsimConfig::default() };

    let mut results: Vec<(String, f64)> = Vec::new();
    {
        let checks: Vec<(&str, Box<dyn Fn() -> Var<f64>>)> = vec![
            ("cycle", Box::new(|| cycle_loss(&x, &y).unwrap())),
            ("identity", Box::new(|| identity_loss(&x, &y).unwrap())),
            ("adversarial_g", Box::new(|| lsgan_g_loss(&y))),
            ("adversarial_d", Box::new(|| lsgan_d_loss(&x, &y))),
            ("wasserstein_d", Box::new(|| wasserstein_d_loss(&x, &y))),
            ("ms_ssim", Box::new(|| ms_ssim_loss(&x, &y, &cfg, 1).unwrap())),
            ("structure", Box::new(|| structure_loss(&x, &y, &cfg).unwrap())),
        ];
        for (name, f) in checks {
            let loss = f();
            let analytic = grad_arrays(&loss, &[&x, &y]).unwrap();
            let err = max_relative_error(&*f, &[&x, &y], &analytic, 1e-5);
            assert!(err < 1e-3, "{name} gradient check failed: {err}");
            results.push((name.to_string(), err));
        }
    }

    // Domain cross-entropy over a 4-logit vector.
    let logits = Var::param(ArrayD::from_shape_vec(IxDyn(&[4]), vec![0.3, -0.9, 1.4, 0.2]).unwrap());
    let ce = || domain_classification_loss(&logits, 2).unwrap();
    let analytic = grad_arrays(&ce(), &[&logits]).unwrap();
    let err = max_relative_error(&ce, &[&logits], &analytic, 1e-5);
    assert!(err < 1e-3, "domain CE gradient check failed: {err}");
    results.push(("domain_ce".into(), err));

    // Gradient penalty through a small critic: second-order path.
    let w = Var::param(ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.8, -0.4]).unwrap());
    let real = Var::constant(ArrayD::from_shape_simple_fn(IxDyn(&[1, 1, 4, 4]), || 0.4));
    let fake = Var::constant(ArrayD::from_shape_simple_fn(IxDyn(&[1, 1, 4, 4]), || 0.6));
    let gp = || {
        let w1 = w.narrow(0, 0, 1).reshape(&[]).broadcast_scalar(&[1, 1, 4, 4]);
        let w2 = w.narrow(0, 1, 1).reshape(&[]).broadcast_scalar(&[1, 1, 4, 4]);
        let critic = move |z: &Var<f64>| z.mul(&w1).add(&z.mul(z).mul(&w2));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        gradient_penalty(critic, &real, &fake, &mut rng).unwrap()
    };
    let analytic = grad_arrays(&gp(), &[&w]).unwrap();
    let err = max_relative_error(&gp, &[&w], &analytic, 1e-5);
    assert!(err < 1e-3, "gradient penalty gradient check failed: {err}");
    results.push(("gradient_penalty".into(), err));

    let worst = results.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    pass(3, &format!("{} loss gradient checks vs central differences, worst rel err {worst:.2e} < 1e-3", results.len()));
}

// --------------------------------------------------------------------------
// Criterion 4: schedules.
// --------------------------------------------------------------------------

#[test]
fn criterion_04_schedules() {
    let cfg = TrainConfig::full(Architecture::Cyclegan);
    for epoch in 0..100 {
        assert_eq!(lr_schedule(epoch, &cfg).unwrap(), 0.0005, "epoch {epoch}");
    }
    assert!((lr_schedule(150, &cfg).unwrap() - 0.00025).abs() < 1e-15);
    assert_eq!(lr_schedule(200, &cfg).unwrap(), 0.0);

    assert_eq!(additional_identity_weight(0, 20, 5.0), 5.0);
    assert_eq!(additional_identity_weight(10, 20, 5.0), 2.5);
    for epoch in 20..40 {
        assert_eq!(additional_identity_weight(epoch, 20, 5.0), 0.0);
    }
    pass(4, "lr schedule 0.0005/0.00025/0 at epochs 0-99/150/200; additional identity 5.0/2.5/0.0 at 0/10/>=20");
}

// --------------------------------------------------------------------------
// Criterion 5: architecture contracts.
// --------------------------------------------------------------------------

#[test]
fn criterion_05_architecture_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x256 = Var::<f32>::constant(ArrayD::from_shape_simple_fn(IxDyn(&[1, 3, 256, 256]), || {
        rng.gen::<f32>() * 2.0 - 1.0
    }));

    let patch = make_discriminator::<f32>(&DiscriminatorSpec::patch(256, 16), 1).unwrap();
    let map = patch.patch_map(&x256);
    assert_eq!(map.shape(), vec![1, 1, 16, 16], "patch grid");

    let dual = make_discriminator::<f32>(&DiscriminatorSpec::dualhead(256, 16, 3), 2).unwrap();
    let (patches, logits) = dual.dual_forward(&x256).unwrap();
    assert_eq!(patches.shape(), vec![1, 1, 16, 16]);
    assert_eq!(logits.shape(), vec![1, 3]);

    let gen = make_generator::<f32>(&GeneratorSpec::conditional(64, 16, 2, 2), 3).unwrap();
    let x64 = Var::<f32>::constant(ArrayD::from_shape_simple_fn(IxDyn(&[1, 3, 64, 64]), || {
        rng.gen::<f32>() * 2.0 - 1.0
    }));
    let y0 = gen.forward(&x64, Some(0)).unwrap();
    let y1 = gen.forward(&x64, Some(1)).unwrap();
    let diff = (&y0.value() - &y1.value()).iter().fold(0f32, |m, v| m.max(v.abs()));
    assert!(diff > 1e-4, "domain label does not reach the output (diff {diff})");

    pass(5, "patch discriminator emits 16x16 map at 256; dualhead emits patch map + domain logits; conditional generator depends on its label");
}

// --------------------------------------------------------------------------
// Criterion 6: color-transfer baseline properties.
// --------------------------------------------------------------------------

#[test]
fn criterion_06_baseline_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let src_img = {
        let data = Array3::from_shape_simple_fn((48, 48, 3), || 0.05 + 0.9 * rng.gen::<f64>());
        ImageTensor::new(data, ValueRange::Unit).unwrap()
    };
    let ref_img = {
        let data = Array3::from_shape_fn((48, 48, 3), |(y, x, c)| {
            let v = 0.1 + 0.7 * ((y * 48 + x) as f64 / (48.0 * 48.0));
            (v + 0.15 * (c == 0) as usize as f64).min(1.0)
        });
        ImageTensor::new(data, ValueRange::Unit).unwrap()
    };

    // Determinism.
    let a = color_transfer(&src_img, &ref_img).unwrap();
    let b = color_transfer(&src_img, &ref_img).unwrap();
    assert_eq!(a.data(), b.data(), "color transfer not deterministic");

    // Rank preservation and KS bound per channel in the decorrelated space.
    let src = Array2::from_shape_simple_fn((24, 24), || rng.gen::<f64>());
    let reference = Array2::from_shape_simple_fn((32, 32), || 0.3 + 0.4 * rng.gen::<f64>());
    let matched = histogram_match_channel(&src, &reference).unwrap();
    let sf: Vec<f64> = src.iter().copied().collect();
    let mf: Vec<f64> = matched.iter().copied().collect();
    for i in 0..sf.len() {
        for j in 0..sf.len() {
            if sf[i] < sf[j] {
                assert!(mf[i] <= mf[j], "rank order violated");
            }
        }
    }
    let ks = ks_distance(&mf, &reference.iter().copied().collect::<Vec<_>>());
    let bound = 2.0 / (src.len().min(reference.len()) as f64) + 1e-3;
    assert!(ks <= bound, "KS distance {ks} above bound {bound}");

    pass(6, &format!("baseline deterministic, rank-preserving, KS distance {ks:.4} within bound {bound:.4}"));
}

fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let grid: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let cdf = |sorted: &[f64], v: f64| -> f64 {
        sorted.partition_point(|&x| x <= v) as f64 / sorted.len() as f64
    };
    grid.iter().map(|&v| (cdf(&a, v) - cdf(&b, v)).abs()).fold(0.0, f64::max)
}

// --------------------------------------------------------------------------
// End-to-end fixture shared by criteria 7-11.
// --------------------------------------------------------------------------

struct EndToEnd {
    fid_raw: f64,
    fid_transformed: f64,
    ssim_mean: f64,
    tar_test_acc: f64,
    raw_new_acc: f64,
    gan_acc: f64,
    baseline_acc: f64,
    collapse_fired: bool,
    runs: Vec<(RunManifest, MetricReport)>,
    selected: (u64, usize),
}

static FIXTURE: OnceLock<EndToEnd> = OnceLock::new();

fn fixture() -> &'static EndToEnd {
    FIXTURE.get_or_init(|| build_end_to_end().expect("end-to-end pipeline failed"))
}

fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk(Architecture::UnetCyclegan);
    cfg.extra.mode = ExtraMode::Combined;
    cfg.seeds = vec![1, 2];
    cfg
}

fn images_of(samples: Vec<&biastransfer::synth::Sample<f32>>) -> Vec<Image32> {
    samples.into_iter().map(|s| s.image.clone()).collect()
}

fn labels_of(samples: Vec<&biastransfer::synth::Sample<f32>>) -> Vec<usize> {
    samples.into_iter().map(|s| s.class_label).collect()
}

fn mean_ssim(originals: &[Image32], transformed: &[Image32]) -> Result<f64> {
    let cfg = SsimConfig::default();
    let mut total = 0.0;
    for (o, t) in originals.iter().zip(transformed.iter()) {
        total += ssim(&o.to_f64(), &t.to_f64(), &cfg)?;
    }
    Ok(total / originals.len() as f64)
}

fn fid_between(a: &[Image32], b: &[Image32]) -> Result<f64> {
    let fa = extract_features(a, DEFAULT_EXTRACTOR_ID)?;
    let fb = extract_features(b, DEFAULT_EXTRACTOR_ID)?;
    Ok(frechet_distance(&fa, &fb)? as f64)
}

fn build_end_to_end() -> Result<EndToEnd> {
    let started = std::time::Instant::now();
    let spec = PhantomSpec { size: 64, seed: 7, ..PhantomSpec::default() };
    let bench = make_benchmark::<f32>(100, &DomainBias::tar_preset(), &DomainBias::new_preset(), &spec)?;
    eprintln!("[e2e] benchmark ready ({:.0?})", started.elapsed());

    // Frozen downstream classifier on TAR only.
    let train_data: Vec<_> = bench
        .domain_split("TAR", "train")?
        .into_iter()
        .map(|s| (s.image.clone(), s.class_label))
        .collect();
    let val_data: Vec<_> = bench
        .domain_split("TAR", "val")?
        .into_iter()
        .map(|s| (s.image.clone(), s.class_label))
        .collect();
    let downstream_cfg =
        DownstreamConfig { image_size: 64, seed: spec.seed ^ 0xd05e, ..DownstreamConfig::default() };
    let downstream: DownstreamModel<f32> = train_downstream(&train_data, &val_data, &downstream_cfg)?;
    eprintln!("[e2e] downstream classifier ready ({:.0?})", started.elapsed());

    let tar_test = images_of(bench.domain_split("TAR", "test")?);
    let tar_test_labels = labels_of(bench.domain_split("TAR", "test")?);
    let new_test = images_of(bench.domain_split("NEW", "test")?);
    let new_test_labels = labels_of(bench.domain_split("NEW", "test")?);
    let (tar_test_acc, _) = evaluate_downstream(&downstream, &tar_test, &tar_test_labels)?;
    let (raw_new_acc, _) = evaluate_downstream(&downstream, &new_test, &new_test_labels)?;

    // Two seeded training runs of the strongest variant, in parallel.
    let cfg = desk_config();
    let new_domain = DomainSet {
        train: images_of(bench.domain_split("NEW", "train")?),
        val: images_of(bench.domain_split("NEW", "val")?),
    };
    let tar_domain = DomainSet {
        train: images_of(bench.domain_split("TAR", "train")?),
        val: images_of(bench.domain_split("TAR", "val")?),
    };
    let out_root = std::env::temp_dir().join("biastransfer-acceptance");
    let _ = std::fs::remove_dir_all(&out_root);
    let manifests: Vec<RunManifest> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let cfg = cfg.clone();
                let new_domain = &new_domain;
                let tar_domain = &tar_domain;
                let dir = out_root.join(format!("seed{seed:02}"));
                scope.spawn(move || train_cycle_pair(new_domain, tar_domain, &cfg, seed, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread")).collect::<Result<_>>()
    })?;
    eprintln!("[e2e] {} training runs done ({:.0?})", manifests.len(), started.elapsed());

    // Validation metric reports per run (selection sees only these).
    let new_val = images_of(bench.domain_split("NEW", "val")?);
    let tar_val = images_of(bench.domain_split("TAR", "val")?);
    let mut runs: Vec<(RunManifest, MetricReport)> = Vec::new();
    for manifest in manifests {
        let ckpt = out_root.join(format!("seed{:02}", manifest.seed)).join("best.ckpt");
        let (bundle, _) = load_checkpoint::<f32, _>(&ckpt)?;
        let transformed: Vec<Image32> = new_val
            .iter()
            .map(|img| transform_full_resolution(&bundle.generators[0], None, img))
            .collect::<Result<_>>()?;
        let report = MetricReport {
            split: Split::Val,
            ssim_mean: mean_ssim(&new_val, &transformed)?,
            ssim_std: 0.0,
            ms_ssim_mean: None,
            fid: fid_between(&transformed, &tar_val)?,
            fid_original: Some(fid_between(&new_val, &tar_val)?),
            dice_glom_pix: None,
            dice_podo_pix: None,
            dice_podo_obj: None,
            accuracy: None,
            macro_f1: None,
        };
        runs.push((manifest, report));
    }
    let selected = select_best(&runs)?;
    eprintln!("[e2e] selected seed {} epoch {} ({:.0?})", selected.0, selected.1, started.elapsed());

    // Test-split evaluation of the selected run only. The feature distance
    // is estimated over the full domain pools (100 images per side): at the
    // test split's 11-15 samples the covariance-estimation floor of the
    // distance dominates the signal.
    let ckpt = out_root.join(format!("seed{:02}", selected.0)).join("best.ckpt");
    let (bundle, _) = load_checkpoint::<f32, _>(&ckpt)?;
    let transformed_test: Vec<Image32> = new_test
        .iter()
        .map(|img| transform_full_resolution(&bundle.generators[0], None, img))
        .collect::<Result<_>>()?;
    let new_all: Vec<Image32> = bench.new.iter().map(|s| s.image.clone()).collect();
    let tar_all: Vec<Image32> = bench.tar.iter().map(|s| s.image.clone()).collect();
    let transformed_all: Vec<Image32> = new_all
        .iter()
        .map(|img| transform_full_resolution(&bundle.generators[0], None, img))
        .collect::<Result<_>>()?;
    let fid_transformed = fid_between(&transformed_all, &tar_all)?;
    let fid_raw = fid_between(&new_all, &tar_all)?;
    let ssim_mean = mean_ssim(&new_test, &transformed_test)?;
    let (gan_acc, _) = evaluate_downstream(&downstream, &transformed_test, &new_test_labels)?;

    // Color-transfer baseline on the same test set.
    let tar_train = images_of(bench.domain_split("TAR", "train")?);
    let ids: Vec<String> = (0..tar_train.len()).map(|i| format!("tar{i:03}")).collect();
    let reference_pick = pick_reference(&ids, 41)?;
    let ref_idx = ids.iter().position(|i| i == &reference_pick.reference_image_id).unwrap();
    let baseline_test: Vec<Image32> = new_test
        .iter()
        .map(|img| color_transfer(img, &tar_train[ref_idx]))
        .collect::<Result<_>>()?;
    let (baseline_acc, _) = evaluate_downstream(&downstream, &baseline_test, &new_test_labels)?;
    eprintln!("[e2e] test evaluation done ({:.0?})", started.elapsed());

    // Deliberately destabilized run: vanilla cycle model, structure loss,
    // adversarial weight x10, aggressive rate, tiny data, no replay buffer.
    let mut unstable_cfg = TrainConfig::desk(Architecture::Cyclegan);
    unstable_cfg.extra.mode = ExtraMode::Structure;
    unstable_cfg.adv_weight_multiplier = 10.0;
    unstable_cfg.epochs = 16;
    unstable_cfg.lr_steady_epochs = 16;
    unstable_cfg.lr_initial = 1e-2;
    unstable_cfg.use_replay_buffer = false;
    unstable_cfg.seeds = vec![1];
    let small = |d: &DomainSet<f32>| DomainSet {
        train: d.train.iter().take(12).cloned().collect(),
        val: d.val.iter().take(8).cloned().collect(),
    };
    let unstable_manifest = train_cycle_pair(
        &small(&new_domain),
        &small(&tar_domain),
        &unstable_cfg,
        1,
        &out_root.join("destabilized"),
    )?;
    let collapse_fired = unstable_manifest.collapse_flagged;
    eprintln!(
        "[e2e] destabilized run done: collapse flagged = {}, status = {:?} ({:.0?})",
        unstable_manifest.collapse_flagged,
        unstable_manifest.status,
        started.elapsed()
    );

    Ok(EndToEnd {
        fid_raw,
        fid_transformed,
        ssim_mean,
        tar_test_acc,
        raw_new_acc,
        gan_acc,
        baseline_acc,
        collapse_fired,
        runs,
        selected,
    })
}

// --------------------------------------------------------------------------
// Criteria 7-11: synthetic end-to-end.
// --------------------------------------------------------------------------

#[test]
fn criterion_07_domain_imitation_halves_fid() {
    let e2e = fixture();
    assert!(
        e2e.fid_transformed <= 0.5 * e2e.fid_raw,
        "FID(transformed, TAR) = {:.4} not <= 0.5 x FID(raw, TAR) = 0.5 x {:.4}",
        e2e.fid_transformed,
        e2e.fid_raw
    );
    pass(7, &format!(
        "domain imitation: FID {:.4} <= 0.5 x raw FID {:.4}",
        e2e.fid_transformed, e2e.fid_raw
    ));
}

#[test]
fn criterion_08_content_preservation_ssim() {
    let e2e = fixture();
    assert!(
        e2e.ssim_mean >= 0.70,
        "mean SSIM(original, transformed) = {:.4} below 0.70",
        e2e.ssim_mean
    );
    pass(8, &format!("content preservation: mean SSIM {:.4} >= 0.70", e2e.ssim_mean));
}

#[test]
fn criterion_09_downstream_recovery() {
    let e2e = fixture();
    let delta = e2e.gan_acc - e2e.raw_new_acc;
    assert!(
        delta >= 0.10,
        "classifier delta {:.3} (raw {:.3} -> transformed {:.3}, TAR reference {:.3}) below +0.10",
        delta,
        e2e.raw_new_acc,
        e2e.gan_acc,
        e2e.tar_test_acc
    );
    pass(9, &format!(
        "downstream recovery: accuracy {:.3} -> {:.3} (+{:.3} >= 0.10; TAR reference {:.3})",
        e2e.raw_new_acc, e2e.gan_acc, delta, e2e.tar_test_acc
    ));
}

#[test]
fn criterion_10_baseline_inferiority() {
    let e2e = fixture();
    let gan_delta = e2e.gan_acc - e2e.raw_new_acc;
    let baseline_delta = e2e.baseline_acc - e2e.raw_new_acc;
    assert!(
        baseline_delta < gan_delta,
        "baseline delta {baseline_delta:.3} not below best-variant delta {gan_delta:.3}"
    );
    pass(10, &format!(
        "baseline inferiority: color-transfer delta {:.3} < model delta {:.3}",
        baseline_delta, gan_delta
    ));
}

#[test]
fn criterion_11_mode_collapse_detection_fires() {
    let e2e = fixture();
    assert!(
        e2e.collapse_fired,
        "destabilized run (structure loss, adversarial weight x10) did not trip the collapse detector"
    );
    pass(11, "mode-collapse detector fired on the deliberately destabilized run");
}

// --------------------------------------------------------------------------
// Criterion 12: selection protocol.
// --------------------------------------------------------------------------

#[test]
fn criterion_12_selection_protocol() {
    // (a) Guard: test-split reports are rejected outright.
    let manifest = RunManifest {
        architecture: Architecture::Cyclegan,
        extra_mode: ExtraMode::None,
        seed: 1,
        config_hash: "h".into(),
        effective_msssim_scales: 3,
        replay_buffer: true,
        epochs: vec![EpochRecord {
            epoch: 0,
            lr: 1e-4,
            generator_loss: 1.0,
            discriminator_loss: 1.0,
            val_generator_loss: 0.4,
            collapse_std: 1.0,
            collapse_flagged: false,
        }],
        selected_epoch: Some(0),
        best_val_loss: Some(0.4),
        checkpoint: None,
        collapse_flagged: false,
        status: RunStatus::Completed,
        metric_report_ids: vec![],
    };
    let test_report = MetricReport {
        split: Split::Test,
        ssim_mean: 0.9,
        ssim_std: 0.0,
        ms_ssim_mean: None,
        fid: 0.1,
        fid_original: None,
        dice_glom_pix: None,
        dice_podo_pix: None,
        dice_podo_obj: None,
        accuracy: None,
        macro_f1: None,
    };
    assert!(
        select_best(&[(manifest, test_report)]).is_err(),
        "select_best accepted a test-split report"
    );

    // (b) On the real runs: the selected epoch is the argmin of the recorded
    // validation losses, and selection points at one of the supplied seeds.
    let e2e = fixture();
    for (manifest, _) in &e2e.runs {
        let argmin = manifest
            .epochs
            .iter()
            .min_by(|a, b| a.val_generator_loss.partial_cmp(&b.val_generator_loss).unwrap())
            .unwrap()
            .epoch;
        assert_eq!(manifest.selected_epoch, Some(argmin), "seed {}", manifest.seed);
    }
    let (seed, epoch) = e2e.selected;
    let chosen = e2e.runs.iter().find(|(m, _)| m.seed == seed).expect("selected seed exists");
    assert_eq!(chosen.0.selected_epoch, Some(epoch));

    pass(12, "selection returns the argmin-validation-loss epoch and refuses test-split metrics");
}
