//! Generator and discriminator builders.
//!
//! Three generators share one forward contract (symmetric-range image in,
//! symmetric-range image out, same spatial size):
//!
//! - `resnet`: c7s1 head, two stride-2 downsamplings, residual blocks at the
//!   bottleneck, two transposed-conv upsamplings, c7s1 tail with tanh.
//! - `unet`: stride-2 encoder/decoder with skip connections at every
//!   resolution, so fine detail bypasses the bottleneck.
//! - `conditional`: the resnet body with a one-hot target-domain label
//!   broadcast to spatial planes and concatenated to the input channels.
//!
//! Discriminators downsample by 16 in four stride-2 stages so a 256×256
//! input is judged as a 16×16 grid of overlapping patches. The dual-head
//! variant adds a second output with domain logits and runs without
//! normalization so it can be used with a gradient penalty.

pub mod checkpoint;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Var};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};
use crate::nn::{Conv2d, ConvTranspose2d, InstanceNorm2d, Layer, PadMode};
use crate::scalar::Scalar;

const LEAKY_SLOPE: f64 = 0.2;
/// Discriminators downsample 2^4 = 16×: a 256 input yields a 16×16 patch map.
const DISC_DOWN_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Resnet,
    Unet,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Cyclegan,
    UnetCyclegan,
    Fpg,
}

impl Architecture {
    pub fn generator_kind(self) -> GeneratorKind {
        match self {
            Architecture::Cyclegan => GeneratorKind::Resnet,
            Architecture::UnetCyclegan => GeneratorKind::Unet,
            Architecture::Fpg => GeneratorKind::Conditional,
        }
    }

    pub fn is_cycle_variant(self) -> bool {
        matches!(self, Architecture::Cyclegan | Architecture::UnetCyclegan)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Cyclegan => write!(f, "cyclegan"),
            Architecture::UnetCyclegan => write!(f, "unet_cyclegan"),
            Architecture::Fpg => write!(f, "fpg"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclegan" => Ok(Architecture::Cyclegan),
            "unet_cyclegan" => Ok(Architecture::UnetCyclegan),
            "fpg" => Ok(Architecture::Fpg),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Square input/output side the generator is built for.
    pub image_size: usize,
    pub base_width: usize,
    /// Residual blocks (resnet and conditional kinds).
    pub n_resblocks: usize,
    /// Downsampling stages: 2 for resnet kinds, >= 4 for unet.
    pub n_down: usize,
    /// Number of domains (conditional kind only).
    pub num_domains: Option<usize>,
}

impl GeneratorSpec {
    pub fn resnet(image_size: usize, base_width: usize, n_resblocks: usize) -> Self {
        Self {
            kind: GeneratorKind::Resnet,
            image_size,
            base_width,
            n_resblocks,
            n_down: 2,
            num_domains: None,
        }
    }

    pub fn unet(image_size: usize, base_width: usize, n_down: usize) -> Self {
        Self {
            kind: GeneratorKind::Unet,
            image_size,
            base_width,
            n_resblocks: 0,
            n_down,
            num_domains: None,
        }
    }

    pub fn conditional(
        image_size: usize,
        base_width: usize,
        n_resblocks: usize,
        num_domains: usize,
    ) -> Self {
        Self {
            kind: GeneratorKind::Conditional,
            image_size,
            base_width,
            n_resblocks,
            n_down: 2,
            num_domains: Some(num_domains),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("generator base_width must be positive".into()));
        }
        match self.kind {
            GeneratorKind::Resnet | GeneratorKind::Conditional => {
                if self.n_down != 2 {
                    return Err(Error::Config("resnet generators use exactly 2 downsamplings".into()));
                }
                if self.n_resblocks == 0 {
                    return Err(Error::Config(
                        "resnet generators need at least one residual block".into(),
                    ));
                }
            }
            GeneratorKind::Unet => {
                if self.n_down < 4 {
                    return Err(Error::Config("unet generators need n_down >= 4".into()));
                }
            }
        }
        if self.kind == GeneratorKind::Conditional {
            match self.num_domains {
                Some(d) if d >= 2 => {}
                _ => {
                    return Err(Error::Config(
                        "conditional generator requires num_domains >= 2".into(),
                    ))
                }
            }
        } else if self.num_domains.is_some() {
            return Err(Error::Config("num_domains is only valid for the conditional kind".into()));
        }
        if self.image_size % (1 << self.n_down) != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, self.n_down
            )));
        }
        if self.image_size >> self.n_down < 2 {
            return Err(Error::Config(format!(
                "image size {} too small for {} downsamplings",
                self.image_size, self.n_down
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    Patch,
    Dualhead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub kind: DiscriminatorKind,
    pub image_size: usize,
    pub base_width: usize,
    pub num_domains: Option<usize>,
}

impl DiscriminatorSpec {
    pub fn patch(image_size: usize, base_width: usize) -> Self {
        Self { kind: DiscriminatorKind::Patch, image_size, base_width, num_domains: None }
    }

    pub fn dualhead(image_size: usize, base_width: usize, num_domains: usize) -> Self {
        Self {
            kind: DiscriminatorKind::Dualhead,
            image_size,
            base_width,
            num_domains: Some(num_domains),
        }
    }

    /// Patch-map side: 16 for a 256×256 input.
    pub fn patch_grid(&self) -> usize {
        self.image_size >> DISC_DOWN_STAGES
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size % (1 << DISC_DOWN_STAGES) != 0 || self.patch_grid() < 2 {
            return Err(Error::Config(format!(
                "discriminator input {} incompatible with {} stride-2 stages",
                self.image_size, DISC_DOWN_STAGES
            )));
        }
        match self.kind {
            DiscriminatorKind::Patch => {
                if self.num_domains.is_some() {
                    return Err(Error::Config("patch discriminator takes no num_domains".into()));
                }
            }
            DiscriminatorKind::Dualhead => {
                if self.num_domains.map_or(true, |d| d < 2) {
                    return Err(Error::Config(
                        "dualhead discriminator needs num_domains >= 2".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn width_at(base: usize, stage: usize) -> usize {
    (base << stage).min(base * 8)
}

struct ConvNormRelu<F: Scalar> {
    conv: Conv2d<F>,
    norm: Option<InstanceNorm2d>,
}

impl<F: Scalar> ConvNormRelu<F> {
    fn forward(&self, x: &Var<F>) -> Var<F> {
        let y = self.conv.forward(x);
        let y = match &self.norm {
            Some(n) => n.forward(&y),
            None => y,
        };
        y.relu()
    }
}

struct ResBlock<F: Scalar> {
    conv1: Conv2d<F>,
    conv2: Conv2d<F>,
    norm: InstanceNorm2d,
}

impl<F: Scalar> ResBlock<F> {
    fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(width, width, 3, 1, 1, PadMode::Reflect, false, rng),
            conv2: Conv2d::new(width, width, 3, 1, 1, PadMode::Reflect, false, rng),
            norm: InstanceNorm2d::default(),
        }
    }

    fn forward(&self, x: &Var<F>) -> Var<F> {
        let y = self.norm.forward(&self.conv1.forward(x)).relu();
        let y = self.norm.forward(&self.conv2.forward(&y));
        x.add(&y)
    }
}

impl<F: Scalar> Layer<F> for ResBlock<F> {
    fn collect_params(&self, out: &mut Vec<Var<F>>) {
        self.conv1.collect_params(out);
        self.conv2.collect_params(out);
    }
}

struct ResnetCore<F: Scalar> {
    head: ConvNormRelu<F>,
    downs: Vec<ConvNormRelu<F>>,
    blocks: Vec<ResBlock<F>>,
    ups: Vec<ConvTranspose2d<F>>,
    norm: InstanceNorm2d,
    tail: Conv2d<F>,
}

impl<F: Scalar> ResnetCore<F> {
    fn new(in_channels: usize, base: usize, n_blocks: usize, rng: &mut ChaCha8Rng) -> Self {
        // The head pads with zeros when label planes are concatenated
        // (in_channels > 3): under reflect padding a constant label plane
        // convolves to an exactly constant map, which instance norm removes —
        // zero padding breaks the constancy at the borders so the label
        // survives normalization.
        let head_pad = if in_channels > 3 { PadMode::Zeros } else { PadMode::Reflect };
        let head = ConvNormRelu {
            conv: Conv2d::new(in_channels, base, 7, 1, 3, head_pad, false, rng),
            norm: Some(InstanceNorm2d::default()),
        };
        // Stride-2 stages use kernel 4 so the geometry divides exactly.
        let downs = (0..2)
            .map(|i| ConvNormRelu {
                conv: Conv2d::new(base << i, base << (i + 1), 4, 2, 1, PadMode::Zeros, false, rng),
                norm: Some(InstanceNorm2d::default()),
            })
            .collect();
        let blocks = (0..n_blocks).map(|_| ResBlock::new(base * 4, rng)).collect();
        let ups = (0..2)
            .map(|i| ConvTranspose2d::new(base << (2 - i), base << (1 - i), 4, 2, 1, false, rng))
            .collect();
        let tail = Conv2d::new(base, 3, 7, 1, 3, PadMode::Reflect, true, rng);
        Self { head, downs, blocks, ups, norm: InstanceNorm2d::default(), tail }
    }

    fn forward(&self, x: &Var<F>) -> Var<F> {
        let mut y = self.head.forward(x);
        for down in &self.downs {
            y = down.forward(&y);
        }
        for block in &self.blocks {
            y = block.forward(&y);
        }
        for up in &self.ups {
            y = self.norm.forward(&up.forward(&y)).relu();
        }
        self.tail.forward(&y).tanh()
    }
}

impl<F: Scalar> Layer<F> for ResnetCore<F> {
    fn collect_params(&self, out: &mut Vec<Var<F>>) {
        self.head.conv.collect_params(out);
        for d in &self.downs {
            d.conv.collect_params(out);
        }
        for b in &self.blocks {
            b.collect_params(out);
        }
        for u in &self.ups {
            u.collect_params(out);
        }
        self.tail.collect_params(out);
    }
}

struct UnetCore<F: Scalar> {
    downs: Vec<Conv2d<F>>,
    ups: Vec<ConvTranspose2d<F>>,
    tail: Conv2d<F>,
    norm: InstanceNorm2d,
}

impl<F: Scalar> UnetCore<F> {
    fn new(base: usize, n_down: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut downs = Vec::with_capacity(n_down);
        let mut c_in = 3;
        for i in 0..n_down {
            let c_out = width_at(base, i);
            downs.push(Conv2d::new(c_in, c_out, 4, 2, 1, PadMode::Zeros, i == 0, rng));
            c_in = c_out;
        }
        // Each decoder stage consumes the previous decoder output
        // concatenated with the encoder skip of the same resolution.
        let mut ups = Vec::with_capacity(n_down);
        for k in 0..n_down {
            let enc_stage = n_down - 1 - k;
            let in_ch = if k == 0 { width_at(base, enc_stage) } else { width_at(base, enc_stage) * 2 };
            let out_ch = if enc_stage == 0 { base } else { width_at(base, enc_stage - 1) };
            ups.push(ConvTranspose2d::new(in_ch, out_ch, 4, 2, 1, false, rng));
        }
        let tail = Conv2d::new(base, 3, 3, 1, 1, PadMode::Reflect, true, rng);
        Self { downs, ups, tail, norm: InstanceNorm2d::default() }
    }

    fn forward(&self, x: &Var<F>, zero_bottleneck: bool) -> Var<F> {
        let mut skips: Vec<Var<F>> = Vec::with_capacity(self.downs.len());
        let mut y = x.clone();
        for (i, down) in self.downs.iter().enumerate() {
            y = down.forward(&y);
            if i > 0 {
                y = self.norm.forward(&y);
            }
            y = y.leaky_relu(LEAKY_SLOPE);
            skips.push(y.clone());
        }
        if zero_bottleneck {
            y = y.mul_scalar(0.0);
        }
        for (k, up) in self.ups.iter().enumerate() {
            let input = if k == 0 {
                y.clone()
            } else {
                let skip = &skips[self.downs.len() - 1 - k];
                y.concat(skip, 1)
            };
            y = self.norm.forward(&up.forward(&input)).relu();
        }
        self.tail.forward(&y).tanh()
    }
}

impl<F: Scalar> Layer<F> for UnetCore<F> {
    fn collect_params(&self, out: &mut Vec<Var<F>>) {
        for d in &self.downs {
            d.collect_params(out);
        }
        for u in &self.ups {
            u.collect_params(out);
        }
        self.tail.collect_params(out);
    }
}

enum GenBody<F: Scalar> {
    Resnet(ResnetCore<F>),
    Unet(UnetCore<F>),
}

/// A generator and the spec it was built from.
pub struct Generator<F: Scalar> {
    spec: GeneratorSpec,
    body: GenBody<F>,
}

/// Builds a generator with seeded Gaussian init (std 0.02).
pub fn make_generator<F: Scalar>(spec: &GeneratorSpec, seed: u64) -> Result<Generator<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = match spec.kind {
        GeneratorKind::Resnet => {
            GenBody::Resnet(ResnetCore::new(3, spec.base_width, spec.n_resblocks, &mut rng))
        }
        GeneratorKind::Conditional => GenBody::Resnet(ResnetCore::new(
            3 + spec.num_domains.unwrap(),
            spec.base_width,
            spec.n_resblocks,
            &mut rng,
        )),
        GeneratorKind::Unet => GenBody::Unet(UnetCore::new(spec.base_width, spec.n_down, &mut rng)),
    };
    Ok(Generator { spec: spec.clone(), body })
}

impl<F: Scalar> Generator<F> {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn parameters(&self) -> Vec<Var<F>> {
        let mut out = Vec::new();
        match &self.body {
            GenBody::Resnet(core) => core.collect_params(&mut out),
            GenBody::Unet(core) => core.collect_params(&mut out),
        }
        out
    }

    /// Forward pass on an NCHW batch in symmetric range. Conditional
    /// generators require the target-domain index; others reject one.
    pub fn forward(&self, x: &Var<F>, target_domain: Option<usize>) -> Result<Var<F>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Channel(format!("generator expects [N,3,H,W], got {shape:?}")));
        }
        match (self.spec.kind, target_domain) {
            (GeneratorKind::Conditional, Some(domain)) => {
                let num = self.spec.num_domains.unwrap();
                if domain >= num {
                    return Err(Error::Contract(format!(
                        "target domain {domain} out of range for {num} domains"
                    )));
                }
                let (n, h, w) = (shape[0], shape[2], shape[3]);
                let mut planes = ArrayD::<F>::zeros(IxDyn(&[n, num, h, w]));
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            planes[[ni, domain, y, xx]] = F::one();
                        }
                    }
                }
                let labeled = x.concat(&Var::constant(planes), 1);
                match &self.body {
                    GenBody::Resnet(core) => Ok(core.forward(&labeled)),
                    GenBody::Unet(_) => unreachable!("conditional bodies are resnet"),
                }
            }
            (GeneratorKind::Conditional, None) => {
                Err(Error::Contract("conditional generator requires a target domain".into()))
            }
            (_, Some(_)) => {
                Err(Error::Contract("unconditional generator takes no target domain".into()))
            }
            (GeneratorKind::Resnet, None) => match &self.body {
                GenBody::Resnet(core) => Ok(core.forward(x)),
                GenBody::Unet(_) => unreachable!(),
            },
            (GeneratorKind::Unet, None) => match &self.body {
                GenBody::Unet(core) => Ok(core.forward(x, false)),
                GenBody::Resnet(_) => unreachable!(),
            },
        }
    }

    /// Inference on a single symmetric-range image.
    pub fn transform_image(
        &self,
        img: &ImageTensor<F>,
        target_domain: Option<usize>,
    ) -> Result<ImageTensor<F>> {
        if img.range() != ValueRange::Symmetric {
            return Err(Error::Contract("generator input must be in symmetric range".into()));
        }
        if img.height() != self.spec.image_size || img.width() != self.spec.image_size {
            return Err(Error::Dimension(format!(
                "generator built for {0}x{0}, got {1}x{2}",
                self.spec.image_size,
                img.height(),
                img.width()
            )));
        }
        let x = Var::constant(image_to_batch(img));
        let y = no_grad(|| self.forward(&x, target_domain))?;
        batch_to_image(&y.value(), ValueRange::Symmetric)
    }

    /// U-Net probe: forward with the bottleneck activations zeroed, to verify
    /// that information still flows through the skip connections.
    pub fn forward_with_zeroed_bottleneck(&self, x: &Var<F>) -> Result<Var<F>> {
        match &self.body {
            GenBody::Unet(core) => Ok(core.forward(x, true)),
            _ => Err(Error::Contract("bottleneck probe only applies to unet generators".into())),
        }
    }
}

struct DiscTrunk<F: Scalar> {
    convs: Vec<Conv2d<F>>,
    norm: Option<InstanceNorm2d>,
}

impl<F: Scalar> DiscTrunk<F> {
    fn new(base: usize, with_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::with_capacity(DISC_DOWN_STAGES);
        let mut c_in = 3;
        for i in 0..DISC_DOWN_STAGES {
            let c_out = width_at(base, i);
            convs.push(Conv2d::new(c_in, c_out, 4, 2, 1, PadMode::Zeros, !with_norm || i == 0, rng));
            c_in = c_out;
        }
        Self { convs, norm: with_norm.then(InstanceNorm2d::default) }
    }

    fn forward(&self, x: &Var<F>) -> Var<F> {
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y);
            if i > 0 {
                if let Some(norm) = &self.norm {
                    y = norm.forward(&y);
                }
            }
            y = y.leaky_relu(LEAKY_SLOPE);
        }
        y
    }

    fn out_width(&self, base: usize) -> usize {
        width_at(base, DISC_DOWN_STAGES - 1)
    }
}

impl<F: Scalar> Layer<F> for DiscTrunk<F> {
    fn collect_params(&self, out: &mut Vec<Var<F>>) {
        for c in &self.convs {
            c.collect_params(out);
        }
    }
}

enum DiscBody<F: Scalar> {
    Patch { trunk: DiscTrunk<F>, patch_head: Conv2d<F> },
    Dualhead { trunk: DiscTrunk<F>, patch_head: Conv2d<F>, domain_head: Conv2d<F> },
}

/// A discriminator and the spec it was built from.
pub struct Discriminator<F: Scalar> {
    spec: DiscriminatorSpec,
    body: DiscBody<F>,
}

/// Builds a discriminator with seeded Gaussian init (std 0.02).
pub fn make_discriminator<F: Scalar>(
    spec: &DiscriminatorSpec,
    seed: u64,
) -> Result<Discriminator<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = spec.base_width;
    let body = match spec.kind {
        DiscriminatorKind::Patch => {
            // Cycle-variant discriminator: instance norm in the trunk.
            let trunk = DiscTrunk::new(base, true, &mut rng);
            let top = trunk.out_width(base);
            let patch_head = Conv2d::new(top, 1, 3, 1, 1, PadMode::Zeros, true, &mut rng);
            DiscBody::Patch { trunk, patch_head }
        }
        DiscriminatorKind::Dualhead => {
            // No normalization anywhere: the trunk must stay compatible with
            // a gradient penalty on its input.
            let trunk = DiscTrunk::new(base, false, &mut rng);
            let top = trunk.out_width(base);
            let patch_head = Conv2d::new(top, 1, 3, 1, 1, PadMode::Zeros, true, &mut rng);
            let domain_head = Conv2d::new(
                top,
                spec.num_domains.unwrap(),
                spec.patch_grid(),
                1,
                0,
                PadMode::Zeros,
                false,
                &mut rng,
            );
            DiscBody::Dualhead { trunk, patch_head, domain_head }
        }
    };
    Ok(Discriminator { spec: spec.clone(), body })
}

impl<F: Scalar> Discriminator<F> {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn parameters(&self) -> Vec<Var<F>> {
        let mut out = Vec::new();
        match &self.body {
            DiscBody::Patch { trunk, patch_head } => {
                trunk.collect_params(&mut out);
                patch_head.collect_params(&mut out);
            }
            DiscBody::Dualhead { trunk, patch_head, domain_head } => {
                trunk.collect_params(&mut out);
                patch_head.collect_params(&mut out);
                domain_head.collect_params(&mut out);
            }
        }
        out
    }

    /// Real-valued patch authenticity map `[N, 1, g, g]`.
    pub fn patch_map(&self, x: &Var<F>) -> Var<F> {
        match &self.body {
            DiscBody::Patch { trunk, patch_head } => patch_head.forward(&trunk.forward(x)),
            DiscBody::Dualhead { trunk, patch_head, .. } => patch_head.forward(&trunk.forward(x)),
        }
    }

    /// Patch map and domain logits `[N, num_domains]` (dual-head only).
    pub fn dual_forward(&self, x: &Var<F>) -> Result<(Var<F>, Var<F>)> {
        match &self.body {
            DiscBody::Dualhead { trunk, patch_head, domain_head } => {
                let features = trunk.forward(x);
                let patches = patch_head.forward(&features);
                let logits = domain_head.forward(&features);
                let shape = logits.shape();
                let flat = logits.reshape(&[shape[0], shape[1]]);
                Ok((patches, flat))
            }
            DiscBody::Patch { .. } => {
                Err(Error::Contract("domain logits only exist on dualhead discriminators".into()))
            }
        }
    }
}

/// Converts an image to a `[1, C, H, W]` batch.
pub fn image_to_batch<F: Scalar>(img: &ImageTensor<F>) -> ArrayD<F> {
    let (h, w, c) = img.data().dim();
    let mut out = ArrayD::<F>::zeros(IxDyn(&[1, c, h, w]));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[[0, ch, y, x]] = img.data()[[y, x, ch]];
            }
        }
    }
    out
}

/// Converts a `[1, C, H, W]` batch back to an image, clipping into `range`.
pub fn batch_to_image<F: Scalar>(batch: &ArrayD<F>, range: ValueRange) -> Result<ImageTensor<F>> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(Error::Dimension(format!("expected [1,C,H,W], got {shape:?}")));
    }
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut out = ndarray::Array3::<F>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[[y, x, ch]] = batch[[0, ch, y, x]];
            }
        }
    }
    ImageTensor::from_array_clipped(out, range)
}

/// Generators, discriminators and domain bookkeeping for one architecture.
pub struct ModelBundle<F: Scalar> {
    pub architecture: Architecture,
    pub domain_names: Vec<String>,
    /// Cycle variants: `[G_ab, G_ba]` (a → b and b → a). FPG: one conditional
    /// generator.
    pub generators: Vec<Generator<F>>,
    /// Cycle variants: `[D_b, D_a]` (judging domain-b and domain-a images).
    /// FPG: one dual-head discriminator.
    pub discriminators: Vec<Discriminator<F>>,
}

impl<F: Scalar> ModelBundle<F> {
    /// Builds all networks for `architecture` from one seed.
    pub fn new(
        architecture: Architecture,
        domain_names: &[String],
        gen_spec: &GeneratorSpec,
        disc_spec: &DiscriminatorSpec,
        seed: u64,
    ) -> Result<Self> {
        if gen_spec.kind != architecture.generator_kind() {
            return Err(Error::Config(format!(
                "generator kind {:?} does not match architecture {architecture}",
                gen_spec.kind
            )));
        }
        match architecture {
            Architecture::Cyclegan | Architecture::UnetCyclegan => {
                if domain_names.len() != 2 {
                    return Err(Error::Config(format!(
                        "{architecture} transforms between exactly two domains, got {}",
                        domain_names.len()
                    )));
                }
                if disc_spec.kind != DiscriminatorKind::Patch {
                    return Err(Error::Config("cycle variants use patch discriminators".into()));
                }
            }
            Architecture::Fpg => {
                if domain_names.len() < 2 {
                    return Err(Error::Config("fpg needs at least two domains".into()));
                }
                if disc_spec.kind != DiscriminatorKind::Dualhead {
                    return Err(Error::Config("fpg uses the dualhead discriminator".into()));
                }
                if gen_spec.num_domains != Some(domain_names.len())
                    || disc_spec.num_domains != Some(domain_names.len())
                {
                    return Err(Error::Config("num_domains must match the domain list".into()));
                }
            }
        }

        // Distinct, deterministic seeds per component.
        let sub_seed = |idx: u64| seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(idx);
        let (generators, discriminators) = match architecture {
            Architecture::Cyclegan | Architecture::UnetCyclegan => (
                vec![make_generator(gen_spec, sub_seed(1))?, make_generator(gen_spec, sub_seed(2))?],
                vec![
                    make_discriminator(disc_spec, sub_seed(3))?,
                    make_discriminator(disc_spec, sub_seed(4))?,
                ],
            ),
            Architecture::Fpg => (
                vec![make_generator(gen_spec, sub_seed(1))?],
                vec![make_discriminator(disc_spec, sub_seed(3))?],
            ),
        };
        Ok(Self { architecture, domain_names: domain_names.to_vec(), generators, discriminators })
    }

    pub fn gen_spec(&self) -> &GeneratorSpec {
        self.generators[0].spec()
    }

    pub fn disc_spec(&self) -> &DiscriminatorSpec {
        self.discriminators[0].spec()
    }

    /// All trainable parameters, generators first.
    pub fn all_parameters(&self) -> Vec<Var<F>> {
        let mut out = Vec::new();
        for g in &self.generators {
            out.extend(g.parameters());
        }
        for d in &self.discriminators {
            out.extend(d.parameters());
        }
        out
    }
}

/// Parameter count of the original StarGAN-style discriminator layer table
/// (six stride-2 stages doubling to 2048 channels, a 3×3 patch head and a
/// full-field domain head), for comparison against the dual-head variant.
pub fn stargan_reference_discriminator_params(image_size: usize, num_domains: usize) -> usize {
    let mut total = 0usize;
    let mut c_in = 3usize;
    let mut c_out = 64usize;
    let mut side = image_size;
    for _ in 0..6 {
        total += c_in * c_out * 16 + c_out;
        c_in = c_out;
        c_out *= 2;
        side /= 2;
    }
    // Patch head: 3x3, no bias. Domain head: kernel covering the whole field.
    total += c_in * 9;
    total += c_in * num_domains * side * side;
    total
}
