//! Pipeline configuration and seed decoding.
//!
//! `decode` expands a 4-byte seed into the full parameter bundle of one
//! augmentation realization. The draw order below is part of the cache file
//! contract and is identified by [`PIPELINE_VERSION`]:
//!
//! | draws | parameter |
//! |-------|-----------|
//! | 1     | crop scale |
//! | 1     | crop log-aspect ratio |
//! | 2     | crop x, crop y |
//! | 1     | horizontal flip |
//! | 3     | brightness, contrast, saturation |
//! | 1     | erase decision |
//! | 4     | erase area, log-aspect, x, y |
//! | 2     | erase fill mode, noise seed |
//! | 3·n   | RandAugment op, magnitude, sign (per op) |
//! | 3 + β | mix mode, cut x, cut y, then λ ~ Beta(α, α) |
//!
//! Every stage consumes its draws even when disabled, so toggling one stage
//! never shifts the parameters of the stages after it. Only the mix block is
//! variable length (Beta sampling is by rejection) and it comes last.

use serde::{Deserialize, Serialize};

use super::pcg::{bounded, scale_into, unit_from, PcgState};
use super::seed::AugSeed;
use crate::error::{Error, Result};

/// Version of the (PCG variant, draw order, op set) triple.
pub const PIPELINE_VERSION: u16 = 1;

/// Stream selector of the decoder generator.
pub const AUG_STREAM: u64 = 0x5456_4954_4155_4731;

/// Largest RandAugment magnitude.
pub const MAX_MAGNITUDE: u8 = 30;

/// Which blend the mix stage performs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MixChoice {
    Mixup,
    Cutmix,
    /// Cutmix with probability `cutmix_prob`, mixup otherwise.
    Either { cutmix_prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub choice: MixChoice,
    /// Beta(α, α) concentration for λ.
    pub alpha: f64,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            choice: MixChoice::Either { cutmix_prob: 0.5 },
            alpha: 1.0,
        }
    }
}

/// Augmentation pipeline hyper-ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Output side length.
    pub image_size: usize,
    /// Source image `(height, width)`; corpora are fixed-size.
    pub source_size: (usize, usize),
    /// Crop area as a fraction of the source area.
    pub crop_scale: (f64, f64),
    /// Crop aspect ratio (width / height), sampled log-uniformly.
    pub crop_ratio: (f64, f64),
    pub hflip_prob: f64,
    /// Jitter strength: each factor is drawn from `[1 - s, 1 + s]`.
    pub jitter: f64,
    pub erase_prob: f64,
    pub erase_area: (f64, f64),
    pub erase_ratio: (f64, f64),
    pub randaug_ops: usize,
    /// Inclusive magnitude range, within `0..=30`.
    pub randaug_magnitude: (u8, u8),
    pub mix_enabled: bool,
    pub mix: MixSpec,
}

impl PipelineSpec {
    /// Standard recipe for `source_size` inputs and `image_size` outputs.
    /// Mixing is off, as it is for pretraining distillation.
    pub fn standard(image_size: usize, source_size: (usize, usize)) -> Self {
        PipelineSpec {
            image_size,
            source_size,
            crop_scale: (0.08, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            jitter: 0.4,
            erase_prob: 0.25,
            erase_area: (0.02, 1.0 / 3.0),
            erase_ratio: (0.3, 1.0 / 0.3),
            randaug_ops: 2,
            randaug_magnitude: (5, 13),
            mix_enabled: false,
            mix: MixSpec::default(),
        }
    }

    /// A pipeline that leaves images untouched apart from resizing and
    /// normalization.
    pub fn identity(image_size: usize, source_size: (usize, usize)) -> Self {
        PipelineSpec {
            crop_scale: (1.0, 1.0),
            crop_ratio: (
                source_size.1 as f64 / source_size.0 as f64,
                source_size.1 as f64 / source_size.0 as f64,
            ),
            hflip_prob: 0.0,
            jitter: 0.0,
            erase_prob: 0.0,
            randaug_ops: 0,
            ..PipelineSpec::standard(image_size, source_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidPipeline(what.to_string()));
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if self.image_size == 0 || self.source_size.0 == 0 || self.source_size.1 == 0 {
            return bad("image sizes must be positive");
        }
        if !range_ok(self.crop_scale) || self.crop_scale.0 <= 0.0 || self.crop_scale.1 > 1.0 {
            return bad("crop scale must lie in (0, 1]");
        }
        if !range_ok(self.crop_ratio) || self.crop_ratio.0 <= 0.0 {
            return bad("crop ratio must be positive");
        }
        if !prob_ok(self.hflip_prob) || !prob_ok(self.erase_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter strength must lie in [0, 1)");
        }
        if !range_ok(self.erase_area) || self.erase_area.0 <= 0.0 || self.erase_area.1 > 1.0 {
            return bad("erase area must lie in (0, 1]");
        }
        if !range_ok(self.erase_ratio) || self.erase_ratio.0 <= 0.0 {
            return bad("erase ratio must be positive");
        }
        let (m0, m1) = self.randaug_magnitude;
        if m0 > m1 || m1 > MAX_MAGNITUDE {
            return bad("magnitude range must lie in 0..=30");
        }
        if !(self.mix.alpha.is_finite() && self.mix.alpha > 0.0) {
            return bad("mix alpha must be positive");
        }
        if let MixChoice::Either { cutmix_prob } = self.mix.choice {
            if !prob_ok(cutmix_prob) {
                return bad("cutmix probability must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelBox {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.height && x >= self.x && x < self.x + self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EraseFill {
    Zero,
    /// Standard-normal noise from a PCG stream seeded with `seed`.
    Noise { seed: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Erase {
    /// In output pixels.
    pub region: PixelBox,
    pub fill: EraseFill,
}

/// The fourteen RandAugment operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandAugKind {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl RandAugKind {
    pub const ALL: [RandAugKind; 14] = [
        RandAugKind::Identity,
        RandAugKind::AutoContrast,
        RandAugKind::Equalize,
        RandAugKind::Rotate,
        RandAugKind::Solarize,
        RandAugKind::Color,
        RandAugKind::Posterize,
        RandAugKind::Contrast,
        RandAugKind::Brightness,
        RandAugKind::Sharpness,
        RandAugKind::ShearX,
        RandAugKind::ShearY,
        RandAugKind::TranslateX,
        RandAugKind::TranslateY,
    ];

    pub fn id(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandAugOp {
    pub kind: RandAugKind,
    pub magnitude: u8,
    /// Reverses the direction of signed ops (rotation, shear, enhance...).
    pub negate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    Mixup,
    Cutmix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixParams {
    pub mode: MixMode,
    /// Weight of the sample itself. For cutmix this is the area fraction
    /// outside the pasted box.
    pub lambda: f64,
    /// Filled in from the epoch plan; decoding alone cannot know it.
    pub partner: Option<u64>,
    /// Pasted region (output pixels), cutmix only.
    pub cut_box: Option<PixelBox>,
}

/// One decoded augmentation realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    /// In source pixels.
    pub crop: PixelBox,
    pub hflip: bool,
    pub color_jitter: ColorJitter,
    pub erase: Option<Erase>,
    pub randaug_ops: Vec<RandAugOp>,
    pub mix: Option<MixParams>,
}

impl AugParams {
    /// Parameters that only resize and normalize.
    pub fn identity(source_size: (usize, usize)) -> Self {
        AugParams {
            crop: PixelBox {
                x: 0,
                y: 0,
                width: source_size.1,
                height: source_size.0,
            },
            hflip: false,
            color_jitter: ColorJitter {
                brightness: 1.0,
                contrast: 1.0,
                saturation: 1.0,
            },
            erase: None,
            randaug_ops: Vec::new(),
            mix: None,
        }
    }

    /// Attaches the mix partner chosen by the epoch plan.
    pub fn with_partner(mut self, partner: u64) -> Self {
        if let Some(mix) = self.mix.as_mut() {
            mix.partner = Some(partner);
        }
        self
    }
}

/// Expands `seed` into the parameters of `spec`'s pipeline.
pub fn decode(seed: &AugSeed, spec: &PipelineSpec) -> Result<AugParams> {
    spec.validate()?;
    let mut rng = PcgState::new(seed.d0 as u64, AUG_STREAM);
    let (src_h, src_w) = spec.source_size;
    let size = spec.image_size;

    let scale = span(rng.next_u32(), spec.crop_scale);
    let log_ratio = span(
        rng.next_u32(),
        (libm::log(spec.crop_ratio.0), libm::log(spec.crop_ratio.1)),
    );
    let ratio = libm::exp(log_ratio);
    let target = (src_h * src_w) as f64 * scale;
    let crop_w = (libm::sqrt(target * ratio).round_ties_even() as usize).clamp(1, src_w);
    let crop_h = (libm::sqrt(target / ratio).round_ties_even() as usize).clamp(1, src_h);
    let crop_x = bounded(rng.next_u32(), (src_w - crop_w + 1) as u32) as usize;
    let crop_y = bounded(rng.next_u32(), (src_h - crop_h + 1) as u32) as usize;
    let crop = PixelBox {
        x: crop_x,
        y: crop_y,
        width: crop_w,
        height: crop_h,
    };

    let hflip = unit_from(rng.next_u32()) < spec.hflip_prob;

    let jitter_range = ((1.0 - spec.jitter).max(0.0), 1.0 + spec.jitter);
    let color_jitter = ColorJitter {
        brightness: span(rng.next_u32(), jitter_range),
        contrast: span(rng.next_u32(), jitter_range),
        saturation: span(rng.next_u32(), jitter_range),
    };

    let erase_draw = unit_from(rng.next_u32());
    let area_frac = span(rng.next_u32(), spec.erase_area);
    let log_aspect = span(
        rng.next_u32(),
        (libm::log(spec.erase_ratio.0), libm::log(spec.erase_ratio.1)),
    );
    let ex_draw = rng.next_u32();
    let ey_draw = rng.next_u32();
    let fill_draw = rng.next_u32();
    let noise_seed = rng.next_u32();
    let erase = (erase_draw < spec.erase_prob).then(|| {
        let area = (size * size) as f64 * area_frac;
        let aspect = libm::exp(log_aspect);
        let w = (libm::sqrt(area * aspect).round_ties_even() as usize).clamp(1, size);
        let h = (libm::sqrt(area / aspect).round_ties_even() as usize).clamp(1, size);
        Erase {
            region: PixelBox {
                x: bounded(ex_draw, (size - w + 1) as u32) as usize,
                y: bounded(ey_draw, (size - h + 1) as u32) as usize,
                width: w,
                height: h,
            },
            fill: if bounded(fill_draw, 2) == 0 {
                EraseFill::Zero
            } else {
                EraseFill::Noise { seed: noise_seed }
            },
        }
    });

    let (m0, m1) = spec.randaug_magnitude;
    let randaug_ops = (0..spec.randaug_ops)
        .map(|_| {
            let kind = RandAugKind::ALL[bounded(rng.next_u32(), 14) as usize];
            let magnitude = m0 + bounded(rng.next_u32(), (m1 - m0) as u32 + 1) as u8;
            let negate = rng.next_u32() >> 31 == 1;
            RandAugOp {
                kind,
                magnitude,
                negate,
            }
        })
        .collect();

    let mix = spec
        .mix_enabled
        .then(|| decode_mix(&mut rng, &spec.mix, size));

    Ok(AugParams {
        crop,
        hflip,
        color_jitter,
        erase,
        randaug_ops,
        mix,
    })
}

fn decode_mix(rng: &mut PcgState, mix: &MixSpec, size: usize) -> MixParams {
    let mode_draw = unit_from(rng.next_u32());
    let cx_draw = rng.next_u32();
    let cy_draw = rng.next_u32();
    let lambda = sample_beta(rng, mix.alpha);
    let mode = match mix.choice {
        MixChoice::Mixup => MixMode::Mixup,
        MixChoice::Cutmix => MixMode::Cutmix,
        MixChoice::Either { cutmix_prob } if mode_draw < cutmix_prob => MixMode::Cutmix,
        MixChoice::Either { .. } => MixMode::Mixup,
    };
    match mode {
        MixMode::Mixup => MixParams {
            mode,
            lambda,
            partner: None,
            cut_box: None,
        },
        MixMode::Cutmix => {
            let side = (size as f64 * libm::sqrt(1.0 - lambda)).round_ties_even() as usize;
            let side = side.min(size);
            let cut_box = PixelBox {
                x: bounded(cx_draw, (size - side + 1) as u32) as usize,
                y: bounded(cy_draw, (size - side + 1) as u32) as usize,
                width: side,
                height: side,
            };
            // λ is corrected to the realized pasted area.
            let lambda = 1.0 - cut_box.area() as f64 / (size * size) as f64;
            MixParams {
                mode,
                lambda,
                partner: None,
                cut_box: Some(cut_box),
            }
        }
    }
}

/// Maps a draw into `[lo, hi)`; a degenerate range returns `lo`.
fn span(draw: u32, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        scale_into(draw, lo, hi)
    } else {
        lo
    }
}

fn standard_normal(rng: &mut PcgState) -> f64 {
    let u1 = rng.unit_open();
    let u2 = rng.unit();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
}

/// Marsaglia–Tsang gamma sampler with the `shape < 1` boost.
fn sample_gamma(rng: &mut PcgState, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = sample_gamma(rng, shape + 1.0);
        return g * libm::pow(rng.unit_open(), 1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.unit_open();
        if u < 1.0 - 0.0331 * x * x * x * x
            || libm::log(u) < 0.5 * x * x + d * (1.0 - v + libm::log(v))
        {
            return d * v;
        }
    }
}

fn sample_beta(rng: &mut PcgState, alpha: f64) -> f64 {
    let a = sample_gamma(rng, alpha);
    let b = sample_gamma(rng, alpha);
    if a + b > 0.0 {
        a / (a + b)
    } else {
        0.5
    }
}
