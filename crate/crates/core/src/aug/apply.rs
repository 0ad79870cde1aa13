//! Rendering decoded parameters onto images.
//!
//! Stage order: crop → bilinear resize → horizontal flip → color jitter →
//! RandAugment → normalize → erase → mix. Everything up to normalization
//! works on an interleaved `S×S×3` buffer of `f32` pixel values in
//! `[0, 255]`; the output is planar and normalized.

use super::params::{AugParams, EraseFill, MixMode, PixelBox, RandAugKind, RandAugOp};
use super::pcg::PcgState;
use super::MAX_MAGNITUDE;
use crate::error::{Error, Result};
use crate::image::{AugImage, ImageView};

pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

const ERASE_STREAM: u64 = 0x4552_4153_45;
const FILL: f32 = 128.0;

/// Renders `params` onto `image`. `partner` is required exactly when the
/// parameters carry a mix stage; it goes through the same geometric and
/// photometric stages before being blended in.
pub fn apply(
    image: ImageView<'_>,
    params: &AugParams,
    size: usize,
    partner: Option<ImageView<'_>>,
) -> Result<AugImage> {
    if params.mix.is_some() && partner.is_none() {
        return Err(Error::MixPartnerRequired);
    }
    let mut out = render(image, params, size)?;
    if let Some(erase) = &params.erase {
        erase_region(&mut out, &erase.region, erase.fill);
    }
    if let (Some(mix), Some(partner)) = (&params.mix, partner) {
        if partner.height() != image.height() || partner.width() != image.width() {
            return Err(Error::ImageShape("mix partner has a different size".into()));
        }
        let other = render(partner, params, size)?;
        match mix.mode {
            MixMode::Mixup => mixup(&mut out, &other, mix.lambda),
            MixMode::Cutmix => {
                if let Some(cut) = &mix.cut_box {
                    paste(&mut out, &other, cut);
                }
            }
        }
    }
    Ok(out)
}

/// `λ·a + (1 − λ)·b`, evaluated in `f32` in exactly this order.
pub fn mixup(a: &mut AugImage, b: &AugImage, lambda: f64) {
    let l = lambda as f32;
    let r = 1.0f32 - l;
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x = l * *x + r * y;
    }
}

fn paste(a: &mut AugImage, b: &AugImage, region: &PixelBox) {
    let s = a.size;
    for c in 0..3 {
        for y in region.y..(region.y + region.height).min(s) {
            let row = (c * s + y) * s;
            for x in region.x..(region.x + region.width).min(s) {
                a.data[row + x] = b.data[row + x];
            }
        }
    }
}

fn erase_region(img: &mut AugImage, region: &PixelBox, fill: EraseFill) {
    let s = img.size;
    let mut rng = match fill {
        EraseFill::Zero => None,
        EraseFill::Noise { seed } => Some(PcgState::new(seed as u64, ERASE_STREAM)),
    };
    for c in 0..3 {
        for y in region.y..(region.y + region.height).min(s) {
            for x in region.x..(region.x + region.width).min(s) {
                img.data[(c * s + y) * s + x] = match rng.as_mut() {
                    None => 0.0,
                    Some(r) => gaussian(r) as f32,
                };
            }
        }
    }
}

fn gaussian(rng: &mut PcgState) -> f64 {
    let u1 = rng.unit_open();
    let u2 = rng.unit();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
}

/// Geometric and photometric stages plus normalization.
fn render(image: ImageView<'_>, params: &AugParams, size: usize) -> Result<AugImage> {
    let crop = &params.crop;
    if crop.width == 0
        || crop.height == 0
        || crop.x + crop.width > image.width()
        || crop.y + crop.height > image.height()
    {
        return Err(Error::ImageShape(format!(
            "crop {crop:?} outside {}x{} image",
            image.height(),
            image.width()
        )));
    }
    let mut buf = Work::resize_crop(image, crop, size);
    if params.hflip {
        buf.flip_horizontal();
    }
    let j = &params.color_jitter;
    buf.enhance_brightness(j.brightness);
    buf.enhance_contrast(j.contrast);
    buf.enhance_color(j.saturation);
    for op in &params.randaug_ops {
        buf.randaug(op);
    }
    Ok(buf.normalize())
}

/// Interleaved working image.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Work {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Work {
    /// Bilinear resampling of `crop` to `size×size`, half-pixel centers,
    /// edge clamping. Values are accumulated in `f64` and stored with
    /// round-half-to-even into `f32`.
    pub fn resize_crop(image: ImageView<'_>, crop: &PixelBox, size: usize) -> Work {
        let axis = |out: usize, extent: usize| -> Vec<(usize, usize, f64)> {
            let scale = extent as f64 / size as f64;
            (0..out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(extent - 1);
                    (lo, hi, src - lo as f64)
                })
                .collect()
        };
        let rows = axis(size, crop.height);
        let cols = axis(size, crop.width);
        let mut data = vec![0.0f32; size * size * 3];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                for c in 0..3 {
                    let p = |y: usize, x: usize| image.pixel(crop.y + y, crop.x + x, c) as f64;
                    let top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x1);
                    let bottom = (1.0 - fx) * p(y1, x0) + fx * p(y1, x1);
                    data[(oy * size + ox) * 3 + c] = ((1.0 - fy) * top + fy * bottom) as f32;
                }
            }
        }
        Work {
            height: size,
            width: size,
            data,
        }
    }

    #[inline]
    fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    pub fn flip_horizontal(&mut self) {
        let w = self.width;
        for y in 0..self.height {
            for x in 0..w / 2 {
                for c in 0..3 {
                    let a = self.idx(y, x, c);
                    let b = self.idx(y, w - 1 - x, c);
                    self.data.swap(a, b);
                }
            }
        }
    }

    fn gray(&self, p: usize) -> f64 {
        0.299 * self.data[p] as f64 + 0.587 * self.data[p + 1] as f64 + 0.114 * self.data[p + 2] as f64
    }

    /// `degenerate + factor · (image − degenerate)`, clamped.
    fn blend_with(&mut self, degenerate: &[f64], factor: f64) {
        for (v, &d) in self.data.iter_mut().zip(degenerate) {
            *v = (d + factor * (*v as f64 - d)).clamp(0.0, 255.0) as f32;
        }
    }

    pub fn enhance_brightness(&mut self, factor: f64) {
        if factor != 1.0 {
            let zeros = vec![0.0; self.data.len()];
            self.blend_with(&zeros, factor);
        }
    }

    pub fn enhance_contrast(&mut self, factor: f64) {
        if factor != 1.0 {
            let n = self.width * self.height;
            let mean = (0..n).map(|i| self.gray(i * 3)).sum::<f64>() / n as f64;
            let deg = vec![mean; self.data.len()];
            self.blend_with(&deg, factor);
        }
    }

    pub fn enhance_color(&mut self, factor: f64) {
        if factor != 1.0 {
            let deg: Vec<f64> = (0..self.width * self.height)
                .flat_map(|i| {
                    let g = self.gray(i * 3);
                    [g, g, g]
                })
                .collect();
            self.blend_with(&deg, factor);
        }
    }

    fn enhance_sharpness(&mut self, factor: f64) {
        let (h, w) = (self.height, self.width);
        let mut deg: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        if h >= 3 && w >= 3 {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    for c in 0..3 {
                        let mut acc = 0.0;
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let weight = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                                acc += weight * self.data[self.idx(y + dy - 1, x + dx - 1, c)] as f64;
                            }
                        }
                        deg[self.idx(y, x, c)] = acc / 13.0;
                    }
                }
            }
        }
        self.blend_with(&deg, factor);
    }

    fn auto_contrast(&mut self) {
        for c in 0..3 {
            let vals = self.data.iter().skip(c).step_by(3);
            let lo = vals.clone().copied().fold(f32::INFINITY, f32::min);
            let hi = vals.copied().fold(f32::NEG_INFINITY, f32::max);
            if hi > lo {
                let scale = 255.0 / (hi - lo) as f64;
                for v in self.data.iter_mut().skip(c).step_by(3) {
                    *v = ((*v - lo) as f64 * scale) as f32;
                }
            }
        }
    }

    fn to_byte(v: f32) -> usize {
        v.round_ties_even().clamp(0.0, 255.0) as usize
    }

    /// Per-channel histogram equalization with the classic imaging-library
    /// lookup table.
    fn equalize(&mut self) {
        for c in 0..3 {
            let mut hist = [0usize; 256];
            for v in self.data.iter().skip(c).step_by(3) {
                hist[Self::to_byte(*v)] += 1;
            }
            let nonzero: Vec<usize> = hist.iter().copied().filter(|&n| n > 0).collect();
            if nonzero.len() <= 1 {
                continue;
            }
            let step = (nonzero.iter().sum::<usize>() - nonzero[nonzero.len() - 1]) / 255;
            if step == 0 {
                continue;
            }
            let mut lut = [0f32; 256];
            let mut n = step / 2;
            for (entry, &count) in lut.iter_mut().zip(&hist) {
                *entry = (n / step).min(255) as f32;
                n += count;
            }
            for v in self.data.iter_mut().skip(c).step_by(3) {
                *v = lut[Self::to_byte(*v)];
            }
        }
    }

    fn solarize(&mut self, threshold: f32) {
        for v in &mut self.data {
            if *v >= threshold {
                *v = 255.0 - *v;
            }
        }
    }

    fn posterize(&mut self, bits: u32) {
        let mask = (0xFFu32 << (8 - bits)) & 0xFF;
        for v in &mut self.data {
            *v = ((v.floor().clamp(0.0, 255.0) as u32) & mask) as f32;
        }
    }

    /// Inverse-mapped resampling with nearest-neighbour lookup; pixels that
    /// map outside the image take the constant fill.
    fn remap(&mut self, map: impl Fn(f64, f64) -> (f64, f64)) {
        let (h, w) = (self.height, self.width);
        let mut out = vec![FILL; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                let (sy, sx) = (sy.round_ties_even(), sx.round_ties_even());
                if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                    let (sy, sx) = (sy as usize, sx as usize);
                    for c in 0..3 {
                        out[self.idx(y, x, c)] = self.data[self.idx(sy, sx, c)];
                    }
                }
            }
        }
        self.data = out;
    }

    pub fn randaug(&mut self, op: &RandAugOp) {
        let level = op.magnitude.min(MAX_MAGNITUDE) as f64 / MAX_MAGNITUDE as f64;
        let sign = if op.negate { -1.0 } else { 1.0 };
        let enhance = (1.0 + sign * 0.9 * level).max(0.0);
        let (cy, cx) = ((self.height - 1) as f64 / 2.0, (self.width - 1) as f64 / 2.0);
        match op.kind {
            RandAugKind::Identity => {}
            RandAugKind::AutoContrast => self.auto_contrast(),
            RandAugKind::Equalize => self.equalize(),
            RandAugKind::Rotate => {
                let theta = (sign * 30.0 * level).to_radians();
                let (s, c) = (libm::sin(theta), libm::cos(theta));
                self.remap(|y, x| {
                    let (dy, dx) = (y - cy, x - cx);
                    (-s * dx + c * dy + cy, c * dx + s * dy + cx)
                });
            }
            RandAugKind::Solarize => self.solarize((256.0 * (1.0 - level)) as f32),
            RandAugKind::Color => self.enhance_color(enhance),
            RandAugKind::Posterize => self.posterize(8 - (4.0 * level) as u32),
            RandAugKind::Contrast => self.enhance_contrast(enhance),
            RandAugKind::Brightness => self.enhance_brightness(enhance),
            RandAugKind::Sharpness => self.enhance_sharpness(enhance),
            RandAugKind::ShearX => {
                let k = sign * 0.3 * level;
                self.remap(|y, x| (y, x + k * y));
            }
            RandAugKind::ShearY => {
                let k = sign * 0.3 * level;
                self.remap(|y, x| (y + k * x, x));
            }
            RandAugKind::TranslateX => {
                let t = (sign * 0.45 * level * self.width as f64).round_ties_even();
                self.remap(|y, x| (y, x + t));
            }
            RandAugKind::TranslateY => {
                let t = (sign * 0.45 * level * self.height as f64).round_ties_even();
                self.remap(|y, x| (y + t, x));
            }
        }
    }

    /// `(v / 255 − mean) / std` per channel, to planar layout.
    pub fn normalize(&self) -> AugImage {
        let s = self.height;
        let mut data = vec![0.0f32; 3 * s * s];
        for y in 0..s {
            for x in 0..s {
                for c in 0..3 {
                    let v = self.data[self.idx(y, x, c)] / 255.0;
                    data[(c * s + y) * s + x] = (v - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
                }
            }
        }
        AugImage { size: s, data }
    }
}
