//! Class-conditional Gaussian-blob images.
//!
//! Every class owns a background color, a blob color, a blob position and
//! width, and an oriented sinusoidal texture. Samples jitter all of these
//! and add pixel noise, so classes overlap somewhat in pixel space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Per-pixel noise standard deviation, in pixel units.
    pub noise: f64,
    /// Scale of the per-sample jitter of the class parameters.
    pub jitter: f64,
    /// Fraction of stored labels replaced by a uniformly random class.
    pub label_noise: f64,
}

impl SynthSpec {
    pub fn new(num_classes: usize, per_class: usize, image_size: usize, seed: u64) -> Self {
        SynthSpec {
            num_classes,
            per_class,
            image_size,
            seed,
            noise: 12.0,
            jitter: 1.0,
            label_noise: 0.0,
        }
    }
}

struct ClassStyle {
    background: [f64; 3],
    blob: [f64; 3],
    center: (f64, f64),
    sigma: f64,
    freq: f64,
    angle: f64,
    texture: f64,
    phase: f64,
}

fn style(rng: &mut ChaCha8Rng, s: f64) -> ClassStyle {
    let mut color = || [0; 3].map(|_: i32| rng.random_range(40.0..215.0));
    let background = color();
    let blob = color();
    ClassStyle {
        background,
        blob,
        center: (rng.random_range(0.25..0.75) * s, rng.random_range(0.25..0.75) * s),
        sigma: rng.random_range(0.12..0.25) * s,
        freq: rng.random_range(0.15..0.6),
        angle: rng.random_range(0.0..std::f64::consts::PI),
        texture: rng.random_range(10.0..35.0),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

/// Sample `i` belongs to class `i mod C`. Deterministic in `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    if spec.num_classes == 0 || spec.per_class == 0 || spec.image_size == 0 {
        return Err(Error::Corpus("synthetic corpus sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.label_noise) || spec.noise < 0.0 || spec.jitter < 0.0 {
        return Err(Error::Corpus("invalid synthetic corpus noise settings".into()));
    }
    let s = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let styles: Vec<ClassStyle> = (0..spec.num_classes).map(|_| style(&mut rng, s as f64)).collect();
    let n = spec.num_classes * spec.per_class;
    let mut pixels = Vec::with_capacity(n * s * s * 3);
    let mut labels = Vec::with_capacity(n);
    let unit = Normal::new(0.0, 1.0).unwrap();
    for i in 0..n {
        let class = i % spec.num_classes;
        let st = &styles[class];
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(i as u64 + 1);
        let j = spec.jitter;
        let cx = st.center.0 + j * 0.08 * s as f64 * unit.sample(&mut r);
        let cy = st.center.1 + j * 0.08 * s as f64 * unit.sample(&mut r);
        let sigma = st.sigma * (1.0 + j * 0.15 * unit.sample(&mut r)).max(0.3);
        let tint = [0; 3].map(|_: i32| j * 12.0 * unit.sample(&mut r));
        let phase = st.phase + j * 0.6 * unit.sample(&mut r);
        let (ca, sa) = (st.angle.cos(), st.angle.sin());
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let wave = st.texture * (st.freq * (x as f64 * ca + y as f64 * sa) + phase).sin();
                for c in 0..3 {
                    let v = st.background[c] + (st.blob[c] - st.background[c]) * g + tint[c] + wave
                        + spec.noise * unit.sample(&mut r);
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        let label = if spec.label_noise > 0.0 && r.random::<f64>() < spec.label_noise {
            r.random_range(0..spec.num_classes) as u32
        } else {
            class as u32
        };
        labels.push(label);
    }
    Corpus::new(spec.num_classes, (s, s), pixels, Some(labels))
}
