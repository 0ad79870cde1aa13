//! Heat-map rendering of a correlation matrix.

use image::{Rgb, RgbImage};
use tinyvit::distill::CorrelationMatrix;

/// Side of the rendered image is about this many pixels.
const TARGET_SIDE: usize = 512;

/// Diverging blue–white–red map over [-1, 1].
fn color(v: f64) -> Rgb<u8> {
    let v = v.clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    if v >= 0.0 {
        Rgb([255, fade(v), fade(v)])
    } else {
        Rgb([fade(-v), fade(-v), 255])
    }
}

pub fn render(m: &CorrelationMatrix) -> RgbImage {
    let c = m.num_classes;
    let cell = (TARGET_SIDE / c.max(1)).max(1);
    let side = (c * cell) as u32;
    RgbImage::from_fn(side, side, |x, y| {
        let (i, j) = (y as usize / cell, x as usize / cell);
        color(m.get(i, j))
    })
}
