//! Changing the input resolution of a built model.

use super::attention::interpolate_bias;
use super::net::TinyVit;
use crate::error::{Error, Result};

/// `round(w · new / old)`, at least 1.
pub fn scale_window(w: usize, old: usize, new: usize) -> usize {
    ((w as f64 * new as f64 / old as f64).round() as usize).max(1)
}

/// Nominal windows of all four stages after moving to `new_resolution`.
pub fn adapted_windows(model: &TinyVit, new_resolution: usize) -> Result<[usize; 4]> {
    if new_resolution == 0 || new_resolution % 32 != 0 {
        return Err(Error::ResolutionMisaligned(new_resolution));
    }
    let old = model.config().resolution;
    Ok(model
        .config()
        .contraction
        .nominal_windows()
        .map(|w| scale_window(w, old, new_resolution)))
}

/// Rescales window sizes with the resolution and resamples every attention
/// bias table to the new `(2w′−1)²` grid. All other parameters and buffers
/// are carried over unchanged.
pub fn adapt_resolution(model: &TinyVit, new_resolution: usize) -> Result<TinyVit> {
    let w = adapted_windows(model, new_resolution)?;
    let mut config = model.config().clone();
    config.resolution = new_resolution;
    config.contraction.window_sizes = [w[1], w[2], w[3]];
    let old = model.config().contraction.window_sizes;
    let new = config.contraction.window_sizes;
    model.rebuild(config, |name, values| {
        if !name.ends_with(".attn.attention_biases") {
            return values.to_vec();
        }
        let stage: usize = name
            .strip_prefix("layers.")
            .and_then(|r| r.split('.').next())
            .and_then(|s| s.parse().ok())
            .expect("attention biases live in layers.<stage>");
        let (s, t) = (2 * old[stage - 1] - 1, 2 * new[stage - 1] - 1);
        interpolate_bias(values, values.len() / (s * s), s, t)
    })
}
