//! One-notch contractions of a configuration.

use crate::model::{analytic_params, ContractionConfig, ModelConfig};

const DIM_STEPS: [usize; 4] = [8, 16, 16, 32];
const RATIO_STEP: f64 = 0.5;
const RATIO_FLOOR: f64 = 2.0;
const HEAD_STEP: usize = 8;
const HEAD_FLOOR: usize = 8;
/// Window grid; a window only ever moves to the next smaller entry.
const WINDOWS: [usize; 2] = [7, 14];

/// Steps stage `s`'s width down. Stages 2–4 must stay multiples of the
/// head dimension, so the step repeats until the width divides again.
fn shrink_dim(c: &ContractionConfig, s: usize) -> Option<usize> {
    let floor = c.head_dim.max(1);
    let mut d = c.embed_dims[s];
    loop {
        d = d.checked_sub(DIM_STEPS[s])?;
        if d < floor {
            return None;
        }
        if s == 0 || d % c.head_dim == 0 {
            return Some(d);
        }
    }
}

fn shrink_window(w: usize) -> Option<usize> {
    WINDOWS.iter().rev().copied().find(|&g| g < w)
}

fn shrink_ratio(r: f64) -> Option<f64> {
    let next = r - RATIO_STEP;
    (next >= RATIO_FLOOR - 1e-12).then_some(next)
}

/// Every config one factor-step below `config` that validates and has
/// strictly fewer parameters, in factor order, without duplicates.
pub fn neighbors(config: &ModelConfig) -> Vec<ModelConfig> {
    let base = &config.contraction;
    let mut out: Vec<ContractionConfig> = Vec::new();
    let mut push = |c: ContractionConfig| out.push(c);
    for s in 0..4 {
        if let Some(d) = shrink_dim(base, s) {
            let mut c = base.clone();
            c.embed_dims[s] = d;
            push(c);
        }
    }
    for s in 0..4 {
        if base.depths[s] > 1 {
            let mut c = base.clone();
            c.depths[s] -= 1;
            push(c);
        }
    }
    for i in 0..3 {
        if let Some(w) = shrink_window(base.window_sizes[i]) {
            let mut c = base.clone();
            c.window_sizes[i] = w;
            push(c);
        }
    }
    if let Some(r) = shrink_ratio(base.mbconv_expansion) {
        push(ContractionConfig {
            mbconv_expansion: r,
            ..base.clone()
        });
    }
    if let Some(r) = shrink_ratio(base.mlp_ratio) {
        push(ContractionConfig {
            mlp_ratio: r,
            ..base.clone()
        });
    }
    if base.head_dim >= HEAD_FLOOR + HEAD_STEP {
        push(ContractionConfig {
            head_dim: base.head_dim - HEAD_STEP,
            ..base.clone()
        });
    }
    let parent = analytic_params(config);
    let mut result: Vec<ModelConfig> = Vec::new();
    for c in out {
        let cand = ModelConfig {
            contraction: c,
            ..config.clone()
        };
        if cand.validate().is_err() || analytic_params(&cand) >= parent {
            continue;
        }
        if !result.iter().any(|r| r.contraction == cand.contraction) {
            result.push(cand);
        }
    }
    result
}
