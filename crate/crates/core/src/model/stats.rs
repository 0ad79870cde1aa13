//! Parameter and multiply-accumulate accounting.
//!
//! MACs follow the usual convention: convolutions count
//! `Cout·Cin/groups·k²·Hout·Wout`, linear layers `in·out` per token, and
//! attention adds `2·D·L²` per window of `L` tokens (logits and the
//! weighted sum). Normalization, activations, softmax, pooling and bias
//! additions are not counted.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::TinyVit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub params: u64,
    pub macs: u64,
    pub resolution: usize,
}

impl ModelStats {
    pub fn of(config: &ModelConfig) -> Self {
        ModelStats {
            params: analytic_params(config),
            macs: analytic_macs(config),
            resolution: config.resolution,
        }
    }
}

#[derive(Default)]
struct Tally {
    params: u64,
    macs: u64,
}

impl Tally {
    fn conv_bn(&mut self, cin: usize, cout: usize, k: usize, groups: usize, out_side: usize) {
        let w = (cout * (cin / groups) * k * k) as u64;
        self.params += w + 2 * cout as u64;
        self.macs += w * (out_side * out_side) as u64;
    }

    fn linear(&mut self, inp: usize, out: usize, tokens: usize) {
        self.params += (inp * out + out) as u64;
        self.macs += (inp * out * tokens) as u64;
    }

    fn norm(&mut self, c: usize) {
        self.params += 2 * c as u64;
    }
}

/// Sum of squared window populations over a `side×side` grid.
fn window_population_sq(side: usize, window: usize) -> u64 {
    let mut spans = Vec::new();
    let mut start = 0;
    while start < side {
        spans.push((window.min(side - start)) as u64);
        start += window;
    }
    let s2: u64 = spans.iter().map(|s| s * s).sum();
    // Windows are products of spans along y and x.
    s2 * s2
}

fn tally(config: &ModelConfig) -> Tally {
    let c = &config.contraction;
    let d = c.embed_dims;
    let r = config.resolution;
    let res = config.stage_resolutions();
    let mut t = Tally::default();
    t.conv_bn(3, d[0] / 2, 3, 1, r / 2);
    t.conv_bn(d[0] / 2, d[0], 3, 1, res[0]);
    let hid = c.mbconv_hidden();
    for _ in 0..c.depths[0] {
        t.conv_bn(d[0], hid, 1, 1, res[0]);
        t.conv_bn(hid, hid, 3, hid, res[0]);
        t.conv_bn(hid, d[0], 1, 1, res[0]);
    }
    for s in 1..4 {
        let (din, dim, side) = (d[s - 1], d[s], res[s]);
        t.conv_bn(din, dim, 1, 1, res[s - 1]);
        t.conv_bn(dim, dim, 3, dim, side);
        t.conv_bn(dim, dim, 1, 1, side);
        let tokens = side * side;
        let heads = c.num_heads(s);
        let w = c.window_sizes[s - 1];
        let mlp = c.mlp_hidden(s);
        for _ in 0..c.depths[s] {
            t.norm(dim);
            t.linear(dim, 3 * dim, tokens);
            if config.attention_bias {
                t.params += (heads * (2 * w - 1) * (2 * w - 1)) as u64;
            }
            t.macs += 2 * dim as u64 * window_population_sq(side, w);
            t.linear(dim, dim, tokens);
            t.conv_bn(dim, dim, 3, dim, side);
            t.norm(dim);
            t.linear(dim, mlp, tokens);
            t.linear(mlp, dim, tokens);
        }
    }
    t.norm(d[3]);
    t.linear(d[3], config.num_classes, 1);
    t
}

/// Closed-form parameter count of `config`.
pub fn analytic_params(config: &ModelConfig) -> u64 {
    tally(config).params
}

/// MACs of one forward pass at `config.resolution`.
pub fn analytic_macs(config: &ModelConfig) -> u64 {
    tally(config).macs
}

/// Parameter count by walking the allocated tensors of a built model.
pub fn count_params(model: &TinyVit) -> u64 {
    model.layout().specs.iter().map(|s| s.len() as u64).sum()
}

/// MACs of `model`'s graph at `resolution` (windows unchanged).
pub fn count_macs(model: &TinyVit, resolution: usize) -> u64 {
    let mut c = model.config().clone();
    c.resolution = resolution;
    analytic_macs(&c)
}
