//! Contraction factors, build options and their plain-text form.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// The architecture knobs of the family.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ContractionConfig {
    /// γD1–γD4.
    pub embed_dims: [usize; 4],
    /// γN1–γN4.
    pub depths: [usize; 4],
    /// γW2–γW4; stage 1 is convolutional.
    pub window_sizes: [usize; 3],
    /// γR, the MBConv expansion ratio.
    pub mbconv_expansion: f64,
    /// γM.
    pub mlp_ratio: f64,
    /// γE, the per-head dimension.
    pub head_dim: usize,
}

impl ContractionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embed_dims.iter().any(|&d| d == 0) {
            return bad("embed dims must be positive".into());
        }
        if self.embed_dims[0] % 2 != 0 {
            return bad(format!("γD1 = {} must be even", self.embed_dims[0]));
        }
        if self.depths.iter().any(|&d| d == 0) {
            return bad("depths must be positive".into());
        }
        if self.window_sizes.iter().any(|&w| w == 0) {
            return bad("window sizes must be positive".into());
        }
        for (name, r) in [("γR", self.mbconv_expansion), ("γM", self.mlp_ratio)] {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.head_dim == 0 {
            return bad("γE must be positive".into());
        }
        for (i, &d) in self.embed_dims.iter().enumerate().skip(1) {
            if d % self.head_dim != 0 {
                return Err(Error::HeadDimensionMismatch(format!(
                    "γD{} = {d} is not divisible by γE = {}",
                    i + 1,
                    self.head_dim
                )));
            }
        }
        Ok(())
    }

    pub fn num_heads(&self, stage: usize) -> usize {
        self.embed_dims[stage] / self.head_dim
    }

    pub fn mbconv_hidden(&self) -> usize {
        scaled(self.embed_dims[0], self.mbconv_expansion)
    }

    pub fn mlp_hidden(&self, stage: usize) -> usize {
        scaled(self.embed_dims[stage], self.mlp_ratio)
    }

    /// Window sizes of all four stages. Stage 1 has no attention; its
    /// nominal window follows stage 2.
    pub fn nominal_windows(&self) -> [usize; 4] {
        let w = self.window_sizes;
        [w[0], w[0], w[1], w[2]]
    }
}

fn scaled(d: usize, r: f64) -> usize {
    ((d as f64 * r).round() as usize).max(1)
}

/// Everything needed to build a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub contraction: ContractionConfig,
    pub num_classes: usize,
    pub resolution: usize,
    /// Learned relative-position biases in attention; off for ablations.
    pub attention_bias: bool,
    /// Stochastic depth rate at the deepest block, ramped linearly.
    pub drop_path_rate: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.contraction.validate()?;
        if self.resolution == 0 || self.resolution % 32 != 0 {
            return Err(Error::ResolutionMisaligned(self.resolution));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::InvalidConfig("drop_path_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Side lengths of the four stage grids: `R/4, R/8, R/16, R/32`.
    pub fn stage_resolutions(&self) -> [usize; 4] {
        let r = self.resolution;
        [r / 4, r / 8, r / 16, r / 32]
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (dims, depths, windows, ratio, head, classes, res) = match name {
            "tinyvit-5m" => ([64, 128, 160, 320], [2, 2, 6, 2], [7, 14, 7], 4.0, 32, 1000, 224),
            "tinyvit-11m" => ([64, 128, 256, 448], [2, 2, 6, 2], [7, 14, 7], 4.0, 32, 1000, 224),
            "tinyvit-21m" => ([96, 192, 384, 576], [2, 2, 6, 2], [7, 14, 7], 4.0, 32, 1000, 224),
            "micro" => ([8, 16, 32, 48], [1, 1, 2, 1], [2, 2, 1], 2.0, 8, 10, 32),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?} (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(ModelConfig {
            contraction: ContractionConfig {
                embed_dims: dims,
                depths,
                window_sizes: windows,
                mbconv_expansion: ratio,
                mlp_ratio: ratio,
                head_dim: head,
            },
            num_classes: classes,
            resolution: res,
            attention_bias: true,
            drop_path_rate: 0.0,
        })
    }

    /// A preset name, or else a path to a config file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|e| Error::io(name_or_path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let c = &self.contraction;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "embed_dims = {}", list(&c.embed_dims));
        let _ = writeln!(s, "depths = {}", list(&c.depths));
        let _ = writeln!(s, "window_sizes = {}", list(&c.window_sizes));
        let _ = writeln!(s, "mbconv_expansion = {}", c.mbconv_expansion);
        let _ = writeln!(s, "mlp_ratio = {}", c.mlp_ratio);
        let _ = writeln!(s, "head_dim = {}", c.head_dim);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "attention_bias = {}", self.attention_bias);
        let _ = writeln!(s, "drop_path_rate = {}", self.drop_path_rate);
        s
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys take
    /// the values of the 21M preset, except that every contraction factor
    /// must be given.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::preset("tinyvit-21m")?;
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::InvalidConfig(format!("line {}: {m}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(&format!("bad integer {v:?}")));
            let real = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad number {v:?}")));
            let ints = |v: &str, n: usize| -> Result<Vec<usize>> {
                let xs = v.split(',').map(|x| int(x.trim())).collect::<Result<Vec<_>>>()?;
                if xs.len() != n {
                    return Err(bad(&format!("{key} needs {n} values")));
                }
                Ok(xs)
            };
            let c = &mut cfg.contraction;
            match key {
                "embed_dims" => c.embed_dims.copy_from_slice(&ints(value, 4)?),
                "depths" => c.depths.copy_from_slice(&ints(value, 4)?),
                "window_sizes" => c.window_sizes.copy_from_slice(&ints(value, 3)?),
                "mbconv_expansion" => c.mbconv_expansion = real(value)?,
                "mlp_ratio" => c.mlp_ratio = real(value)?,
                "head_dim" => c.head_dim = int(value)?,
                "num_classes" => cfg.num_classes = int(value)?,
                "resolution" => cfg.resolution = int(value)?,
                "attention_bias" => {
                    cfg.attention_bias = value.parse().map_err(|_| bad("expected true or false"))?
                }
                "drop_path_rate" => cfg.drop_path_rate = real(value)?,
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
            if !seen.insert(key.to_string()) {
                return Err(bad(&format!("duplicate key {key:?}")));
            }
        }
        for key in [
            "embed_dims",
            "depths",
            "window_sizes",
            "mbconv_expansion",
            "mlp_ratio",
            "head_dim",
        ] {
            if !seen.contains(key) {
                return Err(Error::InvalidConfig(format!("missing key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const PRESETS: [&str; 4] = ["tinyvit-5m", "tinyvit-11m", "tinyvit-21m", "micro"];
