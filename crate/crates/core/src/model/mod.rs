//! The TinyViT model family.

mod adapt;
mod attention;
mod config;
mod io;
mod layers;
mod net;
mod params;
mod stats;

pub use adapt::{adapt_resolution, adapted_windows, scale_window};
pub use attention::{interpolate_bias, window_attention, window_attention_backward, AttnShape};
pub use config::{ContractionConfig, ModelConfig, PRESETS};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use layers::{gelu, Mode, BN_MOMENTUM, NORM_EPS};
pub use net::{Batch, Tape, TinyVit};
pub use params::{Layout, ParamKind, ParamSpec};
pub use stats::{analytic_macs, analytic_params, count_macs, count_params, ModelStats};
