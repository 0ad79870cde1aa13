//! Seed-driven augmentation replay.
//!
//! The teacher pass picks `d0 = encode(run_seed, epoch, sample_id)` for each
//! sample, decodes it into [`AugParams`] and renders them with [`apply`].
//! The student pass reads `d0` back from the cache and goes through the same
//! decode and render path, so both see bitwise-identical images.

mod apply;
mod params;
mod pcg;
mod seed;

pub use apply::{apply, mixup, CHANNEL_MEAN, CHANNEL_STD};
pub use params::{
    decode, AugParams, ColorJitter, Erase, EraseFill, MixChoice, MixMode, MixParams, MixSpec,
    PipelineSpec, PixelBox, RandAugKind, RandAugOp, AUG_STREAM, MAX_MAGNITUDE, PIPELINE_VERSION,
};
pub use pcg::{pcg_next_u32, PcgState};
pub use seed::{encode, shuffle_seed, splitmix64, AugSeed};
