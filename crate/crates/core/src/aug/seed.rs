//! The encoder side of augmentation replay: `(run_seed, epoch, sample_id)`
//! → a 4-byte seed.

use serde::{Deserialize, Serialize};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SHUFFLE_DOMAIN: u64 = 0x5348_5546_464C_4521;

/// SplitMix64 output function: one Weyl increment then the avalanche
/// finalizer.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The seed stored for one sample in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugSeed {
    pub d0: u32,
    pub epoch: u32,
    pub sample_id: u64,
}

impl AugSeed {
    /// Rebuilds a seed read back from storage.
    pub fn stored(d0: u32, epoch: u32, sample_id: u64) -> Self {
        AugSeed {
            d0,
            epoch,
            sample_id,
        }
    }

    /// Serialized form: exactly four little-endian bytes.
    pub fn to_bytes(self) -> [u8; 4] {
        self.d0.to_le_bytes()
    }
}

/// `d0 = low32(sm(sm(sm(run_seed) ^ epoch) ^ sample_id))` with `sm` the
/// SplitMix64 output function.
pub fn encode(run_seed: u64, epoch: u32, sample_id: u64) -> AugSeed {
    let h = splitmix64(splitmix64(splitmix64(run_seed) ^ epoch as u64) ^ sample_id);
    AugSeed {
        d0: h as u32,
        epoch,
        sample_id,
    }
}

/// Seed of the epoch's shuffle and mix pairing. Recorded in every epoch
/// file header.
pub fn shuffle_seed(run_seed: u64, epoch: u32) -> u64 {
    splitmix64(splitmix64(run_seed ^ SHUFFLE_DOMAIN) ^ epoch as u64)
}
