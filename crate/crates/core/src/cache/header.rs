//! The fixed 56-byte epoch header.

use crc::{Crc, CRC_32_ISO_HDLC};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"TVITCACH";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_SIZE: usize = 56;
pub const TRAILER_SIZE: usize = 8;

const HEADER_CRC: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

/// Largest class count whose indices fit the narrow index width.
pub const NARROW_INDEX_LIMIT: u32 = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuePrecision {
    Half,
    Single,
}

impl ValuePrecision {
    pub fn width(self) -> usize {
        match self {
            ValuePrecision::Half => 2,
            ValuePrecision::Single => 4,
        }
    }

    fn code(self) -> u8 {
        match self {
            ValuePrecision::Half => 0,
            ValuePrecision::Single => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ValuePrecision::Half),
            1 => Some(ValuePrecision::Single),
            _ => None,
        }
    }
}

impl std::fmt::Display for ValuePrecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ValuePrecision::Half => "half",
            ValuePrecision::Single => "single",
        })
    }
}

impl std::str::FromStr for ValuePrecision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" | "f16" => Ok(ValuePrecision::Half),
            "single" | "f32" => Ok(ValuePrecision::Single),
            other => Err(Error::InvalidHeader(format!("unknown value precision {other:?}"))),
        }
    }
}

/// Per-epoch file header. The checksum is not a field: it is computed on
/// encode and verified on decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochHeader {
    pub format_version: u16,
    pub pipeline_version: u16,
    pub epoch: u32,
    pub run_seed: u64,
    pub num_samples: u64,
    pub num_classes: u32,
    pub k: u32,
    pub value_precision: ValuePrecision,
    pub shuffle_seed: u64,
}

impl EpochHeader {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidHeader("num_samples must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidHeader("num_classes must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::KNotPositive);
        }
        if self.k > self.num_classes {
            return Err(Error::KExceedsClassCount {
                k: self.k as usize,
                classes: self.num_classes as usize,
            });
        }
        Ok(())
    }

    /// 2 bytes when every index fits `u16`, 4 otherwise.
    pub fn index_width(&self) -> usize {
        index_width(self.num_classes)
    }

    pub fn record_size(&self) -> usize {
        4 + self.k as usize * (self.index_width() + self.value_precision.width())
    }

    pub fn file_size(&self) -> u64 {
        (HEADER_SIZE + TRAILER_SIZE) as u64 + self.num_samples * self.record_size() as u64
    }

    pub fn encode(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        b[0..8].copy_from_slice(&MAGIC);
        b[8..10].copy_from_slice(&self.format_version.to_le_bytes());
        b[10..12].copy_from_slice(&self.pipeline_version.to_le_bytes());
        b[12..16].copy_from_slice(&self.epoch.to_le_bytes());
        b[16..24].copy_from_slice(&self.run_seed.to_le_bytes());
        b[24..32].copy_from_slice(&self.num_samples.to_le_bytes());
        b[32..36].copy_from_slice(&self.num_classes.to_le_bytes());
        b[36..40].copy_from_slice(&self.k.to_le_bytes());
        b[40] = self.value_precision.code();
        // 41..44 reserved, zero.
        b[44..52].copy_from_slice(&self.shuffle_seed.to_le_bytes());
        let crc = HEADER_CRC.checksum(&b[..52]);
        b[52..56].copy_from_slice(&crc.to_le_bytes());
        b
    }

    /// Parses and verifies a header: magic, then checksum, then version.
    pub fn decode(b: &[u8; HEADER_SIZE]) -> Result<Self> {
        if b[0..8] != MAGIC {
            return Err(Error::CacheCorrupt("bad magic".into()));
        }
        let stored = u32::from_le_bytes(b[52..56].try_into().unwrap());
        if HEADER_CRC.checksum(&b[..52]) != stored {
            return Err(Error::CacheCorrupt("header checksum mismatch".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes(b[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let format_version = u16_at(8);
        if format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(format_version));
        }
        let value_precision = ValuePrecision::from_code(b[40])
            .ok_or_else(|| Error::CacheCorrupt(format!("unknown precision code {}", b[40])))?;
        if b[41..44] != [0, 0, 0] {
            return Err(Error::CacheCorrupt("reserved bytes not zero".into()));
        }
        let header = EpochHeader {
            format_version,
            pipeline_version: u16_at(10),
            epoch: u32_at(12),
            run_seed: u64_at(16),
            num_samples: u64_at(24),
            num_classes: u32_at(32),
            k: u32_at(36),
            value_precision,
            shuffle_seed: u64_at(44),
        };
        header
            .validate()
            .map_err(|e| Error::CacheCorrupt(format!("inconsistent header: {e}")))?;
        Ok(header)
    }
}

pub fn index_width(num_classes: u32) -> usize {
    if num_classes <= NARROW_INDEX_LIMIT {
        2
    } else {
        4
    }
}
