//! Storage arithmetic for the cache format.

use serde::Serialize;

use super::header::{index_width, ValuePrecision, HEADER_SIZE, TRAILER_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StorageEstimate {
    pub bytes_total: u64,
    pub bytes_per_record: u32,
}

impl StorageEstimate {
    /// Decimal gigabytes.
    pub fn gigabytes(&self) -> f64 {
        self.bytes_total as f64 / 1e9
    }
}

/// Exact size of `epochs` epoch files of `num_samples` records each:
/// `num_samples · epochs · record_size + epochs · (header + trailer)`.
pub fn estimate_storage(
    num_classes: u32,
    k: u32,
    num_samples: u64,
    epochs: u32,
    precision: ValuePrecision,
) -> Result<StorageEstimate> {
    if k == 0 {
        return Err(Error::KNotPositive);
    }
    if k > num_classes {
        return Err(Error::KExceedsClassCount {
            k: k as usize,
            classes: num_classes as usize,
        });
    }
    let bytes_per_record = 4 + k * (index_width(num_classes) + precision.width()) as u32;
    let per_file = (HEADER_SIZE + TRAILER_SIZE) as u64;
    Ok(StorageEstimate {
        bytes_total: num_samples * epochs as u64 * bytes_per_record as u64
            + epochs as u64 * per_file,
        bytes_per_record,
    })
}
