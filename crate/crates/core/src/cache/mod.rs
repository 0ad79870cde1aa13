//! Per-epoch soft-label cache files.
//!
//! Layout (all little-endian): a 56-byte [`EpochHeader`], `num_samples`
//! fixed-size records in sample-id order, then an 8-byte CRC-64/XZ of every
//! preceding byte. See `FORMAT.md` at the repository root.

mod estimate;
mod file;
mod header;
mod inspect;
mod record;

pub use estimate::{estimate_storage, StorageEstimate};
pub use file::{epoch_file_name, epoch_path, write_epoch, EpochReader};
pub use header::{
    index_width, EpochHeader, ValuePrecision, FORMAT_VERSION, HEADER_SIZE, MAGIC,
    NARROW_INDEX_LIMIT, TRAILER_SIZE,
};
pub use inspect::{inspect, InspectSummary};
pub use record::{quantize, CacheRecord};
