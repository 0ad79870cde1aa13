//! Sealed epoch files: atomic writer and random-access reader.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crc::{Crc, Digest, CRC_64_XZ};

use super::header::{EpochHeader, HEADER_SIZE, TRAILER_SIZE};
use super::record::CacheRecord;
use crate::error::{Error, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub(crate) const FILE_CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Conventional file name of epoch `epoch` inside a cache directory.
pub fn epoch_file_name(epoch: u32) -> String {
    format!("epoch-{epoch:05}.tvc")
}

pub fn epoch_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(epoch_file_name(epoch))
}

struct Sink<'a> {
    out: BufWriter<File>,
    digest: Digest<'a, u64>,
}

impl Sink<'_> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.digest.update(bytes);
        self.out.write_all(bytes)
    }
}

/// Writes one epoch file atomically: the bytes go to a temporary sibling,
/// which is synced and then renamed over `path`. Records must arrive in
/// sample-id order; exactly `header.num_samples` of them.
pub fn write_epoch(
    path: &Path,
    header: &EpochHeader,
    records: impl IntoIterator<Item = CacheRecord>,
) -> Result<()> {
    header.validate()?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidRunConfig(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        name.to_string_lossy(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = write_to(&tmp, header, records).and_then(|()| {
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        // Make the rename itself durable.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    });
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_to(
    tmp: &Path,
    header: &EpochHeader,
    records: impl IntoIterator<Item = CacheRecord>,
) -> Result<()> {
    let io = |e| Error::io(tmp, e);
    let file = File::create(tmp).map_err(io)?;
    let mut sink = Sink {
        out: BufWriter::with_capacity(1 << 16, file),
        digest: FILE_CRC.digest(),
    };
    sink.put(&header.encode()).map_err(io)?;
    let mut count = 0u64;
    let mut buf = Vec::with_capacity(header.record_size());
    for rec in records {
        count += 1;
        if count > header.num_samples {
            continue;
        }
        rec.check(header)?;
        buf.clear();
        rec.encode_into(header, &mut buf);
        sink.put(&buf).map_err(io)?;
    }
    if count != header.num_samples {
        return Err(Error::RecordCountMismatch {
            expected: header.num_samples,
            actual: count,
        });
    }
    let crc = sink.digest.finalize();
    sink.out.write_all(&crc.to_le_bytes()).map_err(io)?;
    let file = sink.out.into_inner().map_err(|e| io(e.into_error()))?;
    file.sync_all().map_err(io)
}

/// Validated, read-only handle on a sealed epoch file. `read_record` uses
/// positioned reads, so one reader serves many threads.
#[derive(Debug)]
pub struct EpochReader {
    path: PathBuf,
    file: File,
    header: EpochHeader,
}

impl EpochReader {
    /// Opens `path` and verifies the header, the file size and the
    /// whole-file checksum.
    pub fn open(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let file = File::open(path).map_err(io)?;
        let len = file.metadata().map_err(io)?.len();
        if len < (HEADER_SIZE + TRAILER_SIZE) as u64 {
            return Err(Error::CacheCorrupt(format!("file too short ({len} bytes)")));
        }
        let mut hb = [0u8; HEADER_SIZE];
        file.read_exact_at(&mut hb, 0).map_err(io)?;
        let header = EpochHeader::decode(&hb)?;
        if header.file_size() != len {
            return Err(Error::CacheCorrupt(format!(
                "file is {len} bytes, header implies {}",
                header.file_size()
            )));
        }
        let mut digest = FILE_CRC.digest();
        let mut reader = BufReader::with_capacity(1 << 16, &file);
        let mut remaining = len - TRAILER_SIZE as u64;
        let mut chunk = vec![0u8; 1 << 16];
        while remaining > 0 {
            let n = remaining.min(chunk.len() as u64) as usize;
            reader.read_exact(&mut chunk[..n]).map_err(io)?;
            digest.update(&chunk[..n]);
            remaining -= n as u64;
        }
        let mut tb = [0u8; TRAILER_SIZE];
        reader.read_exact(&mut tb).map_err(io)?;
        if digest.finalize() != u64::from_le_bytes(tb) {
            return Err(Error::CacheCorrupt("file checksum mismatch".into()));
        }
        Ok(EpochReader {
            path: path.to_path_buf(),
            file,
            header,
        })
    }

    pub fn header(&self) -> &EpochHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn num_samples(&self) -> u64 {
        self.header.num_samples
    }

    pub fn read_record(&self, sample_id: u64) -> Result<CacheRecord> {
        if sample_id >= self.header.num_samples {
            return Err(Error::SampleOutOfRange {
                sample: sample_id,
                num_samples: self.header.num_samples,
            });
        }
        let size = self.header.record_size();
        let mut buf = vec![0u8; size];
        let offset = HEADER_SIZE as u64 + sample_id * size as u64;
        self.file
            .read_exact_at(&mut buf, offset)
            .map_err(|e| Error::io(&self.path, e))?;
        CacheRecord::decode(&self.header, &buf)
    }

    /// Sequential scan in sample-id order, one record in memory at a time.
    pub fn records(&self) -> impl Iterator<Item = Result<CacheRecord>> + '_ {
        (0..self.header.num_samples).map(move |i| self.read_record(i))
    }
}
