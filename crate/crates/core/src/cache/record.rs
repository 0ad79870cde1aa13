//! One `(d0, sparse label)` record and its byte encoding.

use half::f16;

use super::header::{EpochHeader, ValuePrecision};
use crate::error::{Error, Result};
use crate::label_codec::SparseLabel;

/// A stored record. Indices are ascending by class; `values[i]` belongs to
/// `indices[i]` and holds exactly the number the file stores.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub d0: u32,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

/// Rounds toward zero into the stored precision, so quantization never
/// increases the total stored mass.
pub fn quantize(v: f64, precision: ValuePrecision) -> f32 {
    match precision {
        ValuePrecision::Half => {
            let h = f16::from_f64(v);
            let h = if h.to_f64() > v && v >= 0.0 && h.to_bits() > 0 {
                f16::from_bits(h.to_bits() - 1)
            } else {
                h
            };
            h.to_f32()
        }
        ValuePrecision::Single => {
            let s = v as f32;
            if (s as f64) > v && v >= 0.0 && s.to_bits() > 0 {
                f32::from_bits(s.to_bits() - 1)
            } else {
                s
            }
        }
    }
}

impl CacheRecord {
    /// Canonical stored form of a sparse label.
    pub fn from_label(d0: u32, label: &SparseLabel, precision: ValuePrecision) -> Self {
        let mut pairs: Vec<(u32, f32)> = label
            .indices()
            .iter()
            .zip(label.values())
            .map(|(&i, &v)| (i, quantize(v, precision)))
            .collect();
        pairs.sort_unstable_by_key(|p| p.0);
        CacheRecord {
            d0,
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Back to rank order (largest value first, lower class on ties).
    pub fn to_label(&self) -> Result<SparseLabel> {
        SparseLabel::from_pairs(
            self.indices
                .iter()
                .zip(&self.values)
                .map(|(&i, &v)| (i, v as f64))
                .collect(),
        )
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// The rank-1 class.
    pub fn top_class(&self) -> u32 {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] > self.values[best] {
                best = i;
            }
        }
        self.indices[best]
    }

    pub fn check(&self, header: &EpochHeader) -> Result<()> {
        let k = header.k as usize;
        if self.indices.len() != k || self.values.len() != k {
            return Err(Error::InvalidRecord(format!(
                "expected {k} entries, got {} indices and {} values",
                self.indices.len(),
                self.values.len()
            )));
        }
        let narrow = header.index_width() == 2;
        for (n, &i) in self.indices.iter().enumerate() {
            if narrow && i > u16::MAX as u32 {
                return Err(Error::IndexWidthOverflow { index: i, width: 2 });
            }
            if i >= header.num_classes {
                return Err(Error::IndexOutOfRange {
                    index: i as usize,
                    classes: header.num_classes as usize,
                });
            }
            if n > 0 && self.indices[n - 1] >= i {
                return Err(Error::InvalidRecord("indices not strictly increasing".into()));
            }
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidRecord("values must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Appends the record's bytes. Callers check the record first.
    pub fn encode_into(&self, header: &EpochHeader, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.d0.to_le_bytes());
        match header.index_width() {
            2 => self
                .indices
                .iter()
                .for_each(|&i| out.extend_from_slice(&(i as u16).to_le_bytes())),
            _ => self.indices.iter().for_each(|&i| out.extend_from_slice(&i.to_le_bytes())),
        }
        for &v in &self.values {
            match header.value_precision {
                ValuePrecision::Half => {
                    let q = quantize(v as f64, ValuePrecision::Half);
                    out.extend_from_slice(&f16::from_f32(q).to_le_bytes());
                }
                ValuePrecision::Single => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    /// Parses one record and checks its structural invariants.
    pub fn decode(header: &EpochHeader, bytes: &[u8]) -> Result<Self> {
        debug_assert_eq!(bytes.len(), header.record_size());
        let k = header.k as usize;
        let iw = header.index_width();
        let d0 = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let idx = &bytes[4..4 + k * iw];
        let vals = &bytes[4 + k * iw..];
        let indices: Vec<u32> = match iw {
            2 => idx
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
                .collect(),
            _ => idx
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let values: Vec<f32> = match header.value_precision {
            ValuePrecision::Half => vals
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            ValuePrecision::Single => vals
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let rec = CacheRecord {
            d0,
            indices,
            values,
        };
        rec.check(header)
            .map_err(|e| Error::CacheCorrupt(format!("bad record: {e}")))?;
        Ok(rec)
    }
}
