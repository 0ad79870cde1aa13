use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimizer step as seen by the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epoch: u32,
    pub step: u64,
    pub loss: f64,
    /// `loss.to_bits()`, so traces compare bit for bit.
    pub loss_bits: u64,
    /// CRC-64/XZ of the batch's little-endian `f32` pixels.
    pub checksum: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub entries: Vec<TraceEntry>,
}

impl LossTrace {
    pub fn push(&mut self, epoch: u32, step: u64, loss: f64, checksum: u64) {
        self.entries.push(TraceEntry {
            epoch,
            step,
            loss,
            loss_bits: loss.to_bits(),
            checksum,
        });
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain data") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidRunConfig(format!("trace: {e}"))))
            .collect::<Result<_>>()?;
        Ok(LossTrace { entries })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Mean loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64, usize)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == e.epoch => {
                    last.1 += e.loss;
                    last.2 += 1;
                }
                _ => out.push((e.epoch, e.loss, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}
