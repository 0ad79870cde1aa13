//! Model files: a named-tensor container.
//!
//! ```text
//! "TVITMODL"            8 bytes
//! manifest length       u64 LE
//! manifest              JSON: config text, tensor and buffer tables,
//!                       CRC-64/XZ of the data section
//! data                  f64 LE: parameters in layout order, then buffers
//! trailer               CRC-64/XZ of all preceding bytes, u64 LE
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::TinyVit;
use super::params::ParamSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TVITMODL";
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: String,
    tensors: Vec<ParamSpec>,
    buffers: Vec<BufferEntry>,
    data_crc: u64,
}

pub fn model_to_bytes(model: &TinyVit) -> Vec<u8> {
    let mut data = Vec::with_capacity(8 * model.theta().len());
    for v in model.theta() {
        data.extend_from_slice(&v.to_le_bytes());
    }
    for buf in &model.buffers().data {
        for v in buf {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: model.config().to_text(),
        tensors: model.layout().specs.clone(),
        buffers: model
            .buffers()
            .names
            .iter()
            .zip(&model.buffers().data)
            .map(|(n, d)| BufferEntry {
                name: n.clone(),
                len: d.len(),
            })
            .collect(),
        data_crc: CRC64.checksum(&data),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + data.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TinyVit> {
    let bad = |m: &str| Error::ModelFile(m.to_string());
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if CRC64.checksum(body) != u64::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    if 16 + mlen > body.len() {
        return Err(bad("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[16..16 + mlen])
        .map_err(|e| Error::ModelFile(format!("manifest: {e}")))?;
    let data = &body[16 + mlen..];
    if CRC64.checksum(data) != manifest.data_crc {
        return Err(bad("data checksum mismatch"));
    }
    let config = ModelConfig::from_text(&manifest.config)?;
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64"));
    }
    let n_theta: usize = manifest.tensors.iter().map(|t| t.len()).sum();
    let n_buf: usize = manifest.buffers.iter().map(|b| b.len).sum();
    if values.len() != n_theta + n_buf {
        return Err(bad("data length does not match the manifest"));
    }
    let theta = values[..n_theta].to_vec();
    let mut buffers = Vec::new();
    let mut at = n_theta;
    for b in &manifest.buffers {
        buffers.push(values[at..at + b.len].to_vec());
        at += b.len;
    }
    let model = TinyVit::from_parts(&config, theta, buffers)?;
    if model.layout().specs != manifest.tensors
        || model.buffers().names.iter().ne(manifest.buffers.iter().map(|b| &b.name))
    {
        return Err(bad("tensor table does not match the config"));
    }
    Ok(model)
}

pub fn save_model(model: &TinyVit, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model);
    let tmp = path.with_extension("tmp");
    let io = |e| Error::io(path, e);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_model(path: &Path) -> Result<TinyVit> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
