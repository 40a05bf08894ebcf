//! Binary checkpoint format.
//!
//! Layout (little endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `WMDBCKPT` |
//! | 4     | format version (u32) |
//! | 4     | header length `n` (u32) |
//! | n     | UTF-8 JSON header: config, step, parameter names/dims, payload SHA-256 |
//! | rest  | parameter values as f32, in header order |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{ModelState, NetConfig, ParamTensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"WMDBCKPT";

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    step: u64,
    params: Vec<ParamEntry>,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    dims: Vec<usize>,
}

fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn encode_checkpoint(model: &ModelState) -> Result<Vec<u8>> {
    model.validate()?;
    let mut payload = Vec::with_capacity(model.parameter_count() * 4);
    for p in model.params.values() {
        for v in &p.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        config: model.config.clone(),
        step: model.step,
        params: model
            .params
            .iter()
            .map(|(name, p)| ParamEntry {
                name: name.clone(),
                dims: p.dims.clone(),
            })
            .collect(),
        sha256: digest(&payload),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Corrupt(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<ModelState> {
    let b = &mut bytes;
    if take(b, MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(b, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let header_len = read_u32(b, "header length")? as usize;
    let header: Header = serde_json::from_slice(take(b, header_len, "header")?)
        .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    let total: usize = header.params.iter().map(|p| p.dims.iter().product::<usize>()).sum();
    if b.len() != total * 4 {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, header describes {}",
            b.len(),
            total * 4
        )));
    }
    if digest(b) != header.sha256 {
        return Err(Error::Corrupt("payload checksum mismatch".into()));
    }
    let mut params = BTreeMap::new();
    for entry in header.params {
        let n: usize = entry.dims.iter().product();
        let raw = take(b, n * 4, "parameters")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.insert(entry.name, ParamTensor { dims: entry.dims, data });
    }
    let model = ModelState {
        config: header.config,
        params,
        step: header.step,
    };
    model
        .validate()
        .map_err(|e| Error::Corrupt(format!("inconsistent parameters: {e}")))?;
    Ok(model)
}

/// Writes via a sibling temporary file and rename, so readers never see a
/// partial checkpoint.
pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
