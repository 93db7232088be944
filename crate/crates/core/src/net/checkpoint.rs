//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "QPOTNET\0"
//! version    u32
//! input_dim  u32
//! n_hidden   u32
//! widths     u32 * n_hidden
//! output_dim u32      (must equal input_dim + 1)
//! seed       u64
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! n_params   u64
//! params     f64 * n_params
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QPOTNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training metadata stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub system: String,
    /// Stable point the quasipotential is anchored at.
    pub xbar: Vec<f64>,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

pub fn save_checkpoint(params: &NetworkParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let arch = params.architecture();
    let mut buf = Vec::with_capacity(64 + 8 * params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.hidden.len() as u32).to_le_bytes());
    for &w in &arch.hidden {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(arch.output_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&params.seed().to_le_bytes());
    let meta_json = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, CheckpointMeta)> {
    let data = fs::read(path)?;
    let mut r = Reader {
        data: &data,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(r.fail("bad magic; not a network checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden > 1024 {
        return Err(r.fail(format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden = (0..n_hidden)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let output_dim = r.u32()? as usize;
    if output_dim != input_dim + 1 {
        return Err(r.fail(format!(
            "declared output dimension {output_dim} does not match input dimension {input_dim} + 1"
        )));
    }
    let arch = Architecture::new(input_dim, hidden).map_err(|e| r.fail(e.to_string()))?;
    let seed = r.u64()?;
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| r.fail(format!("metadata: {e}")))?;
    let n_params = r.u64()? as usize;
    if n_params != arch.parameter_count() {
        return Err(r.fail(format!(
            "{n_params} parameters stored, architecture needs {}",
            arch.parameter_count()
        )));
    }
    let values = r
        .take(8 * n_params)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if r.pos != data.len() {
        return Err(r.fail(format!("{} trailing bytes", data.len() - r.pos)));
    }
    let params = NetworkParams::from_values(arch, seed, values).map_err(|e| r.fail(e.to_string()))?;
    Ok((params, meta))
}
