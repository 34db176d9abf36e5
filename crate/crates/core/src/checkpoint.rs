//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! `CSTGNCK\0`, `u32` version, `u64` metadata length, metadata JSON,
//! `u64` tensor count, then per tensor `u64` name length, name bytes,
//! `u64` rows, `u64` cols and `rows * cols` `f64` values, and finally the
//! `END\0` trailer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"CSTGNCK\0";
pub const VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
}

pub fn encode(model: &Model, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        train: train.cloned(),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let named = model.params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(named.len() as u64).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(TRAILER);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {v}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let meta_len = r.len()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    meta.model.validate()?;
    let mut params = ModelParams::zeros(&meta.model)?;
    let count = r.len()?;
    let expected: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for (slot, want) in params.entries_mut().into_iter().zip(&expected) {
        let name_len = r.len()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != want {
            return Err(Error::Checkpoint(format!("expected tensor {want}, found {name}")));
        }
        let rows = r.len()?;
        let cols = r.len()?;
        if [rows, cols] != [slot.rows(), slot.cols()] {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape [{rows}, {cols}], expected [{}, {}]",
                slot.rows(),
                slot.cols()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *slot = Tensor::from_vec(rows, cols, data);
    }
    if r.take(4)? != TRAILER || r.pos != bytes.len() {
        return Err(Error::Checkpoint("missing or misplaced trailer".into()));
    }
    let model = Model::new(meta.model.clone(), params)?;
    Ok((model, meta))
}

/// Writes atomically through a temporary file in the same directory.
pub fn save(path: &Path, model: &Model, train: Option<&TrainConfig>) -> Result<()> {
    let bytes = encode(model, train)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
