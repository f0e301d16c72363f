//! Versioned binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CLMX"                    4 bytes
//! format_version            u32
//! metadata length           u32, then that many bytes of UTF-8 JSON
//! tensors until EOF, each:
//!   name length             u32, then the UTF-8 name
//!   rank                    u32
//!   dims                    rank × u32
//!   values                  row-major f32
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Arch, ModelParams, TENSOR_NAMES};

pub const MAGIC: &[u8; 4] = b"CLMX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOrigin {
    pub source_id: String,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub trained_on: Vec<String>,
    pub transferred_from: Option<TransferOrigin>,
    pub epochs: usize,
    pub final_dev_ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    id: String,
    arch: Arch,
    vocab_hash: String,
    provenance: Provenance,
}

/// Model weights plus the metadata needed to transfer and score them.
///
/// Parameters are held at `f64` but always rounded to `f32`, the storage
/// precision, so a saved checkpoint loads back bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub id: String,
    params: ModelParams,
    pub vocab_hash: String,
    pub provenance: Provenance,
    pub format_version: u32,
}

impl ModelCheckpoint {
    pub fn new(id: impl Into<String>, mut params: ModelParams, vocab_hash: impl Into<String>) -> Self {
        params.round_to_f32();
        ModelCheckpoint {
            id: id.into(),
            params,
            vocab_hash: vocab_hash.into(),
            provenance: Provenance::default(),
            format_version: FORMAT_VERSION,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn arch(&self) -> Arch {
        self.params.arch
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&Metadata {
            id: self.id.clone(),
            arch: self.arch(),
            vocab_hash: self.vocab_hash.clone(),
            provenance: self.provenance.clone(),
        })?;
        let mut out = Vec::with_capacity(4 * self.params.num_params() + meta.len() + 256);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let shapes = ModelParams::tensor_shapes(&self.arch());
        for ((name, dims), values) in shapes.iter().zip(self.params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
        meta.arch.validate()?;

        let mut params = ModelParams::zeros(meta.arch);
        let shapes = ModelParams::tensor_shapes(&meta.arch);
        let mut seen = [false; TENSOR_NAMES.len()];
        let mut records = 0;
        while r.pos < bytes.len() {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("tensor dims")? as usize);
            }
            let Some(slot) = TENSOR_NAMES.iter().position(|&n| n == name) else {
                return Err(Error::Format(format!("unknown tensor {name:?}")));
            };
            if dims != shapes[slot].1 {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name} declared {dims:?}, architecture requires {:?}",
                    shapes[slot].1
                )));
            }
            let count: usize = dims.iter().product();
            let raw = r.take(count * 4, &name)?;
            let dst = &mut params.tensors_mut()[slot];
            for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                *d = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
            seen[slot] = true;
            records += 1;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            // Every tensor is mandatory, so too few records means the file ended early.
            return Err(if records < TENSOR_NAMES.len() {
                Error::TruncatedFile(format!("tensor {}", TENSOR_NAMES[i]))
            } else {
                Error::MissingTensor(TENSOR_NAMES[i].to_string())
            });
        }
        Ok(ModelCheckpoint {
            id: meta.id,
            params,
            vocab_hash: meta.vocab_hash,
            provenance: meta.provenance,
            format_version: version,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::TruncatedFile(what.to_string()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&std::fs::read(path)?)
}
