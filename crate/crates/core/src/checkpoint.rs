//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "MMTLCKPT"
//! version   u32 LE   currently 1
//! length    u64 LE   byte length of the JSON manifest
//! manifest  JSON     {format_version, config, vocab, train_step, tensors: [{name, shape}]}
//! data      f64 LE   every tensor's values, in manifest order, row-major
//! ```
//!
//! The corpus-mean visual feature, when present, is stored as the tensor
//! named `mean_feature`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::VisualFeature;
use crate::model::ModelConfig;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

const MAGIC: &[u8; 8] = b"MMTLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MEAN_FEATURE: &str = "mean_feature";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    /// Named parameters in creation order.
    pub tensors: Vec<(String, Tensor)>,
    pub mean_feature: Option<VisualFeature>,
    pub train_step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocab,
    train_step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mean = self
            .mean_feature
            .as_ref()
            .map(|f| Tensor::new(vec![f.dim()], f.values().to_vec()))
            .transpose()?;
        let all: Vec<(&str, &Tensor)> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .chain(mean.as_ref().map(|t| (MEAN_FEATURE, t)))
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            train_step: self.train_step,
            tensors: all
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in &all {
            buf.clear();
            buf.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("file too short for a checkpoint".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| bad("manifest too large".into()))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        if manifest.format_version != version {
            return Err(bad("manifest version disagrees with header".into()));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut mean_feature = None;
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)
                .map_err(|_| bad(format!("truncated data for tensor `{}`", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| bad(format!("tensor `{}`: {e}", entry.name)))?;
            if entry.name == MEAN_FEATURE {
                mean_feature = Some(VisualFeature::new(t.into_data())?);
            } else {
                tensors.push((entry.name, t));
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after tensor data".into()));
        }
        Ok(Checkpoint {
            config: manifest.config,
            vocab: manifest.vocab,
            tensors,
            mean_feature,
            train_step: manifest.train_step,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Checkpoint::read_from(std::io::BufReader::new(f))
    }
}

/// Replaces `path` with `bytes` without ever exposing a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("write", format!("`{}` has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
