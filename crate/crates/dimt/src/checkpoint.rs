//! Binary checkpoints.
//!
//! ```text
//! magic     8 bytes  "DIMTCKP\0"
//! version   u32 LE
//! hlen      u32 LE   length of the JSON header
//! header    hlen bytes of JSON (kind, configs, step, tensor table)
//! values    f64 LE: every tensor in table order, then (if present) the
//!           Adam first moments and second moments in the same order
//! ```
//!
//! Headers carry no timestamps, so equal training states give equal files.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dimt_core::model::{ModelConfig, TextTranslatorConfig};
use dimt_core::params::{Group, ParamStore};
use dimt_core::teacher::TeacherConfig;
use dimt_core::tensor::Matrix;
use dimt_core::training::{AdamState, TrainConfig};
use dimt_core::vocab::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"DIMTCKP\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Student { model: ModelConfig, teacher: TeacherConfig, train: TrainConfig, source_vocab: Vocab, target_vocab: Vocab },
    TextTranslator { config: TextTranslatorConfig, source_vocab: Vocab, target_vocab: Vocab },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: Group,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub payload: Payload,
    pub step: usize,
    /// Fingerprint of the frozen teacher the run was trained against.
    pub teacher_fingerprint: Option<String>,
    pub adam_t: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(payload: Payload, step: usize, params: ParamStore, adam: Option<AdamState>, teacher_fingerprint: Option<u64>) -> Self {
        let tensors = params
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), group: p.group, rows: p.value.rows(), cols: p.value.cols() })
            .collect();
        let header = Header {
            payload,
            step,
            teacher_fingerprint: teacher_fingerprint.map(|f| format!("{f:016x}")),
            adam_t: adam.as_ref().map(|a| a.t),
            tensors,
        };
        Self { header, params, adam }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.count() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(header.len())?.to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |m: &Matrix| m.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|p| put(&p.value));
        if let Some(a) = &self.adam {
            a.m.iter().for_each(&mut put);
            a.v.iter().for_each(&mut put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "not a checkpoint file");
        let version = u32::from_le_bytes(bytes[8..12].try_into()?);
        ensure!(version == VERSION, "unsupported checkpoint version {version}");
        let hlen = u32::from_le_bytes(bytes[12..16].try_into()?) as usize;
        ensure!(bytes.len() >= 16 + hlen, "checkpoint header truncated");
        let mut header: Header = serde_json::from_slice(&bytes[16..16 + hlen]).context("checkpoint header")?;
        match &mut header.payload {
            Payload::Student { source_vocab, target_vocab, .. } | Payload::TextTranslator { source_vocab, target_vocab, .. } => {
                source_vocab.reindex();
                target_vocab.reindex();
            }
        }
        let mut values = bytes[16 + hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
            let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
            ensure!(data.len() == rows * cols, "checkpoint values truncated");
            Ok(Matrix::from_vec(rows, cols, data))
        };
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let m = take(t.rows, t.cols)?;
            params.add(&t.name, t.group, m);
        }
        let adam = match header.adam_t {
            Some(t) => {
                let m = header.tensors.iter().map(|e| take(e.rows, e.cols)).collect::<Result<Vec<_>>>()?;
                let v = header.tensors.iter().map(|e| take(e.rows, e.cols)).collect::<Result<Vec<_>>>()?;
                Some(AdamState { m, v, t })
            }
            None => None,
        };
        if values.next().is_some() || !(bytes.len() - 16 - hlen).is_multiple_of(8) {
            bail!("checkpoint has trailing data");
        }
        Ok(Self { header, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
