//! Binary checkpoint format.
//!
//! ```text
//! "SCESEP01" | u64 LE header length | UTF-8 TOML header | f32 LE payloads
//! ```
//!
//! The header holds the format version, training step, run configuration,
//! speaker registry snapshot and a directory of tensors (name, shape, byte
//! offset into the payload section).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::config::RunConfig;
use crate::corpus::{Gender, SpeakerRegistry};
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::sce::{Encoder, SceModel};

pub const MAGIC: &[u8; 8] = b"SCESEP01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub id: String,
    pub index: usize,
    pub gender: Gender,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    adam_step: u64,
    config: RunConfig,
    speakers: Vec<SpeakerEntry>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub speakers: Vec<SpeakerEntry>,
    pub model: SceModel,
    pub adam: AdamState,
}

pub fn registry_snapshot(registry: &SpeakerRegistry) -> Vec<SpeakerEntry> {
    registry
        .speakers()
        .iter()
        .map(|s| SpeakerEntry {
            id: s.id.clone(),
            index: s.index,
            gender: s.gender,
        })
        .collect()
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let params = self.model.named_params();
        let mut out: Vec<(String, &Tensor)> = params.iter().map(|(n, t)| (n.clone(), *t)).collect();
        for ((name, _), (m, v)) in params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            out.push((format!("adam.m.{name}"), m));
            out.push((format!("adam.v.{name}"), v));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let mut offset = 0u64;
        let mut dir = Vec::with_capacity(tensors.len());
        for (name, t) in &tensors {
            dir.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len() as u64;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            step: self.step,
            adam_step: self.adam.step,
            config: self.config.clone(),
            speakers: self.speakers.clone(),
            tensors: dir,
        };
        let text = toml::to_string(&header).map_err(|e| corrupt(format!("encoding header: {e}")))?;
        let mut out = Vec::with_capacity(16 + text.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(corrupt(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(MAGIC),
                String::from_utf8_lossy(&bytes[..bytes.len().min(8)])
            )));
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .ok_or_else(|| corrupt("truncated before header length"))?
            .try_into()
            .expect("slice of 8");
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(format!("truncated header: {header_len} bytes declared")))?;
        let text = std::str::from_utf8(&bytes[16..header_end])
            .map_err(|e| corrupt(format!("header is not UTF-8: {e}")))?;
        let header: Header = toml::from_str(text).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let payload = &bytes[header_end..];
        let read = |e: &TensorEntry| -> Result<Tensor> {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            let raw = payload.get(start..end).ok_or_else(|| {
                corrupt(format!(
                    "truncated payload: tensor {} needs bytes {start}..{end}, have {}",
                    e.name,
                    payload.len()
                ))
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            Tensor::new(e.shape.clone(), data)
        };
        let config = header.config;
        let mut model_config = config.model;
        model_config.speakers = header.speakers.len();
        let mut model = SceModel::init(model_config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let find = |name: &str| header.tensors.iter().find(|e| e.name == name);
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let expected = 3 * names.len();
        if header.tensors.len() != expected {
            return Err(corrupt(format!(
                "tensor directory has {} entries, expected {expected}",
                header.tensors.len()
            )));
        }
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for ((name, slot), pname) in model.named_params_mut().into_iter().zip(&names) {
            let e = find(pname).ok_or_else(|| corrupt(format!("missing tensor {pname}")))?;
            let t = read(e)?;
            if t.shape() != slot.shape() {
                return Err(corrupt(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.with_grad();
            for (prefix, dst) in [("adam.m", &mut m), ("adam.v", &mut v)] {
                let key = format!("{prefix}.{pname}");
                let e = find(&key).ok_or_else(|| corrupt(format!("missing tensor {key}")))?;
                let t = read(e)?;
                if t.shape() != slot.shape() {
                    return Err(corrupt(format!("tensor {key} has shape {:?}", t.shape())));
                }
                dst.push(t);
            }
        }
        let adam = AdamState {
            config: config.optim,
            step: header.adam_step,
            m,
            v,
        };
        Ok(Checkpoint {
            step: header.step,
            config,
            speakers: header.speakers,
            model,
            adam,
        })
    }

    /// Writes through a temporary file so an interrupted save never
    /// replaces a good checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// The inference network, checked against the bin count of the
    /// requested front end.
    pub fn encoder_for_bins(&self, bins: usize) -> Result<&Encoder> {
        let have = self.model.encoder.bins();
        if have != bins {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with F = {have} frequency bins but the inference config gives F = {bins}"
            )));
        }
        Ok(&self.model.encoder)
    }
}
