//! Binary checkpoint format.
//!
//! | bytes | content |
//! |---|---|
//! | 7 | magic `RANCKPT` |
//! | 1 | format version |
//! | 4 | header length `n`, little-endian |
//! | n | UTF-8 JSON header: config, vocabulary and digest, tensor manifest, optimizer and PRNG state |
//! | m | tensor payload, little-endian IEEE-754, manifest order |
//! | 4 | CRC-32 of the payload, little-endian |

use std::any::Any;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IntegrityError, Result};
use crate::rng::SeededRng;
use crate::tensor::{Precision, Real, Tensor};

use super::config::TrainConfig;
use super::model::LanguageModel;
use super::vocab::Vocabulary;

pub const MAGIC: &[u8; 7] = b"RANCKPT";
pub const FORMAT_VERSION: u8 = 1;
const PREFIX_LEN: usize = MAGIC.len() + 1 + 4;

/// Everything needed to resume training or to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real = f64> {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub model: LanguageModel<T>,
    /// Learning rate of the last completed epoch.
    pub lr: f64,
    pub epochs_completed: usize,
    pub rng: SeededRng,
}

/// A checkpoint of either precision, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn precision(&self) -> Precision {
        match self {
            AnyCheckpoint::F32(_) => Precision::F32,
            AnyCheckpoint::F64(_) => Precision::F64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyCheckpoint::F32(c) => c.to_bytes(),
            AnyCheckpoint::F64(c) => c.to_bytes(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerState {
    lr: f64,
    epochs_completed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    precision: Precision,
    config: TrainConfig,
    vocabulary: Vocabulary,
    vocab_digest: String,
    tensors: Vec<ManifestEntry>,
    payload_bytes: usize,
    optimizer: OptimizerState,
    rng: SeededRng,
}

impl<T: Real> Checkpoint<T> {
    pub fn into_any(self) -> AnyCheckpoint {
        let boxed: Box<dyn Any> = Box::new(self);
        match boxed.downcast::<Checkpoint<f64>>() {
            Ok(c) => AnyCheckpoint::F64(*c),
            Err(other) => AnyCheckpoint::F32(*other.downcast::<Checkpoint<f32>>().expect("Real is f32 or f64")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = T::PRECISION.bytes();
        let mut payload = Vec::with_capacity(self.model.scalar_count() * width);
        let mut manifest = Vec::new();
        for (name, t) in self.model.named_tensors() {
            manifest.push(ManifestEntry {
                name,
                rows: t.rows(),
                cols: t.cols(),
                offset: payload.len(),
            });
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        let header = Header {
            precision: T::PRECISION,
            config: self.config.clone(),
            vocabulary: self.vocab.clone(),
            vocab_digest: self.vocab.digest(),
            tensors: manifest,
            payload_bytes: payload.len(),
            optimizer: OptimizerState {
                lr: self.lr,
                epochs_completed: self.epochs_completed,
            },
            rng: self.rng.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn read_tensors<T: Real>(header: &Header, payload: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let width = T::PRECISION.bytes();
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let bytes = e
            .rows
            .checked_mul(e.cols)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| IntegrityError::Header(format!("tensor `{}` is too large", e.name)))?;
        let end = e
            .offset
            .checked_add(bytes)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| IntegrityError::Header(format!("tensor `{}` lies outside the payload", e.name)))?;
        let data = payload[e.offset..end].chunks_exact(width).map(T::read_le).collect();
        let t = Tensor::from_vec(e.rows, e.cols, data)
            .map_err(|_| IntegrityError::Header(format!("tensor `{}` holds non-finite values", e.name)))?;
        out.push((e.name.clone(), t));
    }
    Ok(out)
}

fn assemble<T: Real>(header: Header, payload: &[u8]) -> Result<Checkpoint<T>> {
    let named = read_tensors::<T>(&header, payload)?;
    let stack = header.config.stack()?;
    let model = LanguageModel::from_named(stack, header.vocabulary.len(), named)
        .map_err(|e| IntegrityError::Header(format!("tensor manifest does not fit the config: {e}")))?;
    Ok(Checkpoint {
        config: header.config,
        vocab: header.vocabulary,
        model,
        lr: header.optimizer.lr,
        epochs_completed: header.optimizer.epochs_completed,
        rng: header.rng,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyCheckpoint> {
    let magic_seen = &bytes[..bytes.len().min(MAGIC.len())];
    if magic_seen != &MAGIC[..magic_seen.len()] {
        return Err(IntegrityError::BadMagic.into());
    }
    if bytes.len() < PREFIX_LEN {
        return Err(IntegrityError::Truncated(format!("{} bytes, shorter than the fixed prefix", bytes.len())).into());
    }
    let version = bytes[MAGIC.len()];
    if version != FORMAT_VERSION {
        return Err(IntegrityError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let mut len = [0u8; 4];
    len.copy_from_slice(&bytes[MAGIC.len() + 1..PREFIX_LEN]);
    let header_len = u32::from_le_bytes(len) as usize;
    let header_end = PREFIX_LEN + header_len;
    if bytes.len() < header_end {
        return Err(IntegrityError::Truncated(format!("header needs {header_len} bytes")).into());
    }
    let header: Header =
        serde_json::from_slice(&bytes[PREFIX_LEN..header_end]).map_err(|e| IntegrityError::Header(e.to_string()))?;
    let payload_end = header_end + header.payload_bytes;
    if bytes.len() < payload_end + 4 {
        return Err(IntegrityError::Truncated(format!(
            "payload needs {} bytes plus checksum, {} available",
            header.payload_bytes,
            bytes.len() - header_end
        ))
        .into());
    }
    if bytes.len() > payload_end + 4 {
        return Err(IntegrityError::Header(format!("{} trailing bytes", bytes.len() - payload_end - 4)).into());
    }
    let payload = &bytes[header_end..payload_end];
    let mut crc = [0u8; 4];
    crc.copy_from_slice(&bytes[payload_end..]);
    let stored = u32::from_le_bytes(crc);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(IntegrityError::Checksum { stored, computed }.into());
    }
    let found = header.vocabulary.digest();
    if found != header.vocab_digest {
        return Err(IntegrityError::Digest {
            expected: header.vocab_digest,
            found,
        }
        .into());
    }
    header
        .rng
        .check_algorithm()
        .map_err(|e| IntegrityError::Header(e.to_string()))?;
    match header.precision {
        Precision::F64 => assemble::<f64>(header, payload).map(AnyCheckpoint::F64),
        Precision::F32 => assemble::<f32>(header, payload).map(AnyCheckpoint::F32),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
