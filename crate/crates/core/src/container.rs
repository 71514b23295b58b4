//! Binary container shared by checkpoints, preprocessed datasets and
//! lexicons.
//!
//! Layout: 6 magic bytes, `u32` LE format version, `u64` LE header length, a
//! UTF-8 JSON header, then the tensors as contiguous little-endian arrays in
//! directory order.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC_LEN: usize = 6;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("corrupt tensor directory: {0}")]
    CorruptDirectory(String),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor {0:?} missing from container")]
    MissingTensor(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl ContainerError {
    fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> ContainerError {
        let context = context.into();
        move |source| ContainerError::Io { context, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
    U8,
    U32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub dtype: Dtype,
}

impl TensorEntry {
    fn byte_len(&self) -> Option<u64> {
        self.shape
            .iter()
            .try_fold(self.dtype.size() as u64, |acc, &d| {
                acc.checked_mul(d as u64)
            })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// Tensor payload. Values are stored exactly as given.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F64(_) => Dtype::F64,
            TensorData::F32(_) => Dtype::F32,
            TensorData::U8(_) => Dtype::U8,
            TensorData::U32(_) => Dtype::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> TensorData {
        match dtype {
            Dtype::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::U8 => TensorData::U8(bytes.to_vec()),
            Dtype::U32 => TensorData::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Self {
        Tensor {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor::new(name, shape, TensorData::F64(data))
    }
}

/// Identifies one container kind.
#[derive(Debug, Clone, Copy)]
pub struct Format {
    pub magic: &'static [u8; MAGIC_LEN],
    pub version: u32,
}

/// Decoded container contents.
#[derive(Debug, Clone)]
pub struct Contents<M> {
    pub meta: M,
    pub tensors: Vec<Tensor>,
}

impl<M> Contents<M> {
    pub fn take(&mut self, name: &str) -> Result<Tensor, ContainerError> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_string()))?;
        Ok(self.tensors.remove(pos))
    }

    pub fn take_f64(&mut self, name: &str) -> Result<Vec<f64>, ContainerError> {
        match self.take(name)?.data {
            TensorData::F64(v) => Ok(v),
            other => Err(ContainerError::CorruptDirectory(format!(
                "tensor {name:?} has dtype {:?}, expected f64",
                other.dtype()
            ))),
        }
    }
}

/// Serializes `meta` and `tensors` into a byte buffer.
pub fn encode<M: Serialize>(
    format: Format,
    meta: &M,
    tensors: &[Tensor],
) -> Result<Vec<u8>, ContainerError> {
    let mut offset = 0u64;
    let mut directory = Vec::with_capacity(tensors.len());
    for t in tensors {
        let entry = TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            dtype: t.data.dtype(),
        };
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(ContainerError::CorruptDirectory(format!(
                "tensor {:?} has shape {:?} but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        offset += entry.byte_len().unwrap_or(0);
        directory.push(entry);
    }
    let header = serde_json::to_vec(&Envelope {
        meta,
        tensors: directory,
    })?;
    let mut out = Vec::with_capacity(MAGIC_LEN + 12 + header.len() + offset as usize);
    out.extend_from_slice(format.magic);
    out.extend_from_slice(&format.version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        t.data.write_le(&mut out);
    }
    Ok(out)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), ContainerError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ContainerError::Truncated(format!("end of file inside {what}"))
        } else {
            ContainerError::io(format!("reading {what}"))(e)
        }
    })
}

/// Parses a container, checking magic, version and the tensor directory.
pub fn decode<M: DeserializeOwned, R: Read>(
    format: Format,
    mut r: R,
) -> Result<Contents<M>, ContainerError> {
    let mut magic = [0u8; MAGIC_LEN];
    read_exact_or(&mut r, &mut magic, "magic bytes")?;
    if &magic != format.magic {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(format.magic).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != format.version {
        return Err(ContainerError::UnsupportedVersion {
            found: version,
            supported: format.version,
        });
    }
    let mut len = [0u8; 8];
    read_exact_or(&mut r, &mut len, "header length")?;
    let header_len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| ContainerError::CorruptDirectory("header length overflow".into()))?;
    let mut header = Vec::new();
    r.by_ref()
        .take(header_len as u64)
        .read_to_end(&mut header)
        .map_err(ContainerError::io("reading header"))?;
    if header.len() != header_len {
        return Err(ContainerError::Truncated(format!(
            "header declares {header_len} bytes, {} present",
            header.len()
        )));
    }
    let envelope: Envelope<M> = serde_json::from_slice(&header)?;

    let mut expected_offset = 0u64;
    for entry in &envelope.tensors {
        if entry.offset != expected_offset {
            return Err(ContainerError::CorruptDirectory(format!(
                "tensor {:?} at offset {}, expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        let size = entry.byte_len().ok_or_else(|| {
            ContainerError::CorruptDirectory(format!("tensor {:?} size overflows", entry.name))
        })?;
        expected_offset = expected_offset
            .checked_add(size)
            .ok_or_else(|| ContainerError::CorruptDirectory("payload size overflows".into()))?;
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(ContainerError::io("reading payload"))?;
    if (payload.len() as u64) < expected_offset {
        return Err(ContainerError::Truncated(format!(
            "payload has {} bytes, directory needs {}",
            payload.len(),
            expected_offset
        )));
    }
    if payload.len() as u64 > expected_offset {
        return Err(ContainerError::CorruptDirectory(format!(
            "{} trailing bytes after last tensor",
            payload.len() as u64 - expected_offset
        )));
    }
    let tensors = envelope
        .tensors
        .into_iter()
        .map(|e| {
            let start = e.offset as usize;
            let end = start + e.byte_len().unwrap_or(0) as usize;
            Tensor {
                data: TensorData::read_le(e.dtype, &payload[start..end]),
                name: e.name,
                shape: e.shape,
            }
        })
        .collect();
    Ok(Contents {
        meta: envelope.meta,
        tensors,
    })
}

pub fn write_file<M: Serialize>(
    path: impl AsRef<Path>,
    format: Format,
    meta: &M,
    tensors: &[Tensor],
) -> Result<(), ContainerError> {
    let path = path.as_ref();
    let bytes = encode(format, meta, tensors)?;
    let mut f = std::fs::File::create(path)
        .map_err(ContainerError::io(format!("creating {}", path.display())))?;
    f.write_all(&bytes)
        .map_err(ContainerError::io(format!("writing {}", path.display())))
}

pub fn read_file<M: DeserializeOwned>(
    path: impl AsRef<Path>,
    format: Format,
) -> Result<Contents<M>, ContainerError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(ContainerError::io(format!("opening {}", path.display())))?;
    decode(format, io::BufReader::new(f))
}
