//! Element types, concrete tensors and the `DYT1` binary tensor format.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I64,
    Bool,
}

impl DType {
    pub const fn byte_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I64 => 8,
            DType::Bool => 1,
        }
    }

    pub const fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I64 => 1,
            DType::Bool => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I64),
            2 => Some(DType::Bool),
            _ => None,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DType::I64)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::I64 => "i64",
            DType::Bool => "bool",
        })
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(DType::F32),
            "i64" => Ok(DType::I64),
            "bool" => Ok(DType::Bool),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

/// Flat row-major element buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I64(_) => DType::I64,
            TensorData::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I64(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: DType, len: usize) -> TensorData {
        match dtype {
            DType::F32 => TensorData::F32(vec![0.0; len]),
            DType::I64 => TensorData::I64(vec![0; len]),
            DType::Bool => TensorData::Bool(vec![false; len]),
        }
    }
}

/// A tensor with concrete dims and data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    /// Builds a tensor, checking that the element count matches the dims.
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Tensor, String> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(format!(
                "tensor dims {dims:?} need {expected} elements, got {}",
                data.len()
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(dims, TensorData::F32(data)).expect("element count matches dims")
    }

    pub fn from_i64(dims: Vec<usize>, data: Vec<i64>) -> Tensor {
        Tensor::new(dims, TensorData::I64(data)).expect("element count matches dims")
    }

    pub fn from_bool(dims: Vec<usize>, data: Vec<bool>) -> Tensor {
        Tensor::new(dims, TensorData::Bool(data)).expect("element count matches dims")
    }

    pub fn scalar_i64(v: i64) -> Tensor {
        Tensor::from_i64(vec![], vec![v])
    }

    pub fn zeros(dtype: DType, dims: Vec<usize>) -> Tensor {
        let len = dims.iter().product();
        Tensor {
            dims,
            data: TensorData::zeros(dtype, len),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn byte_size(&self) -> usize {
        self.len() * self.dtype().byte_size()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<&[bool]> {
        match &self.data {
            TensorData::Bool(v) => Some(v),
            _ => None,
        }
    }

    /// Same data, new dims. Element counts must agree.
    pub fn reshaped(self, dims: Vec<usize>) -> Result<Tensor, String> {
        Tensor::new(dims, self.data)
    }
}

const MAGIC: &[u8; 4] = b"DYT1";

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("bad magic {0:?}, expected \"DYT1\"")]
    BadMagic([u8; 4]),
    #[error("truncated tensor file: {0}")]
    Truncated(String),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encodes a tensor: magic, dtype code, rank, dims as u64, row-major payload.
/// All integers are little-endian.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + t.byte_size());
    out.extend_from_slice(MAGIC);
    out.push(t.dtype().code());
    out.push(u8::try_from(t.rank()).expect("rank fits in u8"));
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
    }
    out
}

/// Decodes one tensor from the start of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, usize), TensorFileError> {
    if bytes.len() < 4 {
        return Err(TensorFileError::Truncated("missing magic".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(TensorFileError::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(TensorFileError::Truncated("missing header".into()));
    }
    let dtype = DType::from_code(bytes[4]).ok_or(TensorFileError::UnknownDtype(bytes[4]))?;
    let rank = bytes[5] as usize;
    let mut pos = 6;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes
            .get(pos..pos + 8)
            .ok_or_else(|| TensorFileError::Truncated("dims".into()))?;
        let d = u64::from_le_bytes(chunk.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| TensorFileError::Truncated("dim overflow".into()))?);
        pos += 8;
    }
    let count: usize = dims.iter().product();
    let payload_len = count * dtype.byte_size();
    let payload = bytes.get(pos..pos + payload_len).ok_or_else(|| {
        TensorFileError::Truncated(format!(
            "payload needs {payload_len} bytes, {} available",
            bytes.len().saturating_sub(pos)
        ))
    })?;
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I64 => TensorData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::Bool => TensorData::Bool(payload.iter().map(|&b| b != 0).collect()),
    };
    Ok((Tensor { dims, data }, pos + payload_len))
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &Tensor) -> Result<(), TensorFileError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor, TensorFileError> {
    read_tensor_at(path, 0)
}

/// Reads a tensor stored at `byte_offset` inside a sidecar file.
pub fn read_tensor_at(path: impl AsRef<Path>, byte_offset: u64) -> Result<Tensor, TensorFileError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let start = usize::try_from(byte_offset).unwrap_or(usize::MAX);
    let slice = bytes
        .get(start..)
        .ok_or_else(|| TensorFileError::Truncated(format!("offset {byte_offset} past end of file")))?;
    decode_tensor(slice).map(|(t, _)| t)
}
