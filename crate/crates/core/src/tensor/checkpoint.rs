//! Versioned binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DRPLCKPT"
//! version      u32
//! count        u32      number of records
//! record*      name_len u32 | name (utf-8) | dtype u8 | rank u32 | dims u64×rank | raw buffer
//! ```
//!
//! The buffer is `product(dims)` elements of the dtype's width. Loading parses
//! the whole input before returning, so a malformed file never yields a
//! partially-populated checkpoint.

use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRPLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    /// Raw little-endian element bytes of a float tensor.
    Float { dtype: DType, bytes: Vec<u8> },
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    pub fn dtype(&self) -> DType {
        match &self.data {
            RecordData::Float { dtype, .. } => *dtype,
            RecordData::Bytes(_) => DType::U8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    records: Vec<Record>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    fn push(&mut self, record: Record) -> Result<()> {
        if self.records.iter().any(|r| r.name == record.name) {
            return Err(Error::contract(format!("duplicate checkpoint record `{}`", record.name)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) -> Result<()> {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.width());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        self.push(Record {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            data: RecordData::Float { dtype: T::DTYPE, bytes },
        })
    }

    pub fn push_bytes(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        self.push(Record {
            name: name.to_string(),
            dims: vec![bytes.len()],
            data: RecordData::Bytes(bytes),
        })
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Lookup(format!("checkpoint has no record `{name}`")))
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let r = self.get(name)?;
        match &r.data {
            RecordData::Float { dtype, bytes } if *dtype == T::DTYPE => {
                let data = bytes.chunks(dtype.width()).map(T::read_le).collect();
                Tensor::new(r.dims.clone(), data)
            }
            _ => Err(Error::Format(format!(
                "record `{name}` has dtype {:?}, expected {:?}",
                r.dtype(),
                T::DTYPE
            ))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.data {
            RecordData::Bytes(b) => Ok(b),
            _ => Err(Error::Format(format!("record `{name}` is not a byte record"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.dtype().tag());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.data {
                RecordData::Float { bytes, .. } | RecordData::Bytes(bytes) => out.extend_from_slice(bytes),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = rd.u32()? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = rd.u32()? as usize;
            let name = std::str::from_utf8(rd.take(name_len)?)
                .map_err(|e| Error::Format(format!("record name is not utf-8: {e}")))?
                .to_string();
            let dtype = DType::from_tag(rd.take(1)?[0])?;
            let rank = rd.u32()? as usize;
            let dims = (0..rank)
                .map(|_| rd.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.width()))
                .ok_or_else(|| Error::Format(format!("record `{name}` size overflows")))?;
            let raw = rd.take(n)?.to_vec();
            let data = match dtype {
                DType::U8 => RecordData::Bytes(raw),
                _ => RecordData::Float { dtype, bytes: raw },
            };
            ckpt.push(Record { name, dims, data })
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        if rd.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - rd.pos)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
