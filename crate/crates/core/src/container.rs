//! The "3DGH" little-endian binary container.
//!
//! Every file starts with the 4-byte magic `3DGH`, a `u32` format version,
//! and a `u32` payload kind:
//!
//! | kind | payload |
//! |------|---------|
//! | 1 (tensor) | `ndim: u32`, `dims: [u32; ndim]`, row-major `f32` data |
//! | 2 (table)  | `count: u32`, then per entry `name_len: u32`, UTF-8 name, `ndim: u32`, `dims`, `f32` data |
//! | 3 (blend model) | `V, F, k: u32`, `sigma: f32`, `rank: u32`, mean `[f32; 3V]`, components `[f32; k*3V]`, faces `[u32; 3F]`, corner UVs `[f32; 6F]`, labels `[f32; V]` |
//!
//! Values are stored as 32-bit floats; reading widens them back to `f64`.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"3DGH";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum PayloadKind {
    Tensor = 1,
    Table = 2,
    BlendModel = 3,
}

/// A dense row-major tensor as stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("dims {dims:?} hold {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }
}

#[derive(Default)]
pub struct ContainerWriter {
    buf: Vec<u8>,
}

impl ContainerWriter {
    pub fn new(kind: PayloadKind) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(kind as u32);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f64]) {
        self.buf.reserve(values.len() * 4);
        for &v in values {
            self.f32(v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn dims(&mut self, dims: &[usize]) {
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub struct ContainerReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ContainerReader<'a> {
    pub fn open(buf: &'a [u8], kind: PayloadKind) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(Error::Data("missing 3DGH magic".into()));
        }
        let mut r = Self { buf, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported container version {version}")));
        }
        let found = r.u32()?;
        if found != kind as u32 {
            return Err(Error::Data(format!("expected payload kind {}, found {found}", kind as u32)));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data("truncated container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Data("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 16 {
            return Err(Error::Data(format!("implausible tensor rank {n}")));
        }
        (0..n).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn encode_tensor(t: &StoredTensor) -> Vec<u8> {
    let mut w = ContainerWriter::new(PayloadKind::Tensor);
    w.dims(&t.dims);
    w.f32s(&t.data);
    w.finish()
}

pub fn decode_tensor(buf: &[u8]) -> Result<StoredTensor> {
    let mut r = ContainerReader::open(buf, PayloadKind::Tensor)?;
    let dims = r.dims()?;
    let data = r.f32s(dims.iter().product())?;
    StoredTensor::new(dims, data)
}

pub fn encode_table(entries: &[(String, StoredTensor)]) -> Vec<u8> {
    let mut w = ContainerWriter::new(PayloadKind::Table);
    w.u32(entries.len() as u32);
    for (name, t) in entries {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.dims(&t.dims);
        w.f32s(&t.data);
    }
    w.finish()
}

pub fn decode_table(buf: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    let mut r = ContainerReader::open(buf, PayloadKind::Table)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?
            .to_string();
        let dims = r.dims()?;
        let data = r.f32s(dims.iter().product())?;
        out.push((name, StoredTensor::new(dims, data)?));
    }
    Ok(out)
}

pub fn write_tensor(path: &Path, t: &StoredTensor) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<StoredTensor> {
    decode_tensor(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_table(path: &Path, entries: &[(String, StoredTensor)]) -> Result<()> {
    std::fs::write(path, encode_table(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<(String, StoredTensor)>> {
    decode_table(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
