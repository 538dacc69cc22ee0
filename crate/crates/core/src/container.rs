//! Binary container used by checkpoints and the prepared-sequence cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RSLB" | version u32 | meta_len u32 | meta (UTF-8)
//! entry_count u32 | entries: name_len u16, name, dtype u8, ndim u8, dims u64 * ndim
//! payloads, row-major, in manifest order
//! crc32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"RSLB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
    U32(Vec<u32>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::I64(_) => DType::I64,
            Payload::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::I64(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read(dtype: DType, bytes: &[u8]) -> Self {
        let n = dtype.size();
        let chunks = bytes.chunks_exact(n);
        match dtype {
            DType::F32 => Payload::F32(chunks.map(f32::read_le).collect()),
            DType::F64 => Payload::F64(chunks.map(f64::read_le).collect()),
            DType::I64 => Payload::I64(
                chunks
                    .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            DType::U32 => Payload::U32(
                chunks
                    .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Entry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, payload: Payload) -> Result<Self> {
        let name = name.into();
        let expect: usize = shape.iter().product();
        if expect != payload.len() {
            return Err(Error::Checkpoint(format!(
                "entry {name}: shape {shape:?} does not hold {} values",
                payload.len()
            )));
        }
        Ok(Self { name, shape, payload })
    }

    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()),
            _ => Payload::F64(t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            payload,
        }
    }

    /// Converts a float entry back into a tensor of element type `T`,
    /// which must match the stored dtype.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match (&self.payload, T::DTYPE) {
            (Payload::F32(v), DType::F32) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            (Payload::F64(v), DType::F64) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            (p, want) => {
                return Err(Error::Checkpoint(format!(
                    "entry {}: stored as {}, requested {}",
                    self.name,
                    p.dtype().name(),
                    want.name()
                )))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: String,
    pub entries: Vec<Entry>,
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("truncated file while reading {what}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4, what)?.try_into().expect("4 bytes")))
}

impl Container {
    pub fn new(meta: impl Into<String>) -> Self {
        Self {
            meta: meta.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.dtype().code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for e in &self.entries {
            e.payload.write(&mut out);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a container file".into()));
        }
        let mut pos = 4;
        let version = u32_at(bytes, &mut pos, "version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        if bytes.len() < pos + 4 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let meta_len = u32_at(body, &mut pos, "meta length")? as usize;
        let meta = std::str::from_utf8(take(body, &mut pos, meta_len, "meta")?)
            .map_err(|_| Error::Checkpoint("meta is not UTF-8".into()))?
            .to_string();
        let count = u32_at(body, &mut pos, "entry count")? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(body, &mut pos, 2, "manifest")?.try_into().expect("2 bytes"));
            let name = std::str::from_utf8(take(body, &mut pos, name_len as usize, "manifest")?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let head = take(body, &mut pos, 2, "manifest")?;
            let dtype = DType::from_code(head[0])
                .ok_or_else(|| Error::Checkpoint(format!("entry {name}: unknown dtype code {}", head[0])))?;
            let mut shape = Vec::with_capacity(head[1] as usize);
            for _ in 0..head[1] {
                let d = u64::from_le_bytes(take(body, &mut pos, 8, "manifest")?.try_into().expect("8 bytes"));
                shape.push(d as usize);
            }
            manifest.push((name, dtype, shape));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, dtype, shape) in manifest {
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| Error::Checkpoint(format!("entry {name}: shape overflows")))?;
            let raw = take(body, &mut pos, n, &format!("payload of {name}"))
                .map_err(|_| Error::Checkpoint(format!("entry {name}: payload shorter than manifest")))?;
            entries.push(Entry {
                name,
                shape,
                payload: Payload::read(dtype, raw),
            });
        }
        if pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after payloads",
                body.len() - pos
            )));
        }
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch; file is corrupted".into()));
        }
        Ok(Self { meta, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("a = 1\nb = two");
        c.push(Entry::new("w", vec![2, 2], Payload::F32(vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE])).unwrap());
        c.push(Entry::new("ids", vec![3], Payload::U32(vec![0, 7, u32::MAX])).unwrap());
        c.push(Entry::new("ts", vec![1, 2], Payload::I64(vec![-1, i64::MAX])).unwrap());
        c.push(Entry::new("x", vec![0], Payload::F64(vec![])).unwrap());
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"RSLB");
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = sample().to_bytes();
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(Container::from_bytes(&b).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn truncation_and_version_are_diagnosed() {
        let bytes = sample().to_bytes();
        for cut in [3, 9, 20, bytes.len() - 5] {
            assert!(Container::from_bytes(&bytes[..cut]).is_err());
        }
        let mut b = bytes.clone();
        b[4] = 9;
        let err = Container::from_bytes(&b).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn payload_length_must_match_shape() {
        assert!(Entry::new("w", vec![2, 3], Payload::F32(vec![0.0; 5])).is_err());
    }
}
