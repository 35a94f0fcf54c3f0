//! Raw little-endian blob sidecar shared by the model and dataset formats.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one array inside a blob file. `offset` and `len` are in
/// bytes; `crc32` covers exactly those bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
    pub crc32: u32,
}

#[derive(Debug, Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f32(&mut self, shape: &[usize], data: impl IntoIterator<Item = f32>) -> BlobRef {
        let start = self.bytes.len();
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.finish(shape, start)
    }

    pub fn push_i32(&mut self, shape: &[usize], data: impl IntoIterator<Item = i32>) -> BlobRef {
        let start = self.bytes.len();
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.finish(shape, start)
    }

    fn finish(&mut self, shape: &[usize], start: usize) -> BlobRef {
        let chunk = &self.bytes[start..];
        BlobRef {
            shape: shape.to_vec(),
            offset: start as u64,
            len: chunk.len() as u64,
            crc32: crc32fast::hash(chunk),
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct BlobReader {
    bytes: Vec<u8>,
}

impl BlobReader {
    pub fn open(path: &Path) -> Result<Self> {
        match std::fs::read(path) {
            Ok(bytes) => Ok(BlobReader { bytes }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::MissingBlob(path.to_path_buf()))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn chunk(&self, name: &str, r: &BlobRef) -> Result<&[u8]> {
        let size = self.bytes.len() as u64;
        let end = r.offset.checked_add(r.len);
        if end.is_none_or(|e| e > size) {
            return Err(Error::BlobBounds {
                name: name.to_string(),
                offset: r.offset,
                len: r.len,
                size,
            });
        }
        let numel: usize = r.shape.iter().product();
        if r.shape.is_empty() || numel as u64 * 4 != r.len {
            return Err(Error::Shape(format!(
                "`{name}`: shape {:?} does not match {} bytes",
                r.shape, r.len
            )));
        }
        let chunk = &self.bytes[r.offset as usize..(r.offset + r.len) as usize];
        let actual = crc32fast::hash(chunk);
        if actual != r.crc32 {
            return Err(Error::Checksum {
                name: name.to_string(),
                expected: r.crc32,
                actual,
            });
        }
        Ok(chunk)
    }

    pub fn f32s(&self, name: &str, r: &BlobRef) -> Result<Vec<f32>> {
        Ok(self
            .chunk(name, r)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    pub fn i32s(&self, name: &str, r: &BlobRef) -> Result<Vec<i32>> {
        Ok(self
            .chunk(name, r)?
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

/// Sidecar path next to a manifest: `foo.json` -> `foo.bin`.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
