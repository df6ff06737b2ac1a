//! Named-tensor archive used for checkpoints: a magic/version header, a JSON
//! metadata blob, the tensors (f64 little-endian), and a SHA-256 digest
//! trailer covering everything before it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tape::Tensor;

const MAGIC: &[u8; 8] = b"DCGARCH\0";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not an archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0} (expected {ARCHIVE_VERSION})")]
    UnsupportedVersion(u32),
    #[error("archive integrity check failed (digest mismatch or truncation)")]
    Integrity,
    #[error("malformed archive: {0}")]
    Malformed(String),
}

/// Checkpoint payload: arbitrary JSON metadata plus ordered named tensors.
#[derive(Debug, Clone)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub fn save_archive(path: &Path, archive: &Archive) -> Result<(), CheckpointError> {
    let file = File::create(path)?;
    let mut w = HashingWriter { inner: BufWriter::new(file), hasher: Sha256::new() };
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(ARCHIVE_VERSION)?;
    let meta = serde_json::to_vec(&archive.meta)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    w.write_u64::<LittleEndian>(meta.len() as u64)?;
    w.write_all(&meta)?;
    w.write_u64::<LittleEndian>(archive.tensors.len() as u64)?;
    for (name, tensor) in &archive.tensors {
        let bytes = name.as_bytes();
        w.write_u64::<LittleEndian>(bytes.len() as u64)?;
        w.write_all(bytes)?;
        w.write_u64::<LittleEndian>(tensor.rows as u64)?;
        w.write_u64::<LittleEndian>(tensor.cols as u64)?;
        for &v in &tensor.data {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    let digest = w.hasher.finalize();
    let mut inner = w.inner;
    inner.write_all(&digest)?;
    inner.flush()?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<Archive, CheckpointError> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.len() < MAGIC.len() + 32 {
        return Err(CheckpointError::Integrity);
    }
    let (body, trailer) = raw.split_at(raw.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(CheckpointError::Integrity);
    }
    let mut r = body;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != ARCHIVE_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = r.read_u64::<LittleEndian>()? as usize;
    if meta_len > r.len() {
        return Err(CheckpointError::Malformed("metadata length exceeds file".into()));
    }
    let meta: serde_json::Value = serde_json::from_slice(&r[..meta_len])
        .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
    r = &r[meta_len..];
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u64::<LittleEndian>()? as usize;
        if name_len > r.len() {
            return Err(CheckpointError::Malformed("name length exceeds file".into()));
        }
        let name = String::from_utf8(r[..name_len].to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name not UTF-8".into()))?;
        r = &r[name_len..];
        let rows = r.read_u64::<LittleEndian>()? as usize;
        let cols = r.read_u64::<LittleEndian>()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| CheckpointError::Malformed("tensor shape overflow".into()))?;
        if n * 8 > r.len() {
            return Err(CheckpointError::Malformed(format!("tensor {name} truncated")));
        }
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    Ok(Archive { meta, tensors })
}
