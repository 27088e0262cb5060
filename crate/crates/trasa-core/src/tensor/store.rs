//! Named parameter buffers and their on-disk container.
//!
//! The container is a flat map from tensor name to shape plus little-endian
//! element bytes. Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8     magic "TRSATNSR"
//! bytes 8..12    u32 container format version (currently 1)
//! bytes 12..20   u64 length H of the JSON header
//! bytes 20..20+H JSON header { dtype, meta, tensors: [{name, shape, offset, len}] }
//! rest           element data, little-endian, concatenated in index order
//! ```
//!
//! `meta` is free-form JSON supplied by the caller (checkpointing stores the
//! model configuration there). `offset` and `len` count elements, not bytes.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};

pub const MAGIC: &[u8; 8] = b"TRSATNSR";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: Dtype,
    meta: Value,
    tensors: Vec<HeaderTensor>,
}

/// One named buffer.
#[derive(Debug, Clone)]
pub struct TensorEntry<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Ordered collection of named tensors. Order is insertion order and is part
/// of the contract: optimizer state and gradient vectors align by position.
#[derive(Debug, Clone, Default)]
pub struct TensorStore<S> {
    entries: Vec<TensorEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> TensorStore<S> {
    pub fn new() -> Self {
        TensorStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<S>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate tensor name {name:?}")));
        }
        let expect: usize = shape.iter().product();
        if expect == 0 || data.len() != expect {
            return Err(Error::Dimension(format!(
                "tensor {name:?}: shape {shape:?} implies {expect} elements, got {}",
                data.len()
            )));
        }
        let pos = self.entries.len();
        self.index.insert(name.to_string(), pos);
        self.entries.push(TensorEntry { name: name.to_string(), shape, data });
        Ok(pos)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TensorEntry<S>] {
        &self.entries
    }

    pub fn entry(&self, pos: usize) -> &TensorEntry<S> {
        &self.entries[pos]
    }

    pub fn entry_mut(&mut self, pos: usize) -> &mut TensorEntry<S> {
        &mut self.entries[pos]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry<S>> {
        self.position(name).map(|p| &self.entries[p])
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    // ─── container io ───

    pub fn save(&self, path: &Path, meta: Value) -> Result<()> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        let mut offset = 0usize;
        for e in &self.entries {
            tensors.push(HeaderTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset,
                len: e.data.len(),
            });
            offset += e.data.len();
        }
        let header = Header { dtype: S::DTYPE, meta, tensors };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Format(format!("could not encode container header: {e}")))?;

        let mut out = Vec::with_capacity(20 + header_json.len() + offset * S::DTYPE.size_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for e in &self.entries {
            for &v in &e.data {
                v.write_le(&mut out);
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Value)> {
        let bytes = fs::read(path)?;
        let (header, data_start) = read_header(&bytes, path)?;
        if header.dtype != S::DTYPE {
            return Err(Error::Format(format!(
                "{} holds {} tensors but {} was requested",
                path.display(),
                header.dtype.name(),
                S::DTYPE.name()
            )));
        }
        let width = S::DTYPE.size_bytes();
        let data = &bytes[data_start..];
        let mut store = TensorStore::new();
        for t in &header.tensors {
            let expect: usize = t.shape.iter().product();
            if expect != t.len {
                return Err(Error::Format(format!(
                    "tensor {:?}: shape {:?} inconsistent with stored length {}",
                    t.name, t.shape, t.len
                )));
            }
            let lo = t.offset * width;
            let hi = lo + t.len * width;
            if hi > data.len() {
                return Err(Error::Format(format!(
                    "tensor {:?} extends past the end of {}",
                    t.name,
                    path.display()
                )));
            }
            let vals: Vec<S> = data[lo..hi].chunks_exact(width).map(S::read_le).collect();
            store.push(&t.name, t.shape.clone(), vals)?;
        }
        Ok((store, header.meta))
    }

    /// Read only the header: element width and caller metadata.
    pub fn peek(path: &Path) -> Result<(Dtype, Value)> {
        let mut file = fs::File::open(path)?;
        let mut prefix = [0u8; 20];
        file.read_exact(&mut prefix)
            .map_err(|_| Error::Format(format!("{} is too short to be a tensor container", path.display())))?;
        // Validate before trusting the length field with an allocation:
        // arbitrary files must fail cleanly, not abort on a huge request.
        if &prefix[0..8] != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a tensor container (bad magic)",
                path.display()
            )));
        }
        let header_len = u64::from_le_bytes(prefix[12..20].try_into().expect("8 bytes"));
        if header_len > file.metadata()?.len().saturating_sub(20) {
            return Err(Error::Format(format!(
                "{}: truncated container header",
                path.display()
            )));
        }
        let mut rest = vec![0u8; header_len as usize];
        file.read_exact(&mut rest)
            .map_err(|_| Error::Format(format!("{}: truncated container header", path.display())))?;
        let mut bytes = prefix.to_vec();
        bytes.extend_from_slice(&rest);
        let (header, _) = read_header(&bytes, path)?;
        Ok((header.dtype, header.meta))
    }
}

fn read_header(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    if bytes.len() < 20 || &bytes[0..8] != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a tensor container (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported container version {version} (supported: {CONTAINER_VERSION})",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len());
    let Some(end) = end else {
        return Err(Error::Format(format!("{}: truncated container header", path.display())));
    };
    let header: Header = serde_json::from_slice(&bytes[20..end])
        .map_err(|e| Error::Format(format!("{}: invalid container header: {e}", path.display())))?;
    Ok((header, end))
}
