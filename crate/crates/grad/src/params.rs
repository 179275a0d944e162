//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "VFGCKPT\0"
//! version u32      CHECKPOINT_VERSION
//! meta    u64 length, then UTF-8 bytes (free-form, usually JSON)
//! count   u32      number of parameter records
//! record  u32 name length, name bytes,
//!         u32 rank, rank × u64 dims,
//!         product(dims) × f64 raw little-endian values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::array::DenseArray;
use crate::error::{GradError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VFGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered registry of named trainable arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: DenseArray) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseArray {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: DenseArray) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(GradError::ShapeMismatch {
                op: "set_param",
                shapes: vec![self.values[id.0].shape().to_vec(), value.shape().to_vec()],
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut DenseArray {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseArray)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(DenseArray::len).sum()
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W, meta: &str) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(meta.as_bytes())?;
        out.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(value.shape().len() as u32).to_le_bytes())?;
            for &d in value.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the store and its metadata string.
    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(Self, String)> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(GradError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(GradError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u64(input)? as usize;
        let meta = read_string(input, meta_len)?;
        let count = read_u32(input)? as usize;
        let mut store = Self::new();
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            let name = read_string(input, name_len)?;
            let rank = read_u32(input)? as usize;
            let shape = (0..rank).map(|_| read_u64(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf)?;
            let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if store.id_of(&name).is_some() {
                return Err(GradError::Checkpoint(format!("duplicate record {name}")));
            }
            store.add(name, DenseArray::new(shape, data)?);
        }
        Ok((store, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &str) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf, meta)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(&mut bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| GradError::Checkpoint(e.to_string()))
}
