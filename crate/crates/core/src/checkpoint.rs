//! Checkpoint format: named tensors in a flat little-endian container.
//!
//! Layout: magic `CKPT`, `u32` version, `u32` tensor count, then per tensor:
//! `u16` name length, UTF-8 name, `u8` rank, `u32` per dim, f32 data.
//! Model hyperparameters, standardization statistics and clustering state
//! are stored as reserved `__`-prefixed tensors alongside the weights.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// An ordered name-to-tensor map, the unit of persistence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Incompatible(format!("checkpoint is missing tensor `{name}`")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io_err)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)
            .map_err(io_err)?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(Error::InvalidArgument(format!("tensor name too long: {name}")));
            }
            w.write_u16::<LittleEndian>(bytes.len() as u16).map_err(io_err)?;
            w.write_all(bytes).map_err(io_err)?;
            let shape = t.shape();
            if shape.len() > u8::MAX as usize {
                return Err(Error::InvalidArgument(format!("tensor rank too large: {name}")));
            }
            w.write_u8(shape.len() as u8).map_err(io_err)?;
            for &d in shape {
                w.write_u32::<LittleEndian>(d as u32).map_err(io_err)?;
            }
            for &v in t.data() {
                w.write_f32::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let trunc = |what: &str| Error::corrupt(path, format!("truncated while reading {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| trunc("magic"))?;
        if &magic != MAGIC {
            return Err(Error::corrupt(
                path,
                format!("unknown magic {magic:?}, expected \"CKPT\""),
            ));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| trunc("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::corrupt(
                path,
                format!("unknown checkpoint version {version}"),
            ));
        }
        let count = r.read_u32::<LittleEndian>().map_err(|_| trunc("tensor count"))?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let name_len = r
                .read_u16::<LittleEndian>()
                .map_err(|_| trunc(&format!("tensor {i} name length")))? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| trunc(&format!("tensor {i} name")))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::corrupt(path, format!("tensor {i} name is not UTF-8")))?;
            let rank = r.read_u8().map_err(|_| trunc(&format!("`{name}` rank")))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    r.read_u32::<LittleEndian>()
                        .map_err(|_| trunc(&format!("`{name}` dims")))? as usize,
                );
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0f32; numel];
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf)
                .map_err(|_| trunc(&format!("`{name}` data")))?;
            for (j, chunk) in buf.chunks_exact(4).enumerate() {
                data[j] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::corrupt(path, "trailing bytes after last tensor"));
        }
        Ok(Checkpoint { tensors })
    }
}
