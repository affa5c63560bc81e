//! Named parameter storage and the binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    b"ODCK"
//! version  u32 (= 1)
//! count    u32
//! count × { name_len u32, name utf-8, dtype u8 (1 = f64), rank u32,
//!           dims u64 × rank, data f64 × Π dims }
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Gradients, Tape, Tensor};

const MAGIC: &[u8; 4] = b"ODCK";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    /// Adds a `[rows, cols]` weight drawn from `U(-a, a)`, `a = sqrt(6 / (rows + cols))`.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Tensor::from_vec(vec![rows, cols], data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of every parameter bound on `tape`.
    pub fn accumulate(&mut self, tape: &Tape, grads: &mut Gradients) {
        for (id, var) in tape.bound_params() {
            if let Some(g) = grads.take(var) {
                self.grads[id.0].add_assign(&g);
            }
        }
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            version: VERSION,
            tensors: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| ManifestEntry {
                    name: n.clone(),
                    dtype: "f64".into(),
                    shape: v.shape().to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn write_checkpoint(store: &ParamStore, mut w: impl Write) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.names.iter().zip(&store.values) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore, CheckpointError> {
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(CheckpointError::Corrupt("name too long".into()));
        }
        let mut name = vec![0; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Corrupt("name not utf-8".into()))?;
        let mut dtype = [0u8];
        r.read_exact(&mut dtype)?;
        if dtype[0] != DTYPE_F64 {
            return Err(CheckpointError::Corrupt(format!("dtype {}", dtype[0])));
        }
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(CheckpointError::Corrupt(format!("rank {rank}")));
        }
        let shape = vec![read_u64(&mut r)? as usize, read_u64(&mut r)? as usize];
        let n = shape[0]
            .checked_mul(shape[1])
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| CheckpointError::Corrupt("tensor too large".into()))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        if store.find(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
        }
        store.add(name, Tensor::from_vec(shape, data));
    }
    Ok(store)
}

/// Writes `path` and a JSON manifest next to it (`manifest_path`).
pub fn save_checkpoint(store: &ParamStore, path: &Path, manifest_path: Option<&Path>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    if let Some(mp) = manifest_path {
        let json =
            serde_json::to_string_pretty(&store.manifest()).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        std::fs::write(mp, json)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
