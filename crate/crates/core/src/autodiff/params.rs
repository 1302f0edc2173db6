use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PBMP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named trainable tensors, held in 64-bit precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f64>) -> usize {
        let name = name.into();
        if let Some(i) = self.index_of(&name) {
            self.entries[i].1 = value;
            i
        } else {
            self.entries.push((name, value));
            self.entries.len() - 1
        }
    }

    /// Uniform Glorot initialisation of an `fan_in × fan_out` weight.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::new(fan_in, fan_out, data).expect("sized"))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f64>> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn tensor(&self, index: usize) -> &Tensor<f64> {
        &self.entries[index].1
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<f64> {
        &mut self.entries[index].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<f64>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f64>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Place every tensor on the tape as a trainable leaf.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<BoundParams> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.param(t.cast()))
            .collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }

    /// Gradients of the last backward pass, zero where unreached.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>, bound: &BoundParams) -> Vec<Tensor<f64>> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|((_, t), &v)| match tape.grad(v) {
                Some(g) => g.cast(),
                None => Tensor::zeros(t.rows(), t.cols()),
            })
            .collect()
    }

    /// Serialize to the versioned binary checkpoint format with JSON
    /// metadata.
    pub fn to_bytes(&self, metadata: &serde_json::Value) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let w = |e: std::io::Error| Error::CorruptFile(e.to_string());
        out.write_all(CHECKPOINT_MAGIC).map_err(w)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(w)?;
        let meta = serde_json::to_vec(metadata)?;
        out.write_u32::<LittleEndian>(meta.len() as u32).map_err(w)?;
        out.write_all(&meta).map_err(w)?;
        out.write_u32::<LittleEndian>(self.entries.len() as u32).map_err(w)?;
        for (name, t) in &self.entries {
            out.write_u32::<LittleEndian>(name.len() as u32).map_err(w)?;
            out.write_all(name.as_bytes()).map_err(w)?;
            out.write_u32::<LittleEndian>(2).map_err(w)?;
            out.write_u64::<LittleEndian>(t.rows() as u64).map_err(w)?;
            out.write_u64::<LittleEndian>(t.cols() as u64).map_err(w)?;
            for &v in t.data() {
                out.write_f32::<LittleEndian>(v as f32).map_err(w)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let mut cur = Cursor::new(bytes);
        let corrupt = |e: std::io::Error| Error::CorruptFile(e.to_string());
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::CorruptFile("bad checkpoint magic".into()));
        }
        let version = cur.read_u32::<LittleEndian>().map_err(corrupt)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = cur.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut meta = vec![0u8; meta_len];
        cur.read_exact(&mut meta).map_err(corrupt)?;
        let metadata = serde_json::from_slice(&meta)
            .map_err(|e| Error::CorruptFile(format!("checkpoint metadata: {e}")))?;
        let count = cur.read_u32::<LittleEndian>().map_err(corrupt)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = cur.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name).map_err(corrupt)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::CorruptFile("parameter name is not utf-8".into()))?;
            let ndim = cur.read_u32::<LittleEndian>().map_err(corrupt)?;
            let dims = (0..ndim)
                .map(|_| cur.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(corrupt)?;
            let (rows, cols) = match dims.as_slice() {
                [r, c] => (*r, *c),
                [n] => (1, *n),
                _ => return Err(Error::CorruptFile(format!("{ndim}-d parameter {name}"))),
            };
            let remaining = bytes.len() as u64 - cur.position();
            if (rows as u64).saturating_mul(cols as u64).saturating_mul(4) > remaining {
                return Err(Error::CorruptFile(format!("truncated parameter {name}")));
            }
            let data = (0..rows * cols)
                .map(|_| cur.read_f32::<LittleEndian>().map(f64::from))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(corrupt)?;
            store.insert(name, Tensor::new(rows, cols, data)?);
        }
        if cur.position() != bytes.len() as u64 {
            return Err(Error::CorruptFile("trailing bytes after checkpoint".into()));
        }
        Ok((store, metadata))
    }

    pub fn save(&self, path: &Path, metadata: &serde_json::Value) -> Result<()> {
        let bytes = self.to_bytes(metadata)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Round every value to the nearest f32, as a checkpoint would.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Tape handles of a bound [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
