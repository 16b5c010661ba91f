//! Self-describing parameter archive.
//!
//! Layout: the 8-byte magic `RGCKPT01`, a little-endian `u64` header length,
//! a JSON header `{"meta": ..., "tensors": [{"name", "shape", "offset"}]}`,
//! then every tensor's values as little-endian `f64` in row-major order.
//! `offset` counts `f64` elements from the start of the data section.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Module, Param, Visitor};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

const MAGIC: &[u8; 8] = b"RGCKPT01";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

struct Capture<'a>(&'a mut BTreeMap<String, ArrayD<f64>>);

impl Visitor for Capture<'_> {
    fn param(&mut self, name: &str, p: &mut Param) {
        self.0.insert(name.to_string(), p.value.clone());
    }
    fn buffer(&mut self, name: &str, b: &mut ArrayD<f64>) {
        self.0.insert(name.to_string(), b.clone());
    }
}

struct Restore<'a> {
    src: &'a BTreeMap<String, ArrayD<f64>>,
    err: Option<Error>,
}

impl Restore<'_> {
    fn load(&mut self, name: &str, dst: &mut ArrayD<f64>) {
        if self.err.is_some() {
            return;
        }
        match self.src.get(name) {
            Some(a) if a.shape() == dst.shape() => dst.assign(a),
            Some(a) => {
                self.err = Some(Error::input(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    a.shape(),
                    dst.shape()
                )))
            }
            None => self.err = Some(Error::input(format!("checkpoint is missing tensor `{name}`"))),
        }
    }
}

impl Visitor for Restore<'_> {
    fn param(&mut self, name: &str, p: &mut Param) {
        self.load(name, &mut p.value);
    }
    fn buffer(&mut self, name: &str, b: &mut ArrayD<f64>) {
        self.load(name, b);
    }
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    /// Copy all parameters and buffers of `m` under `prefix`.
    pub fn capture<M: Module + ?Sized>(&mut self, prefix: &str, m: &mut M) {
        m.visit(prefix, &mut Capture(&mut self.tensors));
    }

    /// Overwrite `m`'s parameters and buffers with the stored tensors.
    pub fn restore<M: Module + ?Sized>(&self, prefix: &str, m: &mut M) -> Result<()> {
        let mut r = Restore {
            src: &self.tensors,
            err: None,
        };
        m.visit(prefix, &mut r);
        r.err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, a) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                shape: a.shape().to_vec(),
                offset,
            });
            offset += a.len();
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in self.tensors.values() {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, message: &str| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: message.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fail(0, "not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(8, "header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| fail(16, &format!("bad header: {e}")))?;
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let (start, end) = (e.offset * 8, (e.offset + n) * 8);
            if end > data.len() {
                return Err(fail(data_start + start, &format!("tensor `{}` runs past end of file", e.name)));
            }
            let values: Vec<f64> = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let a = ArrayD::from_shape_vec(IxDyn(&e.shape), values).expect("shape matches length");
            tensors.insert(e.name, a);
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
