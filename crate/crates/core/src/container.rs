//! Model data types and the `SPWT` weight container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "SPWT" | version: u8 = 1 | layer_count: u32
//! per layer:
//!   name_len: u16 | name: UTF-8 | kind: u8 (0 = conv, 1 = fc) | rank: u8 (2 or 4)
//!   dims: rank x u32 | data: product(dims) x f32
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPWT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    FullyConnected,
}

impl LayerKind {
    pub fn rank(self) -> usize {
        match self {
            LayerKind::Conv => 4,
            LayerKind::FullyConnected => 2,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::FullyConnected => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(LayerKind::Conv),
            1 => Ok(LayerKind::FullyConnected),
            other => Err(Error::format(format!("unknown layer kind byte {other}"))),
        }
    }
}

/// Weights of one layer. Conv shapes are `[filters, channels, height, width]`,
/// fully connected shapes are `[outputs, inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<u32>,
    pub data: Vec<f32>,
}

impl LayerTensor {
    /// Builds a layer and checks its invariants.
    pub fn new(
        name: impl Into<String>,
        kind: LayerKind,
        shape: Vec<u32>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let layer = LayerTensor {
            name: name.into(),
            kind,
            shape,
            data,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.len() > u16::MAX as usize {
            return Err(Error::validation(format!(
                "layer name is {} bytes, limit is {}",
                self.name.len(),
                u16::MAX
            )));
        }
        if self.shape.len() != self.kind.rank() {
            return Err(Error::validation(format!(
                "layer '{}': {:?} requires rank {}, shape {:?} has rank {}",
                self.name,
                self.kind,
                self.kind.rank(),
                self.shape,
                self.shape.len()
            )));
        }
        if self.shape.contains(&0) {
            return Err(Error::validation(format!(
                "layer '{}': dimensions must be positive, got {:?}",
                self.name, self.shape
            )));
        }
        let expected = element_count(&self.shape).ok_or_else(|| {
            Error::validation(format!(
                "layer '{}': shape {:?} overflows",
                self.name, self.shape
            ))
        })?;
        if expected != self.data.len() {
            return Err(Error::validation(format!(
                "layer '{}': shape {:?} needs {} values, found {}",
                self.name,
                self.shape,
                expected,
                self.data.len()
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "layer '{}': non-finite weight {} at index {}",
                self.name, self.data[pos], pos
            )));
        }
        Ok(())
    }
}

fn element_count(shape: &[u32]) -> Option<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

/// Ordered weight layers in network forward order (layer 1 first).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<LayerTensor>,
}

impl Model {
    pub fn new(layers: Vec<LayerTensor>) -> Result<Self> {
        let model = Model { layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("model must contain at least one layer"));
        }
        if self.layers.len() > u32::MAX as usize {
            return Err(Error::validation("too many layers for the container"));
        }
        let mut seen = HashSet::with_capacity(self.layers.len());
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate layer name '{}'",
                    layer.name
                )));
            }
            layer.validate()?;
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerTensor::len).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerTensor> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Serializes the model into container bytes. Validation happens before
    /// anything is produced.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let payload: usize = self
            .layers
            .iter()
            .map(|l| 2 + l.name.len() + 2 + 4 * l.shape.len() + 4 * l.data.len())
            .sum();
        let mut out = Vec::with_capacity(9 + payload);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.name.len() as u16).to_le_bytes());
            out.extend_from_slice(layer.name.as_bytes());
            out.push(layer.kind.to_byte());
            out.push(layer.shape.len() as u8);
            for d in &layer.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &layer.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format(format!(
                "bad magic {magic:?}, expected \"SPWT\""
            )));
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported SPWT version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format("layer name is not valid UTF-8"))?;
            let kind = LayerKind::from_byte(read_u8(&mut r)?)?;
            let rank = read_u8(&mut r)? as usize;
            if rank != 2 && rank != 4 {
                return Err(Error::format(format!(
                    "layer '{name}': rank {rank} is not 2 or 4"
                )));
            }
            let shape = (0..rank)
                .map(|_| read_u32(&mut r))
                .collect::<io::Result<Vec<_>>>()?;
            let n = element_count(&shape).ok_or_else(|| {
                Error::validation(format!("layer '{name}': shape {shape:?} overflows"))
            })?;
            if n.checked_mul(4).is_none_or(|b| b > r.len()) {
                return Err(Error::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!(
                        "layer '{name}': declares {n} floats but only {} bytes remain",
                        r.len()
                    ),
                )));
            }
            let (raw, rest) = r.split_at(4 * n);
            r = rest;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            layers.push(LayerTensor {
                name,
                kind,
                shape,
                data,
            });
        }
        if !r.is_empty() {
            return Err(Error::format(format!(
                "{} trailing bytes after the last layer",
                r.len()
            )));
        }
        Model::new(layers)
    }
}

pub(crate) fn read_u8(r: &mut &[u8]) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u16(r: &mut &[u8]) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut &[u8]) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = fs::read(path)?;
    Model::from_bytes(&bytes)
}

/// Writes `model` to `path`. Invalid models are rejected before the file is touched.
pub fn write_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let bytes = model.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}
