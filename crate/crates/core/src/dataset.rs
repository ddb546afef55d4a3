//! Labeled evaluation data in the `SPDS` binary format.
//!
//! ```text
//! "SPDS" | version: u8 = 1 | n: u32 | rank: u8 | dims: rank x u32 | classes: u32
//! n x ( input: product(dims) x f32 | label: u16 )
//! ```

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use crate::container::{read_u16, read_u32, read_u8};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPDS";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_shape: Vec<u32>,
    pub num_classes: u32,
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<u16>,
}

impl Dataset {
    pub fn new(
        input_shape: Vec<u32>,
        num_classes: u32,
        inputs: Vec<Vec<f32>>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        let ds = Dataset {
            input_shape,
            num_classes,
            inputs,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().map(|&d| d as usize).product()
    }

    /// Fraction of samples labeled with class `class`.
    pub fn class_frequency(&self, class: u16) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.len() > u8::MAX as usize {
            return Err(Error::validation("dataset input rank must be in 1..=255"));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::validation(format!(
                "dataset input dimensions must be positive, got {:?}",
                self.input_shape
            )));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(Error::validation(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if self.labels.len() > u32::MAX as usize {
            return Err(Error::validation("too many samples"));
        }
        let want = self.input_len();
        for (i, (x, &label)) in self.inputs.iter().zip(&self.labels).enumerate() {
            if x.len() != want {
                return Err(Error::validation(format!(
                    "sample {i}: input has {} values, shape {:?} needs {want}",
                    x.len(),
                    self.input_shape
                )));
            }
            if u32::from(label) >= self.num_classes {
                return Err(Error::validation(format!(
                    "sample {i}: label {label} >= class count {}",
                    self.num_classes
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("sample {i}: non-finite input")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let per_sample = 4 * self.input_len() + 2;
        let mut out = Vec::with_capacity(14 + 4 * self.input_shape.len() + per_sample * self.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.push(self.input_shape.len() as u8);
        for d in &self.input_shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.num_classes.to_le_bytes());
        for (x, label) in self.inputs.iter().zip(&self.labels) {
            for v in x {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            out.extend_from_slice(&label.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format(format!(
                "bad magic {magic:?}, expected \"SPDS\""
            )));
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported SPDS version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let rank = read_u8(&mut r)? as usize;
        let input_shape = (0..rank)
            .map(|_| read_u32(&mut r))
            .collect::<io::Result<Vec<_>>>()?;
        let num_classes = read_u32(&mut r)?;
        let per_input = input_shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::validation("dataset input shape overflows"))?;
        let needed = per_input
            .checked_mul(4)
            .and_then(|b| b.checked_add(2))
            .and_then(|b| b.checked_mul(n));
        if needed.is_none_or(|b| b > r.len()) {
            return Err(Error::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!(
                    "dataset declares {n} samples but only {} bytes remain",
                    r.len()
                ),
            )));
        }
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (raw, rest) = r.split_at(4 * per_input);
            inputs.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect(),
            );
            r = rest;
            labels.push(read_u16(&mut r)?);
        }
        if !r.is_empty() {
            return Err(Error::format(format!(
                "{} trailing bytes after the last sample",
                r.len()
            )));
        }
        Dataset::new(input_shape, num_classes, inputs, labels)
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_bytes(&fs::read(path)?)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ds.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}
