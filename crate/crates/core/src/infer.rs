//! Small deterministic forward-pass evaluator for sequential models.
//!
//! Activations are either flat vectors or `[channels, height, width]` maps.
//! Weights come from the [`Model`] by name so a sparsified model can be
//! evaluated against the same architecture manifest.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{LayerKind, LayerTensor, Model};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding keeping `out = ceil(in / stride)`. When the total padding
    /// is odd the extra row/column goes on the bottom/right.
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        weights: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f32>>,
    },
    Conv2d {
        weights: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f32>>,
        #[serde(default = "one")]
        stride: u32,
        #[serde(default)]
        padding: Padding,
    },
    Relu,
    MaxPool2d {
        window: u32,
        stride: u32,
    },
    Flatten,
    Softmax,
}

fn one() -> u32 {
    1
}

/// Architecture sidecar describing how the weight layers are wired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchManifest {
    pub layers: Vec<LayerSpec>,
}

impl ArchManifest {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Walks the manifest with symbolic shapes, checking every weight
    /// reference and shape transition. Returns the output shape.
    pub fn check(&self, model: &Model, input_shape: &[u32]) -> Result<Vec<usize>> {
        let mut shape: Vec<usize> = input_shape.iter().map(|&d| d as usize).collect();
        if shape.len() == 2 {
            shape.insert(0, 1);
        }
        for (i, spec) in self.layers.iter().enumerate() {
            shape = spec.output_shape(i, model, &shape)?;
        }
        Ok(shape)
    }
}

fn lookup<'m>(
    model: &'m Model,
    idx: usize,
    name: &str,
    kind: LayerKind,
) -> Result<&'m LayerTensor> {
    let layer = model.layer(name).ok_or_else(|| {
        Error::validation(format!(
            "manifest layer {idx}: weights '{name}' not found in model"
        ))
    })?;
    if layer.kind != kind {
        return Err(Error::validation(format!(
            "manifest layer {idx}: weights '{name}' are {:?}, expected {kind:?}",
            layer.kind
        )));
    }
    Ok(layer)
}

fn check_bias(idx: usize, name: &str, bias: &Option<Vec<f32>>, n: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != n => Err(Error::validation(format!(
            "manifest layer {idx} ('{name}'): bias has {} values, expected {n}",
            b.len()
        ))),
        Some(b) if b.iter().any(|v| !v.is_finite()) => Err(Error::validation(format!(
            "manifest layer {idx} ('{name}'): non-finite bias"
        ))),
        _ => Ok(()),
    }
}

fn conv_out(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

impl LayerSpec {
    fn describe(&self) -> String {
        match self {
            LayerSpec::Dense { weights, .. } => format!("dense '{weights}'"),
            LayerSpec::Conv2d { weights, .. } => format!("conv2d '{weights}'"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::MaxPool2d { .. } => "max_pool2d".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Softmax => "softmax".into(),
        }
    }

    fn mismatch(&self, idx: usize, msg: impl std::fmt::Display) -> Error {
        Error::validation(format!(
            "shape mismatch at manifest layer {idx} ({}): {msg}",
            self.describe()
        ))
    }

    fn output_shape(&self, idx: usize, model: &Model, shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { weights, bias } => {
                let w = lookup(model, idx, weights, LayerKind::FullyConnected)?;
                let (outs, ins) = (w.shape[0] as usize, w.shape[1] as usize);
                if shape.len() != 1 || shape[0] != ins {
                    return Err(
                        self.mismatch(idx, format!("expects a flat input of {ins}, got {shape:?}"))
                    );
                }
                check_bias(idx, weights, bias, outs)?;
                Ok(vec![outs])
            }
            LayerSpec::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => {
                let w = lookup(model, idx, weights, LayerKind::Conv)?;
                let [f, c, kh, kw] = [0, 1, 2, 3].map(|i| w.shape[i] as usize);
                if *stride == 0 {
                    return Err(self.mismatch(idx, "stride must be >= 1"));
                }
                if shape.len() != 3 || shape[0] != c {
                    return Err(
                        self.mismatch(idx, format!("expects [{c}, H, W] input, got {shape:?}"))
                    );
                }
                let s = *stride as usize;
                let (oh, _) = conv_out(shape[1], kh, s, *padding).ok_or_else(|| {
                    self.mismatch(idx, format!("kernel {kh}x{kw} larger than input {shape:?}"))
                })?;
                let (ow, _) = conv_out(shape[2], kw, s, *padding).ok_or_else(|| {
                    self.mismatch(idx, format!("kernel {kh}x{kw} larger than input {shape:?}"))
                })?;
                check_bias(idx, weights, bias, f)?;
                Ok(vec![f, oh, ow])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(shape.to_vec()),
            LayerSpec::MaxPool2d { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(self.mismatch(idx, "window and stride must be >= 1"));
                }
                let (win, s) = (*window as usize, *stride as usize);
                if shape.len() != 3 || shape[1] < win || shape[2] < win {
                    return Err(
                        self.mismatch(idx, format!("window {win} does not fit input {shape:?}"))
                    );
                }
                Ok(vec![
                    shape[0],
                    (shape[1] - win) / s + 1,
                    (shape[2] - win) / s + 1,
                ])
            }
            LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
        }
    }
}

/// Activation flowing between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn dense(w: &LayerTensor, bias: Option<&[f32]>, x: &[f32]) -> Vec<f32> {
    let ins = w.shape[1] as usize;
    w.data
        .chunks_exact(ins)
        .enumerate()
        .map(|(o, row)| {
            let acc = row.iter().zip(x).fold(0.0f32, |acc, (a, b)| acc + a * b);
            acc + bias.map_or(0.0, |b| b[o])
        })
        .collect()
}

fn conv2d(
    w: &LayerTensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: Padding,
    shape: &[usize],
    x: &[f32],
) -> Activation {
    let [f, c, kh, kw] = [0, 1, 2, 3].map(|i| w.shape[i] as usize);
    let (h, wd) = (shape[1], shape[2]);
    let (oh, pad_top) = conv_out(h, kh, stride, padding).expect("checked");
    let (ow, pad_left) = conv_out(wd, kw, stride, padding).expect("checked");
    let mut out = vec![0.0f32; f * oh * ow];
    for fi in 0..f {
        let b = bias.map_or(0.0, |b| b[fi]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad_left as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let wv = w.data[((fi * c + ci) * kh + ky) * kw + kx];
                            let xv = x[(ci * h + iy as usize) * wd + ix as usize];
                            acc += wv * xv;
                        }
                    }
                }
                out[(fi * oh + oy) * ow + ox] = acc + b;
            }
        }
    }
    Activation {
        shape: vec![f, oh, ow],
        data: out,
    }
}

fn max_pool(window: usize, stride: usize, shape: &[usize], x: &[f32]) -> Activation {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..window {
                    for kx in 0..window {
                        m = m.max(x[(ci * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Activation {
        shape: vec![c, oh, ow],
        data: out,
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(x: &[f32]) -> Vec<f32> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Runs one input through the manifest and returns the final scores.
pub fn forward(
    model: &Model,
    manifest: &ArchManifest,
    input: &[f32],
    input_shape: &[u32],
) -> Result<Vec<f32>> {
    manifest.check(model, input_shape)?;
    Ok(forward_unchecked(model, manifest, input, input_shape))
}

/// Forward pass without the shape walk. Callers must have run
/// [`ArchManifest::check`] for this model and input shape.
fn forward_unchecked(
    model: &Model,
    manifest: &ArchManifest,
    input: &[f32],
    input_shape: &[u32],
) -> Vec<f32> {
    let mut shape: Vec<usize> = input_shape.iter().map(|&d| d as usize).collect();
    if shape.len() == 2 {
        shape.insert(0, 1);
    }
    let mut act = Activation {
        shape,
        data: input.to_vec(),
    };
    for spec in &manifest.layers {
        act = match spec {
            LayerSpec::Dense { weights, bias } => {
                let w = model.layer(weights).expect("checked");
                let data = dense(w, bias.as_deref(), &act.data);
                Activation {
                    shape: vec![data.len()],
                    data,
                }
            }
            LayerSpec::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => {
                let w = model.layer(weights).expect("checked");
                conv2d(
                    w,
                    bias.as_deref(),
                    *stride as usize,
                    *padding,
                    &act.shape,
                    &act.data,
                )
            }
            LayerSpec::Relu => Activation {
                data: act.data.iter().map(|&v| v.max(0.0)).collect(),
                shape: act.shape,
            },
            LayerSpec::MaxPool2d { window, stride } => {
                max_pool(*window as usize, *stride as usize, &act.shape, &act.data)
            }
            LayerSpec::Flatten => Activation {
                shape: vec![act.data.len()],
                data: act.data,
            },
            LayerSpec::Softmax => Activation {
                data: softmax(&act.data),
                shape: act.shape,
            },
        };
    }
    act.data
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Number of samples whose top-1 prediction matches the label.
pub fn count_correct(model: &Model, manifest: &ArchManifest, data: &Dataset) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    let out_shape = manifest.check(model, &data.input_shape)?;
    let classes: usize = out_shape.iter().product();
    if classes < data.num_classes as usize {
        return Err(Error::validation(format!(
            "model produces {classes} scores but the dataset has {} classes",
            data.num_classes
        )));
    }
    Ok(data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .filter(|(x, &label)| {
            argmax(&forward_unchecked(model, manifest, x, &data.input_shape)) == label as usize
        })
        .count())
}

/// Top-1 accuracy over the dataset.
pub fn evaluate(model: &Model, manifest: &ArchManifest, data: &Dataset) -> Result<f64> {
    let correct = count_correct(model, manifest, data)?;
    Ok(correct as f64 / data.len() as f64)
}

pub fn normalized_accuracy(accuracy: f64, baseline: f64) -> Result<f64> {
    if baseline <= 0.0 || !baseline.is_finite() {
        return Err(Error::validation(format!(
            "baseline accuracy must be positive, got {baseline}"
        )));
    }
    Ok(accuracy / baseline)
}
