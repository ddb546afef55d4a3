//! Threshold plans for the flat, triangular and relative methods, the
//! thresholding function itself, and sparsity metrics.
//!
//! Every method resolves to one threshold `tau_l` per layer. Applying a plan
//! replaces each weight with `|w| <= tau_l` by `+0.0` and leaves every other
//! weight bit-identical.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{LayerTensor, Model};
use crate::error::{check_fraction, Error, Result};
use crate::stats::{layer_stats, magnitude_percentile, min_span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Flat,
    Triangular,
    Relative,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Flat => "flat",
            Method::Triangular => "triangular",
            Method::Relative => "relative",
        })
    }
}

/// How interior layers of the triangular method get their thresholds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangularMode {
    /// `tau_l = (tau_max - tau_min) / L * (l - 2)` for `1 < l < L`, taken
    /// literally. Layer 2 gets threshold 0 and the ramp never reaches `tau_max`.
    #[default]
    #[serde(alias = "paper")]
    Literal,
    /// Straight line from `tau_min` at layer 1 to `tau_max` at layer L.
    Interpolated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeMode {
    /// `tau_l` is the nearest-rank `delta_l` percentile of `|w|`.
    #[default]
    Percentile,
    /// `tau_l = (max - min) * delta_l`.
    Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RelativeDeltas {
    Uniform(f64),
    PerLayer(Vec<f64>),
}

impl RelativeDeltas {
    fn resolve(&self, num_layers: usize) -> Result<Vec<f64>> {
        let deltas = match self {
            RelativeDeltas::Uniform(d) => vec![*d; num_layers],
            RelativeDeltas::PerLayer(v) => {
                if v.len() != num_layers {
                    return Err(Error::validation(format!(
                        "got {} per-layer deltas for a model with {} layers",
                        v.len(),
                        num_layers
                    )));
                }
                v.clone()
            }
        };
        for (i, &d) in deltas.iter().enumerate() {
            check_fraction(&format!("delta for layer {}", i + 1), d)?;
        }
        Ok(deltas)
    }
}

impl From<f64> for RelativeDeltas {
    fn from(d: f64) -> Self {
        RelativeDeltas::Uniform(d)
    }
}

impl From<Vec<f64>> for RelativeDeltas {
    fn from(v: Vec<f64>) -> Self {
        RelativeDeltas::PerLayer(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodParams {
    Flat {
        delta: f64,
    },
    Triangular {
        delta_conv: f64,
        delta_fc: f64,
        mode: TriangularMode,
    },
    Relative {
        deltas: RelativeDeltas,
        mode: RelativeMode,
    },
}

impl MethodParams {
    pub fn method(&self) -> Method {
        match self {
            MethodParams::Flat { .. } => Method::Flat,
            MethodParams::Triangular { .. } => Method::Triangular,
            MethodParams::Relative { .. } => Method::Relative,
        }
    }

    /// Resolves these parameters against `model` into a full plan.
    pub fn plan(&self, model: &Model) -> Result<SparsifyPlan> {
        match self {
            MethodParams::Flat { delta } => plan_flat(model, *delta),
            MethodParams::Triangular {
                delta_conv,
                delta_fc,
                mode,
            } => plan_triangular(model, *delta_conv, *delta_fc, *mode),
            MethodParams::Relative { deltas, mode } => plan_relative(model, deltas.clone(), *mode),
        }
    }
}

/// Method parameters together with the resolved threshold vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyPlan {
    #[serde(flatten)]
    pub params: MethodParams,
    pub thresholds: Vec<f64>,
}

impl SparsifyPlan {
    pub fn method(&self) -> Method {
        self.params.method()
    }

    /// A plan that changes nothing: every threshold is negative.
    pub fn identity(model: &Model) -> Self {
        SparsifyPlan {
            params: MethodParams::Relative {
                deltas: RelativeDeltas::Uniform(0.0),
                mode: RelativeMode::Percentile,
            },
            thresholds: vec![crate::stats::NO_OP_THRESHOLD; model.num_layers()],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: SparsifyPlan = serde_json::from_str(s)?;
        if plan.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("plan thresholds must be finite"));
        }
        Ok(plan)
    }
}

fn ensure_non_empty(model: &Model) -> Result<()> {
    if model.layers.is_empty() {
        return Err(Error::validation("model has no layers"));
    }
    Ok(())
}

/// One threshold for every layer: `sigma_min * delta`, where `sigma_min` is the
/// smallest per-layer span in the model.
pub fn plan_flat(model: &Model, delta: f64) -> Result<SparsifyPlan> {
    check_fraction("delta", delta)?;
    ensure_non_empty(model)?;
    let (_, sigma_min) = min_span(model)?;
    let tau = sigma_min * delta;
    Ok(SparsifyPlan {
        params: MethodParams::Flat { delta },
        thresholds: vec![tau; model.num_layers()],
    })
}

/// Thresholds ramping from `span(layer 1) * delta_conv` at the first layer to
/// `span(layer L) * delta_fc` at the last. Layer kinds are not checked.
pub fn plan_triangular(
    model: &Model,
    delta_conv: f64,
    delta_fc: f64,
    mode: TriangularMode,
) -> Result<SparsifyPlan> {
    check_fraction("delta_conv", delta_conv)?;
    check_fraction("delta_fc", delta_fc)?;
    let n = model.num_layers();
    if n < 2 {
        return Err(Error::validation(format!(
            "triangular method needs at least 2 layers, model has {n}"
        )));
    }
    let tau_min = layer_stats(&model.layers[0])?.span * delta_conv;
    let tau_max = layer_stats(&model.layers[n - 1])?.span * delta_fc;
    let thresholds = triangular_thresholds(n, tau_min, tau_max, mode)?;
    Ok(SparsifyPlan {
        params: MethodParams::Triangular {
            delta_conv,
            delta_fc,
            mode,
        },
        thresholds,
    })
}

/// Threshold vector for `num_layers` layers given the two endpoint thresholds.
pub fn triangular_thresholds(
    num_layers: usize,
    tau_min: f64,
    tau_max: f64,
    mode: TriangularMode,
) -> Result<Vec<f64>> {
    if num_layers < 2 {
        return Err(Error::validation(
            "triangular thresholds need at least 2 layers",
        ));
    }
    let l_total = num_layers as f64;
    let rise = tau_max - tau_min;
    if mode == TriangularMode::Literal && rise < 0.0 {
        return Err(Error::validation(format!(
            "literal triangular mode requires tau_max >= tau_min (tau_max = {tau_max}, \
             tau_min = {tau_min}); interior thresholds (tau_max - tau_min) / L * (l - 2) \
             would be negative"
        )));
    }
    Ok((1..=num_layers)
        .map(|l| {
            if l == 1 {
                tau_min
            } else if l == num_layers {
                tau_max
            } else {
                match mode {
                    TriangularMode::Literal => rise / l_total * (l as f64 - 2.0),
                    TriangularMode::Interpolated => {
                        tau_min + rise * (l as f64 - 1.0) / (l_total - 1.0)
                    }
                }
            }
        })
        .collect())
}

/// Per-layer thresholds from each layer's own weight distribution.
pub fn plan_relative(
    model: &Model,
    deltas: impl Into<RelativeDeltas>,
    mode: RelativeMode,
) -> Result<SparsifyPlan> {
    ensure_non_empty(model)?;
    let deltas = deltas.into();
    let per_layer = deltas.resolve(model.num_layers())?;
    let thresholds = model
        .layers
        .par_iter()
        .zip(per_layer.par_iter())
        .map(|(layer, &d)| match mode {
            RelativeMode::Percentile => magnitude_percentile(layer, d),
            RelativeMode::Span => Ok(layer_stats(layer)?.span * d),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparsifyPlan {
        params: MethodParams::Relative { deltas, mode },
        thresholds,
    })
}

#[inline]
fn threshold_weight(w: f32, tau: f64) -> f32 {
    if f64::from(w.abs()) <= tau {
        0.0
    } else {
        w
    }
}

fn check_plan_len(model: &Model, plan: &SparsifyPlan) -> Result<()> {
    if plan.thresholds.len() != model.num_layers() {
        return Err(Error::validation(format!(
            "plan has {} thresholds, model has {} layers",
            plan.thresholds.len(),
            model.num_layers()
        )));
    }
    Ok(())
}

/// Thresholds one layer, returning a new tensor.
pub fn sparsify_layer(layer: &LayerTensor, tau: f64) -> LayerTensor {
    LayerTensor {
        name: layer.name.clone(),
        kind: layer.kind,
        shape: layer.shape.clone(),
        data: layer
            .data
            .iter()
            .map(|&w| threshold_weight(w, tau))
            .collect(),
    }
}

/// Returns a sparsified copy of `model`; the input is left untouched.
pub fn apply_plan(model: &Model, plan: &SparsifyPlan) -> Result<Model> {
    check_plan_len(model, plan)?;
    let layers = model
        .layers
        .par_iter()
        .zip(plan.thresholds.par_iter())
        .map(|(layer, &tau)| sparsify_layer(layer, tau))
        .collect();
    Ok(Model { layers })
}

/// Sparsifies a loaded model in memory without copying, for callers that no
/// longer need the dense weights.
pub fn apply_plan_in_place(model: &mut Model, plan: &SparsifyPlan) -> Result<()> {
    check_plan_len(model, plan)?;
    model
        .layers
        .par_iter_mut()
        .zip(plan.thresholds.par_iter())
        .for_each(|(layer, &tau)| {
            for w in &mut layer.data {
                *w = threshold_weight(*w, tau);
            }
        });
    Ok(())
}

/// `1 / (1 - s_m)`; infinite when every weight is zero.
pub fn compression_factor(model_sparsity: f64) -> Result<f64> {
    check_fraction("model sparsity", model_sparsity)?;
    if model_sparsity >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (1.0 - model_sparsity))
}

/// Formats a value with three significant digits (`3.70`, `12.5`, `100`).
/// Infinity prints as `inf`.
pub fn format_sig3(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 || x.is_nan() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let rounded_mag = {
        let scale = 10f64.powi(2 - magnitude);
        ((x.abs() * scale).round() / scale).log10().floor() as i32
    };
    let decimals = (2 - rounded_mag).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub weight_count: u64,
    pub zero_count: u64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub per_layer: Vec<LayerSparsity>,
    pub model_zero_count: u64,
    pub model_weight_count: u64,
    pub model_sparsity: f64,
    #[serde(with = "finite_or_inf")]
    pub compression_factor: f64,
}

impl SparsityReport {
    /// Aggregates `(name, weight count, zero count)` triples.
    pub fn from_counts<S: Into<String>>(
        counts: impl IntoIterator<Item = (S, u64, u64)>,
    ) -> Result<Self> {
        let mut per_layer = Vec::new();
        let (mut zeros, mut total) = (0u64, 0u64);
        for (name, weight_count, zero_count) in counts {
            let name = name.into();
            if weight_count == 0 {
                return Err(Error::validation(format!("layer '{name}' has no weights")));
            }
            if zero_count > weight_count {
                return Err(Error::validation(format!(
                    "layer '{name}': {zero_count} zeros exceed {weight_count} weights"
                )));
            }
            zeros += zero_count;
            total += weight_count;
            per_layer.push(LayerSparsity {
                name,
                weight_count,
                zero_count,
                sparsity: zero_count as f64 / weight_count as f64,
            });
        }
        if per_layer.is_empty() {
            return Err(Error::validation(
                "sparsity report needs at least one layer",
            ));
        }
        let model_sparsity = zeros as f64 / total as f64;
        Ok(SparsityReport {
            per_layer,
            model_zero_count: zeros,
            model_weight_count: total,
            model_sparsity,
            compression_factor: compression_factor(model_sparsity)?,
        })
    }

    pub fn compression_factor_display(&self) -> String {
        format_sig3(self.compression_factor)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per layer plus a final `model` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "layer",
            "weights",
            "zeros",
            "sparsity",
            "compression_factor",
        ])?;
        for l in &self.per_layer {
            let cf = compression_factor(l.sparsity)?;
            w.write_record([
                l.name.clone(),
                l.weight_count.to_string(),
                l.zero_count.to_string(),
                format!("{:.6}", l.sparsity),
                format_sig3(cf),
            ])?;
        }
        w.write_record([
            "model".to_string(),
            self.model_weight_count.to_string(),
            self.model_zero_count.to_string(),
            format!("{:.6}", self.model_sparsity),
            self.compression_factor_display(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Counts exact zeros (either sign) per layer and in total.
pub fn sparsity_report(model: &Model) -> Result<SparsityReport> {
    ensure_non_empty(model)?;
    let counts: Vec<_> = model
        .layers
        .par_iter()
        .map(|l| {
            let zeros = l.data.iter().filter(|&&v| v == 0.0).count() as u64;
            (l.name.clone(), l.data.len() as u64, zeros)
        })
        .collect();
    SparsityReport::from_counts(counts)
}

pub(crate) mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected number or \"inf\", got {s:?}"
            ))),
        }
    }
}
