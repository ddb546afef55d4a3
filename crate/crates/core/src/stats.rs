//! Per-layer weight statistics feeding the threshold rules.

use serde::{Deserialize, Serialize};

use crate::container::{LayerTensor, Model};
use crate::error::{check_fraction, Error, Result};

pub const DEFAULT_BINS: usize = 64;

/// Threshold returned by [`magnitude_percentile`] when no weight should be
/// zeroed. Any negative threshold leaves every weight untouched.
pub const NO_OP_THRESHOLD: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    /// `max - min` over signed weights.
    pub span: f64,
    pub zero_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_count: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count as f64
    }

    /// Index of the bin a value falls in. Values at `hi` land in the last bin;
    /// a zero-width range maps everything to bin 0.
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.lo, self.hi, self.bin_count)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let span = hi - lo;
    if span <= 0.0 {
        return 0;
    }
    let pos = ((v - lo) / span * bins as f64).floor();
    if pos <= 0.0 {
        0
    } else {
        (pos as usize).min(bins - 1)
    }
}

fn non_empty(layer: &LayerTensor) -> Result<()> {
    if layer.data.is_empty() {
        return Err(Error::validation(format!(
            "layer '{}' is empty",
            layer.name
        )));
    }
    Ok(())
}

pub fn layer_stats(layer: &LayerTensor) -> Result<LayerStats> {
    non_empty(layer)?;
    let (min, max) = layer
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (min, max) = (f64::from(min), f64::from(max));
    Ok(LayerStats {
        name: layer.name.clone(),
        count: layer.data.len(),
        min,
        max,
        span: max - min,
        zero_count: layer.data.iter().filter(|&&v| v == 0.0).count(),
    })
}

/// Smallest per-layer span and the 1-based index of the layer achieving it.
/// Ties go to the lowest index.
pub fn min_span(model: &Model) -> Result<(usize, f64)> {
    if model.layers.is_empty() {
        return Err(Error::validation("model has no layers"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, layer) in model.layers.iter().enumerate() {
        let span = layer_stats(layer)?.span;
        if best.is_none_or(|(_, s)| span < s) {
            best = Some((i + 1, span));
        }
    }
    Ok(best.expect("model is non-empty"))
}

pub fn weight_histogram(layer: &LayerTensor, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    let stats = layer_stats(layer)?;
    let mut counts = vec![0u64; bins];
    for &v in &layer.data {
        counts[bin_index(f64::from(v), stats.min, stats.max, bins)] += 1;
    }
    Ok(Histogram {
        bin_count: bins,
        lo: stats.min,
        hi: stats.max,
        counts,
    })
}

/// Nearest rank `floor(delta * n)`, clamped to `n`. A 1e-9 slack absorbs
/// products like `0.29 * 100 = 28.999999999999996`.
pub fn percentile_rank(delta: f64, n: usize) -> usize {
    ((delta * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Nearest-rank percentile of the weight magnitudes.
///
/// With `|w|` sorted ascending as `a_1..a_n` and `k = floor(delta * n)`, this
/// returns `a_k`, or [`NO_OP_THRESHOLD`] when `k = 0`. Thresholding at `a_k`
/// zeroes at least `k` weights, exactly `k` when magnitudes are distinct.
pub fn magnitude_percentile(layer: &LayerTensor, delta: f64) -> Result<f64> {
    check_fraction("delta", delta)?;
    non_empty(layer)?;
    let k = percentile_rank(delta, layer.data.len());
    if k == 0 {
        return Ok(NO_OP_THRESHOLD);
    }
    let mut mags: Vec<f32> = layer.data.iter().map(|v| v.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, f32::total_cmp);
    Ok(f64::from(*kth))
}
