//! Sparsity/accuracy trade-off sweeps and per-layer fine-tuning.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Model;
use crate::dataset::Dataset;
use crate::error::{check_fraction, Error, Result};
use crate::infer::{count_correct, ArchManifest};
use crate::sparsify::{
    apply_plan, compression_factor, format_sig3, plan_relative, sparsity_report, Method,
    MethodParams, RelativeDeltas, RelativeMode, SparsifyPlan, TriangularMode,
};

pub const DEFAULT_GATE: f64 = 0.95;
pub const DEFAULT_STEP: f64 = 0.05;
pub const DEFAULT_CAP: f64 = 0.95;

/// Slack on the gate comparison so a ratio like `76/80` is not rejected
/// for rounding below `0.95`.
const GATE_EPS: f64 = 1e-12;

fn passes(normalized: f64, gate: f64) -> bool {
    normalized + GATE_EPS >= gate
}

/// Which method a sweep varies and how each grid value maps onto it.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepMethod {
    Flat,
    /// Both deltas follow the grid value unless pinned.
    Triangular {
        delta_conv: Option<f64>,
        delta_fc: Option<f64>,
        mode: TriangularMode,
    },
    Relative {
        mode: RelativeMode,
    },
}

impl SweepMethod {
    pub fn method(&self) -> Method {
        match self {
            SweepMethod::Flat => Method::Flat,
            SweepMethod::Triangular { .. } => Method::Triangular,
            SweepMethod::Relative { .. } => Method::Relative,
        }
    }

    pub fn params(&self, delta: f64) -> MethodParams {
        match self {
            SweepMethod::Flat => MethodParams::Flat { delta },
            SweepMethod::Triangular {
                delta_conv,
                delta_fc,
                mode,
            } => MethodParams::Triangular {
                delta_conv: delta_conv.unwrap_or(delta),
                delta_fc: delta_fc.unwrap_or(delta),
                mode: *mode,
            },
            SweepMethod::Relative { mode } => MethodParams::Relative {
                deltas: RelativeDeltas::Uniform(delta),
                mode: *mode,
            },
        }
    }
}

/// Dense model, architecture and data, with the baseline accuracy measured once.
pub struct Evaluator<'a> {
    pub model: &'a Model,
    pub manifest: &'a ArchManifest,
    pub data: &'a Dataset,
    baseline_correct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model_sparsity: f64,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a Model, manifest: &'a ArchManifest, data: &'a Dataset) -> Result<Self> {
        let baseline_correct = count_correct(model, manifest, data)?;
        if baseline_correct == 0 {
            return Err(Error::validation(
                "baseline accuracy is 0; normalized accuracy is undefined",
            ));
        }
        Ok(Evaluator {
            model,
            manifest,
            data,
            baseline_correct,
        })
    }

    pub fn baseline_accuracy(&self) -> f64 {
        self.baseline_correct as f64 / self.data.len() as f64
    }

    /// Sparsifies in memory with `plan` and evaluates the result.
    pub fn evaluate_plan(&self, plan: &SparsifyPlan) -> Result<Evaluation> {
        let sparse = apply_plan(self.model, plan)?;
        let report = sparsity_report(&sparse)?;
        let correct = count_correct(&sparse, self.manifest, self.data)?;
        Ok(Evaluation {
            model_sparsity: report.model_sparsity,
            accuracy: correct as f64 / self.data.len() as f64,
            normalized_accuracy: correct as f64 / self.baseline_correct as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub delta: f64,
    pub plan: SparsifyPlan,
    pub model_sparsity: f64,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
    #[serde(with = "crate::sparsify::finite_or_inf")]
    pub compression_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub method: Method,
    pub gate: f64,
    pub baseline_accuracy: f64,
    pub points: Vec<TradeoffPoint>,
    /// Index of the sparsest point passing the gate; `None` if none does.
    pub best: Option<usize>,
}

impl TradeoffCurve {
    pub fn best_point(&self) -> Option<&TradeoffPoint> {
        self.best.map(|i| &self.points[i])
    }

    /// Writes `method,delta,s_m,accuracy,normalized_accuracy,compression_factor`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "delta",
            "s_m",
            "accuracy",
            "normalized_accuracy",
            "compression_factor",
        ])?;
        for p in &self.points {
            w.write_record([
                self.method.to_string(),
                p.delta.to_string(),
                p.model_sparsity.to_string(),
                p.accuracy.to_string(),
                p.normalized_accuracy.to_string(),
                format_sig3(p.compression_factor),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn best_index(points: impl IntoIterator<Item = (usize, f64, f64)>, gate: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s_m, norm) in points {
        if passes(norm, gate) && best.is_none_or(|(_, s)| s_m > s) {
            best = Some((i, s_m));
        }
    }
    best.map(|(i, _)| i)
}

/// Evaluates one plan per grid value and picks the sparsest point with
/// normalized accuracy at or above `gate`.
pub fn sweep(
    model: &Model,
    manifest: &ArchManifest,
    data: &Dataset,
    method: &SweepMethod,
    grid: &[f64],
    gate: f64,
) -> Result<TradeoffCurve> {
    if grid.is_empty() {
        return Err(Error::validation("sweep grid is empty"));
    }
    for &d in grid {
        check_fraction("grid value", d)?;
    }
    if !(gate.is_finite() && gate >= 0.0) {
        return Err(Error::validation(format!(
            "gate must be non-negative, got {gate}"
        )));
    }
    let eval = Evaluator::new(model, manifest, data)?;
    let points = grid
        .par_iter()
        .map(|&delta| {
            let plan = method.params(delta).plan(model)?;
            let e = eval.evaluate_plan(&plan)?;
            Ok(TradeoffPoint {
                delta,
                plan,
                model_sparsity: e.model_sparsity,
                accuracy: e.accuracy,
                normalized_accuracy: e.normalized_accuracy,
                compression_factor: compression_factor(e.model_sparsity)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = best_index(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.model_sparsity, p.normalized_accuracy)),
        gate,
    );
    Ok(TradeoffCurve {
        method: method.method(),
        gate,
        baseline_accuracy: eval.baseline_accuracy(),
        points,
        best,
    })
}

/// Parses `start:end:step` into an inclusive grid. The end point is kept when
/// it lies within 1e-9 of a step multiple.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::validation(format!("grid '{spec}' is not start:end:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(start.is_finite() && end.is_finite() && step.is_finite()) || step <= 0.0 || end < start {
        return Err(Error::validation(format!(
            "grid '{spec}' needs finite start <= end and step > 0"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|k| {
            let v = start + k as f64 * step;
            // snap accumulated float error to 1e-9
            ((v * 1e9).round() / 1e9).min(end)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub base_delta: f64,
    pub step: f64,
    pub gate: f64,
    /// Largest candidate delta tried for any layer.
    pub cap: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            base_delta: 0.7,
            step: DEFAULT_STEP,
            gate: DEFAULT_GATE,
            cap: DEFAULT_CAP,
        }
    }
}

impl FinetuneConfig {
    fn validate(&self) -> Result<()> {
        check_fraction("base delta", self.base_delta)?;
        check_fraction("cap", self.cap)?;
        if !(self.step > 0.0 && self.step < 1.0) {
            return Err(Error::validation(format!(
                "step must be in (0, 1), got {}",
                self.step
            )));
        }
        if !(self.gate.is_finite() && self.gate >= 0.0) {
            return Err(Error::validation(format!(
                "gate must be non-negative, got {}",
                self.gate
            )));
        }
        Ok(())
    }

    /// `0, step, 2*step, ... <= cap`, plus the base delta itself so the
    /// starting configuration is always reachable.
    pub fn candidates(&self) -> Vec<f64> {
        let n = ((self.cap / self.step) + 1e-9).floor() as usize;
        let mut c: Vec<f64> = (0..=n)
            .map(|k| ((k as f64 * self.step) * 1e9).round() / 1e9)
            .collect();
        if !c.iter().any(|&v| (v - self.base_delta).abs() < 1e-12) {
            c.push(self.base_delta);
            c.sort_by(f64::total_cmp);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLayer {
    pub name: String,
    pub params: u64,
    pub delta: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneResult {
    pub layers: Vec<FinetuneLayer>,
    pub plan: SparsifyPlan,
    pub model_sparsity: f64,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
    /// Model sparsity with every layer at the base delta.
    pub baseline_sparsity: f64,
    pub baseline_normalized_accuracy: f64,
}

impl FinetuneResult {
    /// Per-layer table: `layer,params,delta,sparsified_pct`, closed by a
    /// `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "params", "delta", "sparsified_pct"])?;
        for l in &self.layers {
            w.write_record([
                l.name.clone(),
                l.params.to_string(),
                l.delta.to_string(),
                format!("{:.1}", l.sparsity * 100.0),
            ])?;
        }
        let total: u64 = self.layers.iter().map(|l| l.params).sum();
        w.write_record([
            "total".to_string(),
            total.to_string(),
            String::new(),
            format!("{:.1}", self.model_sparsity * 100.0),
        ])?;
        w.flush()?;
        Ok(())
    }
}

fn relative_plan(model: &Model, deltas: &[f64]) -> Result<SparsifyPlan> {
    plan_relative(model, deltas.to_vec(), RelativeMode::Percentile)
}

/// Single-pass per-layer search over relative-percentile deltas.
///
/// Every layer starts at `base_delta`. Layers are visited largest first
/// (ties by position); each one gets the largest candidate delta for which
/// the whole model still meets the gate, or 0 when no candidate does.
pub fn finetune_layers(
    model: &Model,
    manifest: &ArchManifest,
    data: &Dataset,
    config: &FinetuneConfig,
) -> Result<FinetuneResult> {
    config.validate()?;
    let eval = Evaluator::new(model, manifest, data)?;
    let n = model.num_layers();
    let mut deltas = vec![config.base_delta; n];
    let base = eval.evaluate_plan(&relative_plan(model, &deltas)?)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(model.layers[i].len()), i));
    let candidates = config.candidates();

    for &layer in &order {
        let feasible = candidates
            .par_iter()
            .map(|&d| {
                let mut trial = deltas.clone();
                trial[layer] = d;
                let e = eval.evaluate_plan(&relative_plan(model, &trial)?)?;
                Ok(passes(e.normalized_accuracy, config.gate).then_some(d))
            })
            .collect::<Result<Vec<_>>>()?;
        deltas[layer] = feasible
            .into_iter()
            .flatten()
            .fold(None, |acc: Option<f64>, d| {
                Some(acc.map_or(d, |a| a.max(d)))
            })
            .unwrap_or(0.0);
    }

    let plan = relative_plan(model, &deltas)?;
    let sparse = apply_plan(model, &plan)?;
    let report = sparsity_report(&sparse)?;
    let final_eval = eval.evaluate_plan(&plan)?;
    let layers = model
        .layers
        .iter()
        .zip(&report.per_layer)
        .zip(&deltas)
        .map(|((l, r), &delta)| FinetuneLayer {
            name: l.name.clone(),
            params: l.len() as u64,
            delta,
            sparsity: r.sparsity,
        })
        .collect();
    Ok(FinetuneResult {
        layers,
        plan,
        model_sparsity: report.model_sparsity,
        accuracy: final_eval.accuracy,
        normalized_accuracy: final_eval.normalized_accuracy,
        baseline_sparsity: base.model_sparsity,
        baseline_normalized_accuracy: base.normalized_accuracy,
    })
}
