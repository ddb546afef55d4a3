//! Retraining-free sparsification of CNN weights by magnitude thresholds.
//!
//! A [`Model`] is an ordered list of weight layers. A [`SparsifyPlan`] holds
//! one threshold per layer, produced by the flat, triangular or relative
//! method, and [`apply_plan`] zeroes every weight whose magnitude is at or
//! below its layer's threshold. The [`infer`] and [`sweep`] modules measure
//! what that costs in accuracy.

pub mod container;
pub mod dataset;
mod error;
pub mod fixtures;
pub mod infer;
pub mod sparsify;
pub mod stats;
pub mod sweep;

pub use container::{read_model, write_model, LayerKind, LayerTensor, Model};
pub use dataset::{read_dataset, write_dataset, Dataset};
pub use error::{Error, Result};
pub use infer::{evaluate, forward, normalized_accuracy, ArchManifest, LayerSpec, Padding};
pub use sparsify::{
    apply_plan, apply_plan_in_place, compression_factor, plan_flat, plan_relative, plan_triangular,
    sparsity_report, Method, MethodParams, RelativeDeltas, RelativeMode, SparsifyPlan,
    SparsityReport, TriangularMode,
};
pub use stats::{
    layer_stats, magnitude_percentile, min_span, weight_histogram, Histogram, LayerStats,
};
pub use sweep::{
    finetune_layers, sweep, FinetuneConfig, FinetuneResult, SweepMethod, TradeoffCurve,
};
