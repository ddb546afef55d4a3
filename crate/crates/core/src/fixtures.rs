//! Small hand-built models with known behavior, used by tests and examples.

use std::path::PathBuf;

use crate::container::{LayerKind, LayerTensor, Model};
use crate::dataset::Dataset;
use crate::infer::{ArchManifest, LayerSpec};

/// Two-class problem in the plane: class 0 iff `x0 > x1`, with a margin of
/// at least 0.5 on every sample.
///
/// The model is `dense(4x2) -> relu -> dense(2x4)`. Hidden units 0 and 1
/// compute `relu(x0 - x1)` and `relu(x1 - x0)`; units 2 and 3 are small
/// distractors whose contribution to either score is below 0.02, so the
/// dense model classifies every sample correctly. 60% of samples are class 0.
pub fn separable() -> (Model, ArchManifest, Dataset) {
    let hidden = LayerTensor::new(
        "hidden",
        LayerKind::FullyConnected,
        vec![4, 2],
        vec![1.0, -1.0, -1.0, 1.0, 0.01, 0.005, -0.004, 0.008],
    )
    .expect("valid layer");
    let out = LayerTensor::new(
        "out",
        LayerKind::FullyConnected,
        vec![2, 4],
        vec![1.0, 0.0, 0.006, -0.003, 0.0, 1.0, -0.002, 0.007],
    )
    .expect("valid layer");
    let model = Model::new(vec![hidden, out]).expect("valid model");
    let manifest = ArchManifest {
        layers: vec![
            LayerSpec::Dense {
                weights: "hidden".into(),
                bias: None,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                weights: "out".into(),
                bias: None,
            },
        ],
    };

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..100u32 {
        let t = i as f32 / 100.0;
        let base = 0.25 + 0.5 * t;
        let gap = 0.5 + 0.5 * ((i * 7 % 10) as f32 / 10.0);
        if i < 60 {
            inputs.push(vec![base + gap, base]);
            labels.push(0);
        } else {
            inputs.push(vec![base, base + gap]);
            labels.push(1);
        }
    }
    let data = Dataset::new(vec![2], 2, inputs, labels).expect("valid dataset");
    (model, manifest, data)
}

/// Directory holding the committed fixture files.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Paths of the committed LeNet-style fixture: weights, manifest, dataset.
pub fn lenet_paths() -> (PathBuf, PathBuf, PathBuf) {
    let dir = fixture_dir();
    (
        dir.join("lenet.spwt"),
        dir.join("lenet.arch.json"),
        dir.join("lenet.spds"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::evaluate;

    #[test]
    fn separable_is_perfect() {
        let (m, man, ds) = separable();
        assert_eq!(evaluate(&m, &man, &ds).unwrap(), 1.0);
        assert!((ds.class_frequency(0) - 0.6).abs() < 1e-12);
    }
}
