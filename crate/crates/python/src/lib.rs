//! Python bindings for sparsekit.
//!
//! ```python
//! import sparsekit_py as sk
//! model = sk.Model.read("lenet.spwt")
//! plan = sk.plan_relative(model, 0.5)
//! sparse = sk.apply_plan(model, plan)
//! print(sk.sparsity_report(sparse).model_sparsity)
//! ```

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sparsekit::sweep::{parse_grid, FinetuneConfig, SweepMethod};
use sparsekit::{
    ArchManifest, Error, LayerKind, LayerTensor, RelativeDeltas, RelativeMode, TriangularMode,
};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for sparsekit::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_kind(kind: &str) -> PyResult<LayerKind> {
    match kind {
        "conv" => Ok(LayerKind::Conv),
        "fc" | "fully_connected" => Ok(LayerKind::FullyConnected),
        other => Err(PyValueError::new_err(format!(
            "unknown layer kind '{other}' (conv, fc)"
        ))),
    }
}

fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv => "conv",
        LayerKind::FullyConnected => "fc",
    }
}

fn triangular_mode(mode: &str) -> PyResult<TriangularMode> {
    match mode {
        "literal" | "paper" => Ok(TriangularMode::Literal),
        "interpolated" => Ok(TriangularMode::Interpolated),
        other => Err(PyValueError::new_err(format!(
            "unknown triangular mode '{other}'"
        ))),
    }
}

fn relative_mode(mode: &str) -> PyResult<RelativeMode> {
    match mode {
        "percentile" => Ok(RelativeMode::Percentile),
        "span" => Ok(RelativeMode::Span),
        other => Err(PyValueError::new_err(format!(
            "unknown relative mode '{other}'"
        ))),
    }
}

/// Ordered weight layers.
#[pyclass(name = "Model", module = "sparsekit_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: sparsekit::Model,
}

#[pymethods]
impl PyModel {
    /// Build from `(name, kind, shape, data)` tuples; kind is "conv" or "fc".
    #[new]
    fn new(layers: Vec<(String, String, Vec<u32>, Vec<f32>)>) -> PyResult<Self> {
        let layers = layers
            .into_iter()
            .map(|(name, kind, shape, data)| {
                LayerTensor::new(name, parse_kind(&kind)?, shape, data).py_err()
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyModel {
            inner: sparsekit::Model::new(layers).py_err()?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: sparsekit::read_model(path).py_err()?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        sparsekit::write_model(&self.inner, path).py_err()
    }

    #[getter]
    fn layer_names(&self) -> Vec<String> {
        self.inner.layers.iter().map(|l| l.name.clone()).collect()
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    #[getter]
    fn weight_count(&self) -> usize {
        self.inner.weight_count()
    }

    fn layer(&self, name: &str) -> PyResult<(String, Vec<u32>, Vec<f32>)> {
        let l = self.get(name)?;
        Ok((
            kind_name(l.kind).to_string(),
            l.shape.clone(),
            l.data.clone(),
        ))
    }

    /// `(min, max, span, zero_count)` of one layer.
    fn layer_stats(&self, name: &str) -> PyResult<(f64, f64, f64, usize)> {
        let s = sparsekit::layer_stats(self.get(name)?).py_err()?;
        Ok((s.min, s.max, s.span, s.zero_count))
    }

    /// `(lo, hi, counts)`.
    #[pyo3(signature = (name, bins = 64))]
    fn histogram(&self, name: &str, bins: usize) -> PyResult<(f64, f64, Vec<u64>)> {
        let h = sparsekit::weight_histogram(self.get(name)?, bins).py_err()?;
        Ok((h.lo, h.hi, h.counts))
    }

    fn magnitude_percentile(&self, name: &str, delta: f64) -> PyResult<f64> {
        sparsekit::magnitude_percentile(self.get(name)?, delta).py_err()
    }

    /// `(1-based layer index, span)` of the narrowest layer.
    fn min_span(&self) -> PyResult<(usize, f64)> {
        sparsekit::min_span(&self.inner).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.num_layers()
    }

    fn __eq__(&self, other: &PyModel) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(layers={:?}, weights={})",
            self.layer_names(),
            self.inner.weight_count()
        )
    }
}

impl PyModel {
    fn get(&self, name: &str) -> PyResult<&LayerTensor> {
        self.inner
            .layer(name)
            .ok_or_else(|| PyValueError::new_err(format!("no layer named '{name}'")))
    }
}

/// Method parameters plus resolved per-layer thresholds.
#[pyclass(name = "Plan", module = "sparsekit_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPlan {
    inner: sparsekit::SparsifyPlan,
}

#[pymethods]
impl PyPlan {
    #[getter]
    fn method(&self) -> String {
        self.inner.method().to_string()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyPlan {
            inner: sparsekit::SparsifyPlan::from_json(s).py_err()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Plan(method={}, thresholds={:?})",
            self.method(),
            self.inner.thresholds
        )
    }
}

#[pyclass(name = "SparsityReport", module = "sparsekit_py")]
struct PyReport {
    inner: sparsekit::SparsityReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn model_sparsity(&self) -> f64 {
        self.inner.model_sparsity
    }

    #[getter]
    fn compression_factor(&self) -> f64 {
        self.inner.compression_factor
    }

    #[getter]
    fn model_zero_count(&self) -> u64 {
        self.inner.model_zero_count
    }

    #[getter]
    fn model_weight_count(&self) -> u64 {
        self.inner.model_weight_count
    }

    /// `(name, weight_count, zero_count, sparsity)` per layer.
    #[getter]
    fn per_layer(&self) -> Vec<(String, u64, u64, f64)> {
        self.inner
            .per_layer
            .iter()
            .map(|l| (l.name.clone(), l.weight_count, l.zero_count, l.sparsity))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }
}

#[pyclass(name = "Dataset", module = "sparsekit_py")]
struct PyDataset {
    inner: sparsekit::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(
        input_shape: Vec<u32>,
        num_classes: u32,
        inputs: Vec<Vec<f32>>,
        labels: Vec<u16>,
    ) -> PyResult<Self> {
        Ok(PyDataset {
            inner: sparsekit::Dataset::new(input_shape, num_classes, inputs, labels).py_err()?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: sparsekit::read_dataset(path).py_err()?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        sparsekit::write_dataset(&self.inner, path).py_err()
    }

    fn class_frequency(&self, class: u16) -> f64 {
        self.inner.class_frequency(class)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Manifest", module = "sparsekit_py")]
struct PyManifest {
    inner: ArchManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(PyManifest {
            inner: ArchManifest::read(path).py_err()?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyManifest {
            inner: ArchManifest::from_json(s).py_err()?,
        })
    }
}

#[pyfunction]
fn plan_flat(model: &PyModel, delta: f64) -> PyResult<PyPlan> {
    Ok(PyPlan {
        inner: sparsekit::plan_flat(&model.inner, delta).py_err()?,
    })
}

#[pyfunction]
#[pyo3(signature = (model, delta_conv, delta_fc, mode = "literal"))]
fn plan_triangular(
    model: &PyModel,
    delta_conv: f64,
    delta_fc: f64,
    mode: &str,
) -> PyResult<PyPlan> {
    let mode = triangular_mode(mode)?;
    Ok(PyPlan {
        inner: sparsekit::plan_triangular(&model.inner, delta_conv, delta_fc, mode).py_err()?,
    })
}

/// `deltas` is a single float or one float per layer.
#[pyfunction]
#[pyo3(signature = (model, deltas, mode = "percentile"))]
fn plan_relative(model: &PyModel, deltas: &Bound<'_, PyAny>, mode: &str) -> PyResult<PyPlan> {
    let deltas = if let Ok(d) = deltas.extract::<f64>() {
        RelativeDeltas::Uniform(d)
    } else {
        RelativeDeltas::PerLayer(deltas.extract::<Vec<f64>>()?)
    };
    let mode = relative_mode(mode)?;
    Ok(PyPlan {
        inner: sparsekit::plan_relative(&model.inner, deltas, mode).py_err()?,
    })
}

#[pyfunction]
fn apply_plan(model: &PyModel, plan: &PyPlan) -> PyResult<PyModel> {
    Ok(PyModel {
        inner: sparsekit::apply_plan(&model.inner, &plan.inner).py_err()?,
    })
}

#[pyfunction]
fn sparsity_report(model: &PyModel) -> PyResult<PyReport> {
    Ok(PyReport {
        inner: sparsekit::sparsity_report(&model.inner).py_err()?,
    })
}

#[pyfunction]
fn compression_factor(model_sparsity: f64) -> PyResult<f64> {
    sparsekit::compression_factor(model_sparsity).py_err()
}

#[pyfunction]
fn forward(
    model: &PyModel,
    manifest: &PyManifest,
    input: Vec<f32>,
    input_shape: Vec<u32>,
) -> PyResult<Vec<f32>> {
    sparsekit::forward(&model.inner, &manifest.inner, &input, &input_shape).py_err()
}

#[pyfunction]
fn evaluate(model: &PyModel, manifest: &PyManifest, data: &PyDataset) -> PyResult<f64> {
    sparsekit::evaluate(&model.inner, &manifest.inner, &data.inner).py_err()
}

#[pyfunction]
fn normalized_accuracy(accuracy: f64, baseline: f64) -> PyResult<f64> {
    sparsekit::normalized_accuracy(accuracy, baseline).py_err()
}

/// Returns `(points, best)` where each point is
/// `(delta, s_m, accuracy, normalized_accuracy, compression_factor)` and
/// `best` indexes the sparsest point meeting the gate (or is None).
#[pyfunction]
#[pyo3(signature = (model, manifest, data, method, grid = "0:1:0.1", gate = 0.95, mode = None))]
#[allow(clippy::type_complexity)]
fn sweep(
    model: &PyModel,
    manifest: &PyManifest,
    data: &PyDataset,
    method: &str,
    grid: &str,
    gate: f64,
    mode: Option<&str>,
) -> PyResult<(Vec<(f64, f64, f64, f64, f64)>, Option<usize>)> {
    let method = match method {
        "flat" => SweepMethod::Flat,
        "triangular" => SweepMethod::Triangular {
            delta_conv: None,
            delta_fc: None,
            mode: triangular_mode(mode.unwrap_or("literal"))?,
        },
        "relative" => SweepMethod::Relative {
            mode: relative_mode(mode.unwrap_or("percentile"))?,
        },
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    let grid = parse_grid(grid).py_err()?;
    let curve = sparsekit::sweep(
        &model.inner,
        &manifest.inner,
        &data.inner,
        &method,
        &grid,
        gate,
    )
    .py_err()?;
    let points = curve
        .points
        .iter()
        .map(|p| {
            (
                p.delta,
                p.model_sparsity,
                p.accuracy,
                p.normalized_accuracy,
                p.compression_factor,
            )
        })
        .collect();
    Ok((points, curve.best))
}

/// Returns `(per_layer_deltas, model_sparsity, normalized_accuracy, plan)`.
#[pyfunction]
#[pyo3(signature = (model, manifest, data, base = 0.7, step = 0.05, gate = 0.95, cap = 0.95))]
fn finetune(
    model: &PyModel,
    manifest: &PyManifest,
    data: &PyDataset,
    base: f64,
    step: f64,
    gate: f64,
    cap: f64,
) -> PyResult<(Vec<f64>, f64, f64, PyPlan)> {
    let config = FinetuneConfig {
        base_delta: base,
        step,
        gate,
        cap,
    };
    let r =
        sparsekit::finetune_layers(&model.inner, &manifest.inner, &data.inner, &config).py_err()?;
    Ok((
        r.layers.iter().map(|l| l.delta).collect(),
        r.model_sparsity,
        r.normalized_accuracy,
        PyPlan { inner: r.plan },
    ))
}

#[pymodule]
fn sparsekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(plan_flat, m)?)?;
    m.add_function(wrap_pyfunction!(plan_triangular, m)?)?;
    m.add_function(wrap_pyfunction!(plan_relative, m)?)?;
    m.add_function(wrap_pyfunction!(apply_plan, m)?)?;
    m.add_function(wrap_pyfunction!(sparsity_report, m)?)?;
    m.add_function(wrap_pyfunction!(compression_factor, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names() {
        assert_eq!(triangular_mode("paper").unwrap(), TriangularMode::Literal);
        assert_eq!(
            triangular_mode("interpolated").unwrap(),
            TriangularMode::Interpolated
        );
        assert_eq!(relative_mode("span").unwrap(), RelativeMode::Span);
        assert_eq!(parse_kind("fc").unwrap(), LayerKind::FullyConnected);
        assert_eq!(kind_name(LayerKind::Conv), "conv");
    }

    #[test]
    fn errors_map_to_python_exceptions() {
        Python::initialize();
        Python::attach(|py| {
            let io = to_py(Error::Io(std::io::Error::other("x")));
            assert!(io.is_instance_of::<PyIOError>(py));
            let val = to_py(Error::Validation("bad".into()));
            assert!(val.is_instance_of::<PyValueError>(py));
        });
    }
}
