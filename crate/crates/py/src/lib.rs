//! Python bindings. Arrays cross as nested lists; reports and plans cross as
//! plain dicts built from their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use mixlab::datagen::{self, FragilitySpec, Split};
use mixlab::dropmix::{self, DropMixConfig};
use mixlab::metrics::{self, ClassReport, Condition};
use mixlab::msda::{self, ImageShape, KernelSpec, Method};
use mixlab::runner::{self, RunConfig};
use mixlab::{LabeledBatch, Tensor};

fn err(e: mixlab::Error) -> PyErr {
    match e {
        mixlab::Error::Io(_) | mixlab::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn batch(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> PyResult<LabeledBatch> {
    let x = Tensor::from_rows(&features).map_err(err)?;
    LabeledBatch::from_hard(x, &labels, n_classes).map_err(err)
}

type Mixed<'py> = (Vec<Vec<f64>>, Vec<Vec<f64>>, Bound<'py, PyAny>);

fn mixed<'py>(py: Python<'py>, out: (LabeledBatch, msda::MixPlan)) -> PyResult<Mixed<'py>> {
    Ok((rows(&out.0.features), rows(&out.0.labels), to_py(py, &out.1)?))
}

/// Deterministic random stream addressed by (master_seed, stream_key).
#[pyclass(name = "RngStream")]
struct PyRng(mixlab::RngStream);

#[pymethods]
impl PyRng {
    #[new]
    #[pyo3(signature = (master_seed, stream_key = 0))]
    fn new(master_seed: u64, stream_key: u64) -> Self {
        Self(mixlab::RngStream::new(master_seed, stream_key))
    }

    fn derive(&self, purpose: u64, index: u64) -> Self {
        Self(self.0.derive(purpose, index))
    }

    fn uniform(&mut self) -> f64 {
        self.0.uniform()
    }

    fn normal(&mut self) -> f64 {
        self.0.normal()
    }

    fn below(&mut self, n: usize) -> usize {
        self.0.below(n)
    }

    fn __repr__(&self) -> String {
        format!("RngStream({}, {:#x})", self.0.master_seed(), self.0.stream_key())
    }
}

#[pyfunction]
fn beta_sample(stream: &mut PyRng, alpha: f64) -> PyResult<f64> {
    mixlab::beta_sample(&mut stream.0, alpha).map_err(err)
}

/// Engineered blobs; `spec` holds any FragilitySpec fields to override.
#[pyfunction]
#[pyo3(signature = (n_per_class, split = "train", seed = 0, spec = None))]
fn make_blobs(
    n_per_class: usize,
    split: &str,
    seed: u64,
    spec: Option<&Bound<'_, PyDict>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let split = match split {
        "train" => Split::Train,
        "eval" => Split::Eval,
        other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    };
    let spec: FragilitySpec = match spec {
        Some(d) => {
            let mut base = serde_json::to_value(FragilitySpec::default()).expect("spec serializes");
            let patch: serde_json::Map<String, serde_json::Value> = from_py(d.as_any())?;
            base.as_object_mut().expect("spec is an object").extend(patch);
            serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => FragilitySpec::default(),
    };
    let stream = mixlab::RngStream::new(seed, runner::DATA_STREAM);
    let d = datagen::make_blobs(&spec, n_per_class, split, &stream).map_err(err)?;
    Ok((rows(&d.features), d.labels))
}

#[pyfunction]
fn mixup<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    alpha: f64,
    stream: &PyRng,
) -> PyResult<Mixed<'py>> {
    let b = batch(features, labels, n_classes)?;
    mixed(py, msda::mixup(&b, alpha, &stream.0).map_err(err)?)
}

/// Rows are flattened (channels, height, width) images.
#[pyfunction]
fn cutmix<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    image: (usize, usize, usize),
    alpha: f64,
    stream: &PyRng,
) -> PyResult<Mixed<'py>> {
    let b = batch(features, labels, n_classes)?;
    let img = ImageShape::new(image.0, image.1, image.2);
    mixed(py, msda::cutmix(&b, img, alpha, &stream.0).map_err(err)?)
}

/// Replays a plan dict returned by `mixup`, `cutmix` or `dropmix_step`.
#[pyfunction]
fn apply_plan(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    plan: &Bound<'_, PyAny>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = batch(features, labels, n_classes)?;
    let out = msda::apply_plan(&b, &from_py(plan)?).map_err(err)?;
    Ok((rows(&out.features), rows(&out.labels)))
}

fn method(name: &str) -> PyResult<Method> {
    match name {
        "mixup" => Ok(Method::Mixup),
        "cutmix" => Ok(Method::Cutmix),
        "saliency_grid" => Ok(Method::SaliencyGrid),
        other => Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    }
}

fn dropmix_config(rate: f64, alpha: f64, kernel: &str, image: Option<(usize, usize, usize)>) -> PyResult<DropMixConfig> {
    let mut k = KernelSpec::new(method(kernel)?, alpha);
    k.image = image.map(|(c, h, w)| ImageShape::new(c, h, w));
    Ok(DropMixConfig::new(rate, k))
}

/// Mixes with probability 1 - rate; otherwise the batch passes through.
#[pyfunction]
#[pyo3(signature = (features, labels, n_classes, rate, alpha, stream, kernel = "mixup", image = None))]
#[allow(clippy::too_many_arguments)]
fn dropmix_step<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    rate: f64,
    alpha: f64,
    stream: &PyRng,
    kernel: &str,
    image: Option<(usize, usize, usize)>,
) -> PyResult<Mixed<'py>> {
    let b = batch(features, labels, n_classes)?;
    let cfg = dropmix_config(rate, alpha, kernel, image)?;
    mixed(py, dropmix::dropmix_step(&b, &cfg, &stream.0, None).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (rate, alpha, n_draws, stream, kernel = "mixup", image = None))]
fn effective_lambdas(
    rate: f64,
    alpha: f64,
    n_draws: usize,
    stream: &PyRng,
    kernel: &str,
    image: Option<(usize, usize, usize)>,
) -> PyResult<Vec<f64>> {
    let cfg = dropmix_config(rate, alpha, kernel, image)?;
    dropmix::effective_lambda_distribution(&cfg, n_draws, &stream.0).map_err(err)
}

/// Per-class recall report from predicted probabilities.
#[pyfunction]
#[pyo3(signature = (probs, labels, n_classes, condition = "vanilla", seed = None))]
fn class_report<'py>(
    py: Python<'py>,
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    condition: &str,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let condition: Condition = serde_json::from_value(serde_json::Value::String(condition.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown condition {condition:?}")))?;
    let p = Tensor::from_rows(&probs).map_err(err)?;
    let r = metrics::report_from_probs(&p, &labels, n_classes, condition, seed).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn seed_average<'py>(py: Python<'py>, reports: Vec<Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let reports: Vec<ClassReport> = reports.iter().map(from_py).collect::<PyResult<_>>()?;
    to_py(py, &metrics::seed_average(&reports).map_err(err)?)
}

#[pyfunction]
fn dependency_report<'py>(
    py: Python<'py>,
    vanilla: &Bound<'py, PyAny>,
    treated: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let (v, t): (ClassReport, ClassReport) = (from_py(vanilla)?, from_py(treated)?);
    to_py(py, &metrics::dependency_report(&v, &t).map_err(err)?)
}

fn config(toml: &str, set: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut pairs = Vec::new();
    if let Some(d) = set {
        for (k, v) in d.iter() {
            let value: String = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.extract()?,
            };
            pairs.push(format!("{}={value}", k.str()?));
        }
    }
    let overrides = runner::parse_overrides(&pairs).map_err(err)?;
    RunConfig::from_toml_str(toml, &overrides).map_err(err)
}

/// Trains every seed of a config and writes the run directory.
#[pyfunction]
#[pyo3(signature = (out, toml = "", set = None))]
fn run<'py>(py: Python<'py>, out: PathBuf, toml: &str, set: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = config(toml, set)?;
    cfg.out = Some(out);
    let o = py.detach(|| runner::run(&cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("dir", o.dir.to_string_lossy().into_owned())?;
    d.set_item("average", o.average.as_ref().map(|a| to_py(py, a)).transpose()?)?;
    d.set_item("failed", o.failed)?;
    d.set_item("dataset_hash", o.manifest.dataset_hash)?;
    Ok(d.into_any())
}

#[pyfunction]
fn compare<'py>(py: Python<'py>, vanilla: PathBuf, treated: PathBuf, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let c = py.detach(|| runner::compare(&vanilla, &treated, &out)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("report", to_py(py, &c.report)?)?;
    d.set_item("confidence", to_py(py, &c.confidence)?)?;
    Ok(d.into_any())
}

#[pyfunction]
fn verify_manifest(dir: PathBuf) -> PyResult<usize> {
    runner::verify_manifest(&dir).map_err(err)
}

#[pymodule]
fn mixlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRng>()?;
    m.add_function(wrap_pyfunction!(beta_sample, m)?)?;
    m.add_function(wrap_pyfunction!(make_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(mixup, m)?)?;
    m.add_function(wrap_pyfunction!(cutmix, m)?)?;
    m.add_function(wrap_pyfunction!(apply_plan, m)?)?;
    m.add_function(wrap_pyfunction!(dropmix_step, m)?)?;
    m.add_function(wrap_pyfunction!(effective_lambdas, m)?)?;
    m.add_function(wrap_pyfunction!(class_report, m)?)?;
    m.add_function(wrap_pyfunction!(seed_average, m)?)?;
    m.add_function(wrap_pyfunction!(dependency_report, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(verify_manifest, m)?)?;
    Ok(())
}
