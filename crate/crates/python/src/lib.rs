//! Python module `hypermml`: datasets, training, evaluation and the
//! numerical building blocks, with plain lists and dicts at the boundary.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hypermml::data::{self, Dataset as CoreDataset};
use hypermml::report::{self, EvalReport};
use hypermml::spectral::{self, BandEdges};
use hypermml::trainer::{self, Checkpoint as CoreCheckpoint, EvalTarget, TrainConfig};
use hypermml::{Error, Tensor};
use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => PyFileNotFoundError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        Error::Lookup { .. } => PyKeyError::new_err(msg),
        Error::Divergence { .. } | Error::Numeric(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Segmented multimodal recordings with their manifest.
#[pyclass(module = "hypermml")]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        data::load_manifest(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Segments an EAV-layout trial export (`trials.json` plus blobs).
    #[staticmethod]
    #[pyo3(signature = (path, window_seconds = 5.0))]
    fn from_trials(path: PathBuf, window_seconds: f64) -> PyResult<Self> {
        let export = data::load_trials(&path).map_err(to_py)?;
        data::eav_from_trials(&export.trials, export.sampling_rate_hz, window_seconds, &export.class_names)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_manifest(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let m = &self.inner.manifest;
        format!(
            "Dataset(name={:?}, segments={}, subjects={}, channels={}, window_len={})",
            m.name,
            self.inner.len(),
            m.subjects.len(),
            m.channels,
            m.window_len
        )
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.manifest.name.clone()
    }

    #[getter]
    fn subjects(&self) -> Vec<String> {
        self.inner.manifest.subjects.clone()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.manifest.class_names.clone()
    }

    #[getter]
    fn sampling_rate_hz(&self) -> f64 {
        self.inner.manifest.sampling_rate_hz
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// One segment as a dict; `eeg` is a list of channels.
    fn segment<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.segments.get(index).ok_or_else(|| {
            pyo3::exceptions::PyIndexError::new_err(format!("segment {index} of {}", self.inner.len()))
        })?;
        let d = PyDict::new(py);
        d.set_item("subject_id", &s.subject_id)?;
        d.set_item("dialogue_id", &s.dialogue_id)?;
        d.set_item("position", s.position)?;
        d.set_item("label", s.label.class_index)?;
        let l = s.eeg.shape()[1];
        d.set_item("eeg", s.eeg.data().chunks(l).map(<[f64]>::to_vec).collect::<Vec<_>>())?;
        d.set_item("audio", s.audio.clone())?;
        d.set_item("video", s.video.clone())?;
        Ok(d)
    }
}

/// Class-conditioned synthetic dataset. Keyword names follow the JSON
/// generator config (`num_subjects`, `class_separation`, ...).
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn make_synthetic(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Dataset> {
    let cfg: data::SynthConfig = from_kwargs(kwargs)?;
    data::make_synthetic_dataset(&cfg).map(|inner| Dataset { inner }).map_err(to_py)
}

/// Synthetic trials in the EAV layout, segmented into windows.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn eav_stub(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Dataset> {
    let cfg: data::EavStubConfig = from_kwargs(kwargs)?;
    data::eav_stub(&cfg).map(|inner| Dataset { inner }).map_err(to_py)
}

/// Builds a serde struct from keyword arguments via the `json` module, so
/// field names and defaults match the JSON config files exactly.
fn from_kwargs<T: serde::de::DeserializeOwned>(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let text = match kwargs {
        Some(k) => k.py().import("json")?.call_method1("dumps", (k,))?.extract::<String>()?,
        None => "{}".to_string(),
    };
    serde_json::from_str(&text).map_err(json_err)
}

/// A trained model with its optimizer state, history and split.
#[pyclass(module = "hypermml")]
pub struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreCheckpoint::load(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// The training configuration as a JSON string.
    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(json_err)
    }

    /// Per-epoch records as dicts.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .history
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("train_loss", r.train_loss)?;
                d.set_item("train_accuracy", r.train_accuracy)?;
                d.set_item("eval_accuracy", r.eval_accuracy)?;
                d.set_item("eval_f1", r.eval_f1)?;
                Ok(d)
            })
            .collect()
    }

    /// `split` is `test`, `train`, `all` or a split spec such as `subject:s01:0.3`.
    #[pyo3(signature = (dataset, split = "test"))]
    fn evaluate(&self, dataset: &Dataset, split: &str) -> PyResult<Report> {
        let target: EvalTarget = split.parse().map_err(to_py)?;
        trainer::evaluate(&self.inner, &dataset.inner, &target).map(|inner| Report { inner }).map_err(to_py)
    }
}

/// Trains on `dataset`. `config` is a JSON string; keyword arguments override it.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, **overrides))]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    config: Option<&str>,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<Checkpoint> {
    let mut value: serde_json::Value = serde_json::from_str(config.unwrap_or("{}")).map_err(json_err)?;
    if let Some(o) = overrides {
        let extra: serde_json::Value =
            serde_json::from_str(&py.import("json")?.call_method1("dumps", (o,))?.extract::<String>()?)
                .map_err(json_err)?;
        match (value.as_object_mut(), extra) {
            (Some(base), serde_json::Value::Object(extra)) => base.extend(extra),
            _ => return Err(PyValueError::new_err("config must be a JSON object")),
        }
    }
    let cfg: TrainConfig = serde_json::from_value(value).map_err(json_err)?;
    let ds = dataset.inner.clone();
    py.detach(|| trainer::train(&cfg, &ds)).map(|inner| Checkpoint { inner }).map_err(to_py)
}

/// Per-subject and overall metrics of one evaluation.
#[pyclass(module = "hypermml")]
pub struct Report {
    inner: EvalReport,
}

#[pymethods]
impl Report {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| Self { inner }).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(json_err)
    }

    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.overall.accuracy
    }

    #[getter]
    fn weighted_f1(&self) -> f64 {
        self.inner.overall.weighted_f1
    }

    #[getter]
    fn macro_f1(&self) -> f64 {
        self.inner.overall.macro_f1
    }

    #[getter]
    fn confusion(&self) -> Vec<Vec<usize>> {
        self.inner.overall.confusion.clone()
    }

    /// `(subject, count, accuracy, f1)` rows.
    fn per_subject(&self) -> Vec<(String, usize, f64, f64)> {
        self.inner.per_subject.iter().map(|r| (r.subject.clone(), r.count, r.accuracy, r.f1)).collect()
    }

    /// The `Subject | Acc | F1` text table.
    fn table(&self) -> String {
        report::subject_table(&self.inner.per_subject)
    }

    fn confusion_svg(&self) -> PyResult<String> {
        report::confusion_svg(&self.inner).map_err(to_py)
    }
}

/// Per-channel DE and PSD of one band.
type DePsd = (Vec<f64>, Vec<f64>);

/// Per-band DE and PSD of a `C×L` signal, keyed by band name.
#[pyfunction]
#[pyo3(signature = (signal, rate_hz, edges = None))]
fn band_features(
    signal: Vec<Vec<f64>>,
    rate_hz: f64,
    edges: Option<[(f64, f64); 5]>,
) -> PyResult<BTreeMap<String, DePsd>> {
    let c = signal.len();
    let l = signal.first().map_or(0, Vec::len);
    if signal.iter().any(|r| r.len() != l) {
        return Err(PyValueError::new_err("channels must have equal length"));
    }
    let t = Tensor::new(vec![c, l], signal.into_iter().flatten().collect()).map_err(to_py)?;
    let edges = edges.map(BandEdges).unwrap_or_default();
    let feats = spectral::band_features(&t, rate_hz, &edges).map_err(to_py)?;
    Ok(feats.into_iter().map(|f| (f.band.name().to_string(), (f.de, f.psd))).collect())
}

/// `½·ln(2πe·σ²)` in nats.
#[pyfunction]
fn differential_entropy(variance: f64) -> f64 {
    spectral::de_from_variance(variance)
}

/// Member node lists of each hyperedge: `N` intra edges, then one inter edge per modality.
#[pyfunction]
#[pyo3(signature = (segments, modalities = 3))]
fn hyperedges(segments: usize, modalities: usize) -> PyResult<Vec<Vec<usize>>> {
    let s = hypermml::hypergraph::build_hypergraph(segments, modalities).map_err(to_py)?;
    Ok((0..s.num_edges()).map(|e| s.members(e)).collect())
}

/// Accuracy, weighted and macro F1 of integer predictions.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    predicted: Vec<usize>,
    truth: Vec<usize>,
    num_classes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = hypermml::classifier::metrics(&predicted, &truth, num_classes).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("weighted_f1", m.weighted_f1)?;
    d.set_item("macro_f1", m.macro_f1)?;
    d.set_item("confusion", m.confusion)?;
    Ok(d)
}

/// `(group, relative_error, tolerance)`.
type GroupRow = (String, f64, f64);

/// Finite-difference check of one module; returns `(passed, [(group, rel_error, tolerance)])`.
#[pyfunction]
#[pyo3(signature = (module, seed = 42))]
fn gradient_check(py: Python<'_>, module: &str, seed: u64) -> PyResult<(bool, Vec<GroupRow>)> {
    let r = py.detach(|| trainer::gradient_check(module, seed)).map_err(to_py)?;
    let groups = r.groups.iter().map(|g| (g.name.clone(), g.relative_error, g.tolerance)).collect();
    Ok((r.passed(), groups))
}

#[pymodule]
#[pyo3(name = "hypermml")]
pub fn hypermml_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(eav_stub, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(band_features, m)?)?;
    m.add_function(wrap_pyfunction!(differential_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(hyperedges, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
