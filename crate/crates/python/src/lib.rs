//! Python bindings for the `l2g` engine.
//!
//! Datasets, checkpoints and training are exposed as plain classes and
//! functions; tensors cross the boundary as nested lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use l2g::autodiff::Tensor;
use l2g::config::parse_trainer;
use l2g::eval::{evaluate_runs, Learned, Protocol};
use l2g::models::{embed_rows, predict, Model};
use l2g::rng::Rng;
use l2g::tasks::{gen_synthetic, sample_episode, split_classes, ClassData, GeneratorKind, SplitFractions, SyntheticSpec};
use l2g::training::{train as train_run, TrainState};
use l2g::viz::{convergence_svg_from_csv, Series};
use l2g::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Malformed { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for l2g::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Labeled feature vectors grouped by class.
#[pyclass(frozen, name = "Dataset", module = "l2g")]
pub struct PyDataset {
    inner: l2g::tasks::Dataset,
}

#[pymethods]
impl PyDataset {
    /// `instances[i]` holds the feature rows of class `labels[i]`.
    #[new]
    fn new(labels: Vec<String>, instances: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        if labels.len() != instances.len() {
            return Err(PyValueError::new_err(format!("{} labels for {} classes", labels.len(), instances.len())));
        }
        let dim = instances.first().and_then(|c| c.first()).map_or(0, Vec::len);
        let classes = labels.into_iter().zip(instances).map(|(label, instances)| ClassData { label, instances }).collect();
        Ok(Self { inner: l2g::tasks::Dataset::new(dim, classes).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: l2g::tasks::Dataset::load(path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().map(str::to_string).collect()
    }

    fn instances(&self, class_index: usize) -> PyResult<Vec<Vec<f64>>> {
        if class_index >= self.inner.num_classes() {
            return Err(PyValueError::new_err(format!("class index {class_index} out of range")));
        }
        Ok(self.inner.class(class_index).instances.clone())
    }

    fn subset(&self, class_indices: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.subset(&class_indices).py()? })
    }

    /// Class-disjoint `(train, val, test)` partition.
    #[pyo3(signature = (train = 0.64, val = 0.16, test = 0.20, seed = 0))]
    fn split(&self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = split_classes(&self.inner, SplitFractions { train, val, test }, seed).py()?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Self { inner: l2g::tasks::Dataset::from_bytes(&data).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.num_instances()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(classes={}, instances={}, feature_dim={})",
            self.inner.num_classes(),
            self.inner.num_instances(),
            self.inner.feature_dim()
        )
    }
}

/// Trained parameters plus optimizer state.
#[pyclass(frozen, name = "Checkpoint", module = "l2g")]
pub struct PyCheckpoint {
    state: TrainState,
    model: Model,
}

impl PyCheckpoint {
    fn wrap(state: TrainState) -> PyResult<Self> {
        let model = Model::from_parameters(&state.params).py()?;
        Ok(Self { state, model })
    }
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::wrap(TrainState::load(path).py()?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save(path).py()
    }

    #[getter]
    fn episode(&self) -> u64 {
        self.state.episode
    }

    #[getter]
    fn head(&self) -> &'static str {
        self.model.head.kind().as_str()
    }

    #[getter]
    fn parameter_names(&self) -> Vec<String> {
        self.state.params.names().cloned().collect()
    }

    /// `(shape, flat row-major values)` of one parameter.
    fn parameter(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self.state.params.require(name).py()?;
        Ok((t.shape().to_vec(), t.to_vec()))
    }

    fn embed(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = Tensor::from_rows(&rows).py()?;
        let e = embed_rows(&self.model, &self.state.params, &x).py()?;
        Ok(e.rows().map(<[f64]>::to_vec).collect())
    }

    /// Samples one episode and returns `(predictions, true labels)`.
    #[pyo3(signature = (dataset, way = 5, shot = 1, queries = 15, seed = 0))]
    fn predict_episode(
        &self,
        dataset: &PyDataset,
        way: usize,
        shot: usize,
        queries: usize,
        seed: u64,
    ) -> PyResult<(Vec<usize>, Vec<usize>)> {
        let ep = sample_episode(&dataset.inner, way, shot, queries, &mut Rng::new(seed)).py()?;
        Ok((predict(&self.model, &self.state.params, &ep).py()?, ep.query_labels()))
    }

    /// Mean accuracy, 95% half-width and per-run accuracies.
    #[pyo3(signature = (dataset, way = 5, shot = 1, queries = 15, episodes = 600, runs = 5, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        py: Python<'_>,
        dataset: &PyDataset,
        way: usize,
        shot: usize,
        queries: usize,
        episodes: usize,
        runs: usize,
        seed: u64,
    ) -> PyResult<(f64, f64, Vec<f64>)> {
        let protocol = Protocol { way, shot, queries, episodes };
        let classifier = Learned { model: &self.model, params: &self.state.params };
        let ds = &dataset.inner;
        let r = py.detach(|| evaluate_runs(&classifier, ds, protocol, runs, seed)).py()?;
        Ok((r.mean, r.ci_half_width, r.run_accuracies))
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(head={}, episode={}, parameters={})",
            self.model.head.kind().as_str(),
            self.state.episode,
            self.state.params.numel()
        )
    }
}

/// Generates a synthetic dataset.
#[pyfunction]
#[pyo3(signature = (
    kind = "gaussian_clusters", num_classes = 60, instances_per_class = 40, latent_dim = 8,
    feature_dim = 16, class_separation = 6.0, noise_std = 1.0, mixing_seed = 7, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    kind: &str,
    num_classes: usize,
    instances_per_class: usize,
    latent_dim: usize,
    feature_dim: usize,
    class_separation: f64,
    noise_std: f64,
    mixing_seed: u64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = SyntheticSpec {
        kind: kind.parse::<GeneratorKind>().py()?,
        num_classes,
        instances_per_class,
        latent_dim,
        feature_dim,
        class_separation,
        noise_std,
        mixing_seed,
    };
    Ok(PyDataset { inner: gen_synthetic(&spec, &mut Rng::new(seed)).py()? })
}

/// Trains from `key = value` settings and returns `(checkpoint, log_csv)`.
///
/// With `run_dir`, log.csv and checkpoints are also written there.
#[pyfunction]
#[pyo3(signature = (train, val = None, config = "", run_dir = None))]
fn train(
    py: Python<'_>,
    train: &PyDataset,
    val: Option<&PyDataset>,
    config: &str,
    run_dir: Option<PathBuf>,
) -> PyResult<(PyCheckpoint, String)> {
    let cfg = parse_trainer(config).py()?;
    if let Some(d) = &run_dir {
        std::fs::create_dir_all(d).map_err(|e| PyIOError::new_err(format!("{}: {e}", d.display())))?;
    }
    let (train_ds, val_ds) = (&train.inner, val.map(|v| &v.inner));
    let (state, log) = py.detach(|| train_run(&cfg, train_ds, val_ds, run_dir.as_deref())).py()?;
    Ok((PyCheckpoint::wrap(state)?, log.to_csv()))
}

/// Runs the gradient self-checks; returns `(passed, [(name, error, tolerance, passed)])`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<(bool, Vec<(String, f64, f64, bool)>)> {
    let opts = l2g::gradcheck::Options { flip_inner_sign: false, seed };
    let report = py.detach(|| l2g::gradcheck::run(opts)).py()?;
    let checks = report.checks.iter().map(|c| (c.name.clone(), c.error, c.tolerance, c.passed)).collect();
    Ok((report.passed(), checks))
}

/// `(mean, half-width)` of a 95% normal-approximation interval.
#[pyfunction]
fn confidence_interval(values: Vec<f64>) -> PyResult<(f64, f64)> {
    l2g::eval::confidence_interval(&values).py()
}

/// SVG line chart of the named series of a training log.
#[pyfunction]
#[pyo3(signature = (log_csv, series = vec!["meta_loss".to_string()]))]
fn convergence_svg(log_csv: &str, series: Vec<String>) -> PyResult<String> {
    let series = series.iter().map(|s| s.parse::<Series>()).collect::<l2g::Result<Vec<_>>>().py()?;
    convergence_svg_from_csv(log_csv, &series).py()
}

#[pymodule]
fn l2g_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_svg, m)?)?;
    Ok(())
}
