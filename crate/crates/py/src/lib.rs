//! Python bindings: semantic tables, superclass clustering, the three
//! losses, evaluation metrics, experiment runs and checkpointed models.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;

use semkd::evalsuite::{self, EpisodeOutcome};
use semkd::harness::checkpoint::load_checkpoint;
use semkd::harness::{run_experiment as run_cfg, ExperimentConfig};
use semkd::losses::{self, AttentionLossForm, DistillationContext};
use semkd::model::head::argmin;
use semkd::semantics::{self, ClassId};
use semkd::trainer::RunState;
use semkd::Error;

create_exception!(semkd_py, SemkdError, PyException);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Lookup(m) => PyKeyError::new_err(m),
        Error::Config(_) | Error::Shape(_) | Error::Index(_) | Error::DegenerateVector(_) | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => SemkdError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SemkdError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn class_ids(names: &[String]) -> Vec<ClassId> {
    names.iter().map(|n| ClassId::new(n.as_str())).collect()
}

/// Per-class semantic vectors.
#[pyclass(module = "semkd_py")]
struct SemanticTable {
    inner: semantics::SemanticTable,
}

#[pymethods]
impl SemanticTable {
    /// Parses `name v1 ... vd` lines.
    #[staticmethod]
    fn parse(text: &str, dim: usize) -> PyResult<Self> {
        Ok(SemanticTable {
            inner: semantics::parse_semantics(text, dim).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, dim: usize) -> PyResult<Self> {
        Ok(SemanticTable {
            inner: semantics::load_semantics(path, dim).map_err(py_err)?,
        })
    }

    /// Class means plus seeded Gaussian noise of standard deviation `noise_scale`.
    #[staticmethod]
    fn synthesize(means: Vec<(String, Vec<f64>)>, noise_scale: f64, seed: u64) -> PyResult<Self> {
        let means: Vec<(ClassId, Vec<f64>)> = means.into_iter().map(|(n, v)| (ClassId::new(n), v)).collect();
        Ok(SemanticTable {
            inner: semantics::synthesize_semantics(&means, noise_scale, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn classes(&self) -> Vec<String> {
        self.inner.classes().map(|c| c.as_str().to_owned()).collect()
    }

    fn get(&self, class: &str) -> PyResult<Vec<f64>> {
        self.inner.get(&ClassId::new(class)).map(<[f64]>::to_vec).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, class: &str) -> bool {
        self.inner.contains(&ClassId::new(class))
    }

    fn __repr__(&self) -> String {
        format!("SemanticTable(classes={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Superclass centers and the class-to-superclass assignment.
#[pyclass(module = "semkd_py")]
struct SuperclassMap {
    inner: semantics::SuperclassMap,
}

#[pymethods]
impl SuperclassMap {
    #[getter]
    fn centers(&self) -> Vec<Vec<f64>> {
        self.inner.centers.clone()
    }

    #[getter]
    fn assignment(&self) -> Vec<(String, usize)> {
        self.inner
            .assignment
            .iter()
            .map(|(c, &k)| (c.as_str().to_owned(), k))
            .collect()
    }

    /// Nearest center of a class not in the base set.
    fn assign(&self, table: &SemanticTable, class: &str) -> PyResult<usize> {
        semantics::assign_novel_class(&self.inner, &table.inner, &ClassId::new(class)).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.num_superclasses()
    }
}

#[pyfunction]
#[pyo3(signature = (table, base_classes, num_superclasses, seed, max_iter = 100, tol = 0.0))]
fn cluster_base_classes(
    table: &SemanticTable,
    base_classes: Vec<String>,
    num_superclasses: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> PyResult<SuperclassMap> {
    let inner = semantics::cluster_base_classes(
        &table.inner,
        &class_ids(&base_classes),
        num_superclasses,
        seed,
        max_iter,
        tol,
    )
    .map_err(py_err)?;
    Ok(SuperclassMap { inner })
}

/// Returns `(centers, labels, sse)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed, max_iter = 100, tol = 0.0))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64, max_iter: usize, tol: f64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, f64)> {
    let fit = semantics::kmeans(&points, k, seed, max_iter, tol).map_err(py_err)?;
    let sse = fit.sse();
    Ok((fit.centers, fit.labels, sse))
}

#[pyfunction]
fn cosine_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    semkd::model::cosine::cosine_distance(&a, &b).map_err(py_err)
}

/// Cross-entropy of `softmax(-d)` at the 0-based labels.
#[pyfunction]
fn classification_loss(distances: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    losses::classification_loss(matrix(distances)?.view(), &labels).map_err(py_err)
}

/// Soft-target cross-entropy between frozen old-class distances and the
/// leading columns of `new_distances`.
#[pyfunction]
#[pyo3(signature = (new_distances, old_distances, tau = 2.0))]
fn distillation_loss(new_distances: Vec<Vec<f64>>, old_distances: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    let ctx = DistillationContext::new(matrix(old_distances)?);
    losses::distillation_loss(matrix(new_distances)?.view(), &ctx, tau).map_err(py_err)
}

/// `per_module` is nested `batch × modules × width`; `form` is "nll" or "raw".
#[pyfunction]
#[pyo3(signature = (fused, per_module, superclass_labels, form = "nll"))]
fn attention_loss(
    fused: Vec<Vec<f64>>,
    per_module: Vec<Vec<Vec<f64>>>,
    superclass_labels: Vec<usize>,
    form: &str,
) -> PyResult<f64> {
    let form = match form {
        "nll" => AttentionLossForm::Nll,
        "raw" => AttentionLossForm::Raw,
        other => return Err(PyValueError::new_err(format!("unknown attention loss form `{other}`"))),
    };
    let b = per_module.len();
    let n = per_module.first().map_or(0, Vec::len);
    let w = per_module.first().and_then(|m| m.first()).map_or(0, Vec::len);
    if per_module.iter().any(|m| m.len() != n || m.iter().any(|r| r.len() != w)) {
        return Err(PyValueError::new_err("ragged per-module tensor"));
    }
    let flat: Vec<f64> = per_module.into_iter().flatten().flatten().collect();
    let modules = Array3::from_shape_vec((b, n, w), flat).map_err(|e| PyValueError::new_err(e.to_string()))?;
    losses::attention_loss(matrix(fused)?.view(), modules.view(), &superclass_labels, form).map_err(py_err)
}

#[pyfunction]
fn accuracy(predictions: Vec<String>, labels: Vec<String>) -> PyResult<f64> {
    evalsuite::accuracy(&class_ids(&predictions), &class_ids(&labels)).map_err(py_err)
}

#[pyfunction]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    evalsuite::harmonic_mean(a, b)
}

/// Scores one DFSL episode from a `queries × classes` distance matrix.
#[pyfunction]
fn dfsl_episode_outcome<'py>(
    py: Python<'py>,
    distances: Vec<Vec<f64>>,
    labels: Vec<usize>,
    base_positions: Vec<usize>,
    novel_positions: Vec<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let outcome = evalsuite::dfsl_episode_outcome(matrix(distances)?.view(), &labels, &base_positions, &novel_positions)
        .map_err(py_err)?;
    json_to_py(py, &outcome)
}

/// Averages episode dicts as returned by `dfsl_episode_outcome`.
#[pyfunction]
fn evaluate_dfsl<'py>(py: Python<'py>, outcomes: Vec<Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let json = py.import("json")?;
    let parsed = outcomes
        .iter()
        .map(|o| {
            let text: String = json.call_method1("dumps", (o,))?.extract()?;
            serde_json::from_str::<EpisodeOutcome>(&text).map_err(|e| PyValueError::new_err(e.to_string()))
        })
        .collect::<PyResult<Vec<_>>>()?;
    json_to_py(py, &evalsuite::evaluate_dfsl(&parsed).map_err(py_err)?)
}

/// Runs an experiment described by TOML text and returns its report.
/// Relative dataset paths resolve against `base_dir`.
#[pyfunction]
#[pyo3(signature = (config_toml, overrides = Vec::new(), base_dir = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    overrides: Vec<String>,
    base_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = ExperimentConfig::from_toml_str(config_toml, &overrides).map_err(py_err)?;
    if let (Some(base), semkd::harness::DatasetConfig::Image(img)) = (&base_dir, &mut cfg.dataset) {
        for p in [&mut img.root, &mut img.split, &mut img.semantics] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    let outcome = py
        .detach(|| run_cfg(&cfg, |_| Ok(())))
        .map_err(|e| SemkdError::new_err(e.to_string()))?;
    json_to_py(py, &outcome.report)
}

/// Max relative error of the analytic gradients on a small random model.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn check_gradients(seed: u64) -> PyResult<f64> {
    let cfg = semkd::gradcheck::GradCheckConfig {
        seed,
        ..Default::default()
    };
    Ok(semkd::gradcheck::check_gradients(&cfg).map_err(py_err)?.max_rel_error)
}

/// A trained model restored from a session checkpoint.
#[pyclass(module = "semkd_py")]
struct Model {
    state: RunState,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            state: load_checkpoint(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn session_index(&self) -> usize {
        self.state.session_index
    }

    fn classes(&self) -> Vec<String> {
        self.state.head.classes().iter().map(|c| c.as_str().to_owned()).collect()
    }

    fn num_params(&self) -> usize {
        self.state.model.count_params()
    }

    /// Cosine distances from each input's semantic projection to every class.
    fn distances(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self.state.model.project_inputs(matrix(inputs)?.view()).map_err(py_err)?;
        Ok(to_rows(&self.state.head.distances(y.view())))
    }

    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<String>> {
        let classes = self.state.head.classes();
        Ok(self
            .distances(inputs)?
            .iter()
            .map(|row| classes[argmin(row)].as_str().to_owned())
            .collect())
    }
}

#[pymodule]
pub fn semkd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SemkdError", m.py().get_type::<SemkdError>())?;
    m.add_class::<SemanticTable>()?;
    m.add_class::<SuperclassMap>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(cluster_base_classes, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(classification_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distillation_loss, m)?)?;
    m.add_function(wrap_pyfunction!(attention_loss, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(dfsl_episode_outcome, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dfsl, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(check_gradients, m)?)?;
    Ok(())
}
