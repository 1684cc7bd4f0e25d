//! Python bindings: configuration, training, evaluation and the numeric
//! building blocks, over plain lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use ulfine::checkpoint;
use ulfine::config::ExperimentConfig;
use ulfine::data::{self, EmbeddingSet};
use ulfine::error::Error;
use ulfine::fusion;
use ulfine::linalg::Matrix;
use ulfine::metrics::{self, RunReport};
use ulfine::prototypes;
use ulfine::rng::{stream_rng, Stream};
use ulfine::trainer::{self, Arm, Dataset, TrainState};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_numeric() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(Matrix::from_rows(&rows))
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Flat `key = value` experiment configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ExperimentConfig::from_text(t).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .to_map()
            .remove(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown config key {key:?}")))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        ExperimentConfig::KEYS.to_vec()
    }

    /// Copy of this config with one ablation arm's components switched off.
    fn for_arm(&self, arm: &str) -> PyResult<Self> {
        let arm: Arm = arm.parse().map_err(py_err)?;
        Ok(Self {
            inner: arm.configure(&self.inner),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, arm={:?})",
            self.inner.train.seed, self.inner.train.arm
        )
    }
}

/// One evaluation record.
#[pyclass(name = "Report", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn arm(&self) -> String {
        self.inner.arm.clone()
    }
    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }
    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.accuracy
    }
    #[getter]
    fn head_accuracy(&self) -> Option<f64> {
        self.inner.head_accuracy
    }
    #[getter]
    fn medium_accuracy(&self) -> Option<f64> {
        self.inner.medium_accuracy
    }
    #[getter]
    fn tail_accuracy(&self) -> Option<f64> {
        self.inner.tail_accuracy
    }
    #[getter]
    fn probe_accuracy(&self) -> f64 {
        self.inner.probe_accuracy
    }
    #[getter]
    fn stability(&self) -> f64 {
        self.inner.stability
    }
    #[getter]
    fn mask_pass_rate(&self) -> f64 {
        self.inner.mask_pass_rate
    }
    #[getter]
    fn pl_histogram(&self) -> Vec<usize> {
        self.inner.pl_histogram.clone()
    }
    #[getter]
    fn pl_false_count(&self) -> usize {
        self.inner.pl_false_count
    }
    #[getter]
    fn pl_false_confidence(&self) -> f64 {
        self.inner.pl_false_confidence
    }
    #[getter]
    fn loss(&self) -> (f64, f64, f64, f64) {
        let l = &self.inner.loss;
        (l.labeled, l.unlabeled, l.orthogonal, l.total)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(arm={:?}, iteration={}, accuracy={:.4}, stability={:.4})",
            self.inner.arm, self.inner.iteration, self.inner.accuracy, self.inner.stability
        )
    }
}

fn wrap(reports: Vec<RunReport>) -> Vec<PyReport> {
    reports
        .into_iter()
        .map(|inner| PyReport { inner })
        .collect()
}

/// Step-by-step training on a prepared split.
#[pyclass(name = "Trainer", skip_from_py_object)]
struct PyTrainer {
    config: ExperimentConfig,
    data: Dataset,
    state: TrainState,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let config = config.inner.clone();
        let data = trainer::prepare_data(&config).map_err(py_err)?;
        let state = TrainState::init(&config.train, &data);
        Ok(Self {
            config,
            data,
            state,
        })
    }

    /// Restores a checkpoint; the split is rebuilt from its embedded config.
    #[staticmethod]
    fn from_checkpoint(path: PathBuf) -> PyResult<Self> {
        let (state, text) = checkpoint::load_checkpoint(&path).map_err(py_err)?;
        let config = ExperimentConfig::from_text(&text).map_err(py_err)?;
        let data = trainer::prepare_data(&config).map_err(py_err)?;
        Ok(Self {
            config,
            data,
            state,
        })
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.state.iteration
    }

    #[getter]
    fn labeled_counts(&self) -> Vec<usize> {
        self.data.labeled_counts.clone()
    }

    #[getter]
    fn text_prototypes(&self) -> Vec<Vec<f64>> {
        rows(&self.state.prototypes.text.protos)
    }

    #[getter]
    fn visual_prototypes(&self) -> Vec<Vec<f64>> {
        rows(&self.state.prototypes.visual.protos)
    }

    #[getter]
    fn pseudo_distribution(&self) -> Vec<f64> {
        self.state.prototypes.pseudo.probs.clone()
    }

    /// One optimization step; returns `(labeled, unlabeled, orthogonal, total)`.
    fn step(&mut self) -> PyResult<(f64, f64, f64, f64)> {
        let out = trainer::sample_and_step(&mut self.state, &self.config.train, &self.data)
            .map_err(py_err)?;
        let l = out.loss;
        Ok((l.labeled, l.unlabeled, l.orthogonal, l.total))
    }

    fn evaluate(&self) -> PyResult<PyReport> {
        trainer::evaluate(
            &self.state,
            &self.config.train,
            &self.data,
            &self.config.to_map(),
        )
        .map(|inner| PyReport { inner })
        .map_err(py_err)
    }

    /// Test-set class predictions with the configured fusion weight.
    fn predict(&self) -> PyResult<Vec<usize>> {
        Ok(
            trainer::predict_test(&self.state, &self.config.train, &self.data)
                .map_err(py_err)?
                .fused,
        )
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.state, &self.config.to_text(), &path).map_err(py_err)
    }
}

/// Full run: records at the initial state, every `eval_every` and the end.
#[pyfunction]
fn run(config: &PyConfig) -> PyResult<Vec<PyReport>> {
    Ok(wrap(trainer::run(&config.inner).map_err(py_err)?.reports))
}

type ArmSeries = Vec<(String, Vec<PyReport>)>;

/// Runs each arm on the same split. Returns the per-arm series and the
/// comparison table.
#[pyfunction]
#[pyo3(signature = (config, arms = vec!["lp".to_string(), "lp_adapter".into(), "paf".into(), "dlf".into(), "full".into()]))]
fn ablate(config: &PyConfig, arms: Vec<String>) -> PyResult<(ArmSeries, String)> {
    let arms = arms
        .iter()
        .map(|a| a.parse())
        .collect::<Result<Vec<Arm>, _>>()
        .map_err(py_err)?;
    let report = trainer::ablation_matrix(&config.inner, &arms).map_err(py_err)?;
    let table = report.table();
    let runs = report
        .runs
        .into_iter()
        .map(|(arm, series)| (arm.name().to_string(), wrap(series)))
        .collect();
    Ok((runs, table))
}

#[pyfunction]
fn reports_to_csv(reports: Vec<PyRef<'_, PyReport>>) -> String {
    let series: Vec<RunReport> = reports.iter().map(|r| r.inner.clone()).collect();
    metrics::reports_to_csv(&series)
}

#[pyfunction]
fn class_counts(head: usize, gamma: f64, classes: usize) -> PyResult<Vec<usize>> {
    data::class_counts(head, gamma, classes).map_err(py_err)
}

#[pyfunction]
fn imbalance_increase(n1: f64, nc: f64, m1: f64, mc: f64) -> f64 {
    data::imbalance_increase(n1, nc, m1, mc)
}

#[pyfunction]
#[pyo3(signature = (pt, pv, epsilon_range = 1e-12))]
fn align_logits(pt: Vec<f64>, pv: Vec<f64>, epsilon_range: f64) -> PyResult<Vec<f64>> {
    if pt.len() != pv.len() || pt.is_empty() {
        return Err(PyValueError::new_err(
            "logit vectors must be nonempty and equally long",
        ));
    }
    Ok(fusion::align_logits(&pt, &pv, epsilon_range))
}

#[pyfunction]
fn fuse(pv: Vec<f64>, pt_aligned: Vec<f64>, eta: f64) -> PyResult<Vec<f64>> {
    if pv.len() != pt_aligned.len() || !(0.0..=1.0).contains(&eta) {
        return Err(PyValueError::new_err(
            "need equal lengths and eta in [0, 1]",
        ));
    }
    Ok(fusion::fuse(&pv, &pt_aligned, eta))
}

#[pyfunction]
fn classification_stability(p: Vec<f64>) -> PyResult<f64> {
    metrics::classification_stability(&p).map_err(py_err)
}

/// Returns `(loss, gradient rows)`.
#[pyfunction]
fn orthogonal_loss(means: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (l, g) = prototypes::orthogonal_loss(&matrix(means)?);
    Ok((l, rows(&g)))
}

#[pyfunction]
fn alpha_coefficients(pu: Vec<f64>, mu: f64) -> PyResult<Vec<f64>> {
    prototypes::alpha_coefficients(&pu, mu).map_err(py_err)
}

/// Returns `(features, labels)` with `per_class` rows per class, class-major.
#[pyfunction]
fn synth_embeddings(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<u32>)> {
    let means =
        data::synthetic_class_means(classes, dim, &mut stream_rng(seed, Stream::ClassMeans))
            .map_err(py_err)?;
    let set = data::sample_around_means(
        &means,
        &vec![per_class; classes],
        separation,
        noise,
        &mut stream_rng(seed, Stream::TrainSamples),
    )
    .map_err(py_err)?;
    Ok((
        rows(&set.to_matrix()),
        set.labels().unwrap_or_default().to_vec(),
    ))
}

/// Returns `(features, labels or None, class_count)`.
#[pyfunction]
fn load_embeddings(path: PathBuf) -> PyResult<(Rows, Option<Vec<u32>>, usize)> {
    let set = data::load_embeddings(&path).map_err(py_err)?;
    Ok((
        rows(&set.to_matrix()),
        set.labels().map(<[u32]>::to_vec),
        set.class_count(),
    ))
}

#[pyfunction]
#[pyo3(signature = (path, features, labels, class_count))]
fn save_embeddings(
    path: PathBuf,
    features: Vec<Vec<f64>>,
    labels: Option<Vec<u32>>,
    class_count: usize,
) -> PyResult<()> {
    let set = EmbeddingSet::from_matrix(&matrix(features)?, labels, class_count).map_err(py_err)?;
    data::save_embeddings(&set, &path).map_err(py_err)
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(reports_to_csv, m)?)?;
    m.add_function(wrap_pyfunction!(class_counts, m)?)?;
    m.add_function(wrap_pyfunction!(imbalance_increase, m)?)?;
    m.add_function(wrap_pyfunction!(align_logits, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(classification_stability, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(synth_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(save_embeddings, m)?)?;
    Ok(())
}

#[pymodule]
fn ulfine_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
