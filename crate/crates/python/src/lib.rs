//! Python bindings. Matrices travel as lists of rows, series as lists of
//! time steps (each step a list of channel values), labels as strings.

use cksc::kernelcore::{self, TimeSeries};
use cksc::metrics::{self, CvConfig, Dataset};
use cksc::nqp::{self, NqpConfig, QuadProgram};
use cksc::recall::{self, Recall};
use cksc::synthetic::{self, SyntheticSpec};
use cksc::{io, CrossKernel, Hyperparams, KernelMatrix, LabelMatrix, TrainedModel};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(cksc, CkscError, PyValueError);

fn err(e: cksc::CkscError) -> PyErr {
    CkscError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(CkscError::new_err("matrix rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn series(steps: &[Vec<f64>]) -> PyResult<TimeSeries> {
    TimeSeries::from_steps(steps).map_err(err)
}

fn kernel(rows: &[Vec<f64>]) -> PyResult<KernelMatrix> {
    KernelMatrix::new(matrix(rows)?).map_err(err)
}

fn labels(names: &[String]) -> PyResult<LabelMatrix> {
    LabelMatrix::from_names(names).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, band=None))]
fn dtw_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, band: Option<usize>) -> PyResult<f64> {
    kernelcore::dtw_distance(&series(&a)?, &series(&b)?, band).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, band=None))]
fn distance_matrix(data: Vec<Vec<Vec<f64>>>, band: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    let s = data.iter().map(|d| series(d)).collect::<PyResult<Vec<_>>>()?;
    Ok(rows(&kernelcore::distance_matrix(&s, band).map_err(err)?))
}

#[pyfunction]
fn bandwidth(distances: Vec<Vec<f64>>) -> PyResult<f64> {
    kernelcore::bandwidth(&matrix(&distances)?).map_err(err)
}

#[pyfunction]
fn gaussian_kernel(distances: Vec<Vec<f64>>, delta: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(kernelcore::gaussian_kernel(&matrix(&distances)?, delta).map_err(err)?.values()))
}

#[pyfunction]
fn gram_spectrum(k: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    kernelcore::gram_spectrum(&kernel(&k)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (q, b, t, tol=nqp::DEFAULT_TOL, max_inner=nqp::DEFAULT_MAX_INNER))]
fn nqp_solve<'py>(py: Python<'py>, q: Vec<Vec<f64>>, b: Vec<f64>, t: usize, tol: f64, max_inner: usize) -> PyResult<Bound<'py, PyDict>> {
    let prog = QuadProgram::new(matrix(&q)?, DVector::from_vec(b), t).map_err(err)?;
    let s = nqp::solve(&prog, &NqpConfig { tol, max_inner }).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("x", s.x.as_slice().to_vec())?;
    out.set_item("support", s.support)?;
    out.set_item("objective", s.objective)?;
    out.set_item("steps", s.steps.iter().map(|st| (st.selected, st.objective)).collect::<Vec<_>>())?;
    out.set_item("skipped", s.skipped)?;
    Ok(out)
}

#[pyfunction]
fn compute_beta(k: Vec<Vec<f64>>, y: Vec<String>, alpha: f64) -> PyResult<f64> {
    cksc::train::compute_beta(&kernel(&k)?, &labels(&y)?, alpha).map_err(err)
}

#[pyfunction]
fn accuracy(predicted: Vec<usize>, actual: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&predicted, &actual).map_err(err)
}

#[pyfunction]
fn interpretability(dictionary: Vec<Vec<f64>>, y: Vec<String>) -> PyResult<Vec<Option<f64>>> {
    metrics::interpretability(&matrix(&dictionary)?, &labels(&y)?).map_err(err)
}

fn hyper(alpha: f64, sparsity: usize, atoms: Option<usize>, max_outer: usize, rel_tol: f64, seed: u64) -> Hyperparams {
    Hyperparams { alpha, sparsity, atoms, max_outer, rel_tol, seed, ..Default::default() }
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (k, y, alpha=0.1, sparsity=4, folds=5, repeats=1, seed=0, atoms=None, max_outer=50, rel_tol=1e-4))]
fn crossvalidate<'py>(
    py: Python<'py>,
    k: Vec<Vec<f64>>,
    y: Vec<String>,
    alpha: f64,
    sparsity: usize,
    folds: usize,
    repeats: usize,
    seed: u64,
    atoms: Option<usize>,
    max_outer: usize,
    rel_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = Dataset::new(kernel(&k)?, labels(&y)?).map_err(err)?;
    let h = hyper(alpha, sparsity, atoms, max_outer, rel_tol, seed);
    let rep = py.detach(|| metrics::crossvalidate(&data, &h, &CvConfig { folds, repeats, seed })).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("mean_accuracy", rep.mean_accuracy)?;
    out.set_item("std_accuracy", rep.std_accuracy)?;
    out.set_item("mean_ip", rep.mean_ip)?;
    out.set_item("unclassifiable_total", rep.unclassifiable_total)?;
    out.set_item("fold_accuracies", rep.fold_reports.iter().map(|r| r.accuracy_percent).collect::<Vec<_>>())?;
    Ok(out)
}

/// Returns `(series, labels)` for a class-templated synthetic dataset.
#[allow(clippy::type_complexity)]
#[pyfunction]
#[pyo3(signature = (classes=3, samples_per_class=20, channels=2, length=30, separation=1.0, noise=0.05, seed=0))]
fn synthetic_dataset(
    classes: usize,
    samples_per_class: usize,
    channels: usize,
    length: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<String>)> {
    let spec = SyntheticSpec { classes, samples_per_class, channels, length, separation, noise, seed };
    let data = synthetic::generate(&spec).map_err(err)?;
    let s = data.iter().map(|d| d.series.values().column_iter().map(|c| c.iter().copied().collect()).collect()).collect();
    Ok((s, data.iter().map(|d| d.class.to_string()).collect()))
}

/// A trained dictionary together with its training kernel and labels.
#[pyclass(frozen, module = "cksc")]
struct Model {
    inner: TrainedModel,
}

impl Model {
    fn row(&self, kz: Vec<f64>) -> PyResult<CrossKernel> {
        CrossKernel::new(kz).map_err(err)
    }

    fn label(&self, class: Option<usize>) -> Option<String> {
        class.map(|c| self.inner.labels.classes()[c].clone())
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str, k: Vec<Vec<f64>>) -> PyResult<Self> {
        let doc = io::parse_model_document(text).map_err(err)?;
        Ok(Self { inner: doc.into_model(kernel(&k)?).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        let doc = io::ModelDocument::from_model(&self.inner, None, serde_json::Value::Null);
        serde_json::to_string(&doc).map_err(|e| CkscError::new_err(e.to_string()))
    }

    #[getter]
    fn dictionary(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.dictionary)
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.labels.classes().to_vec()
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.inner.objective_trace.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn kernel_hash(&self) -> String {
        self.inner.kernel_hash.clone()
    }

    /// Sparse code of a test point from its kernel row against the training set.
    fn encode(&self, kz: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(recall::encode(&self.inner, &self.row(kz)?).map_err(err)?.as_slice().to_vec())
    }

    /// Class label for a code, or None when the code is all zero.
    fn classify(&self, code: Vec<f64>) -> PyResult<Option<String>> {
        let p = recall::classify(&self.inner, &DVector::from_vec(code)).map_err(err)?;
        Ok(self.label(p.class_id))
    }

    fn predict(&self, kz: Vec<f64>) -> PyResult<Option<String>> {
        let p = Recall::new(&self.inner).map_err(err)?.predict(&self.row(kz)?).map_err(err)?;
        Ok(self.label(p.class_id))
    }

    fn predict_many(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Vec<Option<String>>> {
        let rows = rows.into_iter().map(|r| self.row(r)).collect::<PyResult<Vec<_>>>()?;
        let preds = py.detach(|| Recall::new(&self.inner)?.predict_batch(&rows)).map_err(err)?;
        Ok(preds.into_iter().map(|p| self.label(p.class_id)).collect())
    }

    fn g_value(&self, code: Vec<f64>) -> f64 {
        recall::g_value(&self.inner, &DVector::from_vec(code))
    }

    fn interpretability(&self) -> PyResult<Vec<Option<f64>>> {
        metrics::interpretability(&self.inner.dictionary, &self.inner.labels).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(samples={}, atoms={}, classes={}, iterations={})",
            self.inner.kernel.n(),
            self.inner.n_atoms(),
            self.inner.labels.n_classes(),
            self.inner.iterations
        )
    }
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (k, y, alpha=0.1, sparsity=4, atoms=None, max_outer=50, rel_tol=1e-4, seed=0))]
fn train(
    py: Python<'_>,
    k: Vec<Vec<f64>>,
    y: Vec<String>,
    alpha: f64,
    sparsity: usize,
    atoms: Option<usize>,
    max_outer: usize,
    rel_tol: f64,
    seed: u64,
) -> PyResult<Model> {
    let (k, h) = (kernel(&k)?, labels(&y)?);
    let hp = hyper(alpha, sparsity, atoms, max_outer, rel_tol, seed);
    let inner = py.detach(|| cksc::train(&k, &h, &hp)).map_err(err)?;
    Ok(Model { inner })
}

#[pymodule]
#[pyo3(name = "cksc")]
fn cksc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CkscError", m.py().get_type::<CkscError>())?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(dtw_distance, m)?)?;
    m.add_function(wrap_pyfunction!(distance_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gram_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(nqp_solve, m)?)?;
    m.add_function(wrap_pyfunction!(compute_beta, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(interpretability, m)?)?;
    m.add_function(wrap_pyfunction!(crossvalidate, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
