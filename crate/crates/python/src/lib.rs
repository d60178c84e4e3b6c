//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use replicadetect::linalg::{from_rows, to_rows};
use replicadetect::simgen::generate_replicate;
use replicadetect::{
    CvConfig, DataMatrix, DeltaChoice, FactorEstimate, FitSettings, MuChoice, PvsOptions, QNorm, RankMethod, RankRule,
};

create_exception!(replicadetect, ReplicaDetectError, PyException);

fn err(e: replicadetect::Error) -> PyErr {
    ReplicaDetectError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    from_rows(&rows).ok_or_else(|| ReplicaDetectError::new_err("matrix rows must be nonempty and of equal length"))
}

fn qnorm(q: f64) -> PyResult<QNorm> {
    QNorm::new(q).map_err(err)
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (value.to_string(),))?.unbind())
}

/// Fitted pure partition, latent dimension and loadings.
#[pyclass(module = "replicadetect", frozen)]
pub struct FitResult {
    inner: FactorEstimate,
    json: serde_json::Value,
}

#[pymethods]
impl FitResult {
    #[getter]
    fn k_hat(&self) -> usize {
        self.inner.k_hat
    }

    /// Pure groups, 0-based column indices.
    #[getter]
    fn groups(&self) -> Vec<Vec<usize>> {
        self.inner.pure_partition.groups.clone()
    }

    #[getter]
    fn parallel_groups(&self) -> Vec<Vec<usize>> {
        self.inner.parallel_partition.groups.clone()
    }

    #[getter]
    fn a_hat(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.a_hat)
    }

    #[getter]
    fn b_hat(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.b_hat)
    }

    #[getter]
    fn sigma_z(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.sigma_z_hat)
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma_hat.iter().copied().collect()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    /// Full report as nested Python objects.
    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &self.json)
    }

    fn to_json(&self) -> String {
        self.json.to_string()
    }

    fn __repr__(&self) -> String {
        format!("FitResult(k_hat={}, groups={})", self.inner.k_hat, self.inner.pure_partition.g())
    }
}

/// Ground truth of a simulated data set.
#[pyclass(module = "replicadetect", frozen)]
pub struct Truth {
    inner: replicadetect::Truth,
}

#[pymethods]
impl Truth {
    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.a)
    }

    #[getter]
    fn sigma_z(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.sigma_z)
    }

    #[getter]
    fn pure_groups(&self) -> Vec<Vec<usize>> {
        self.inner.pure.groups.clone()
    }

    #[getter]
    fn noise_columns(&self) -> Vec<usize> {
        self.inner.noise_columns.clone()
    }
}

/// Sample correlation matrix of an `n x p` data matrix.
#[pyfunction]
#[pyo3(signature = (x, center = true))]
fn sample_correlation(x: Vec<Vec<f64>>, center: bool) -> PyResult<Vec<Vec<f64>>> {
    let data = DataMatrix::from_rows(&x).map_err(err)?;
    Ok(to_rows(&replicadetect::sample_correlation(&data, center).map_err(err)?.r_hat))
}

/// Score of one pair: `(value, a, b)`.
#[pyfunction]
#[pyo3(signature = (r, i, j, q = 2.0))]
fn score_pair(r: Vec<Vec<f64>>, i: usize, j: usize, q: f64) -> PyResult<(f64, f64, f64)> {
    let s = replicadetect::score_sq(&matrix(r)?, i, j, qnorm(q)?).map_err(err)?;
    Ok((s.value, s.a, s.b))
}

/// Symmetric table of pairwise scores.
#[pyfunction]
#[pyo3(signature = (r, q = 2.0))]
fn score_table(r: Vec<Vec<f64>>, q: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&replicadetect::score_table(&matrix(r)?, qnorm(q)?).map_err(err)?.values))
}

/// Groups of a correlation matrix whose scores link within `2 * delta`.
#[pyfunction]
#[pyo3(signature = (r, delta, q = 2.0))]
fn find_parallel(r: Vec<Vec<f64>>, delta: f64, q: f64) -> PyResult<Vec<Vec<usize>>> {
    let table = replicadetect::score_table(&matrix(r)?, qnorm(q)?).map_err(err)?;
    Ok(replicadetect::find_parallel(&table, delta).groups)
}

/// Full pipeline on data. `delta` and `mu` are chosen by cross-validation when omitted.
#[pyfunction]
#[pyo3(signature = (x, q = 2.0, delta = None, mu = None, cv_rank = "direct-k", prescreen = false, seed = 0, folds = 2))]
#[allow(clippy::too_many_arguments)]
fn fit(
    x: Vec<Vec<f64>>,
    q: f64,
    delta: Option<f64>,
    mu: Option<f64>,
    cv_rank: &str,
    prescreen: bool,
    seed: u64,
    folds: usize,
) -> PyResult<FitResult> {
    let rank_method = match cv_rank {
        "direct-k" => RankMethod::DirectK,
        "mu-grid" => RankMethod::MuGrid,
        other => return Err(ReplicaDetectError::new_err(format!("unknown cv_rank '{other}'"))),
    };
    let settings = FitSettings {
        q: qnorm(q)?,
        delta: delta.map_or(DeltaChoice::Cv, DeltaChoice::Fixed),
        mu: mu.map_or(MuChoice::Cv(rank_method), MuChoice::Fixed),
        prescreen,
        cv: CvConfig { seed, folds, rank_method, ..CvConfig::default() },
    };
    let data = DataMatrix::from_rows(&x).map_err(err)?;
    let out = replicadetect::fit(&data, &settings).map_err(err)?;
    let json = out.to_json(&settings);
    Ok(FitResult { inner: out.estimate, json })
}

/// Pipeline on a covariance (or correlation) matrix with fixed thresholds.
#[pyfunction]
#[pyo3(signature = (r, delta, mu, q = 2.0))]
fn fit_correlation(r: Vec<Vec<f64>>, delta: f64, mu: f64, q: f64) -> PyResult<FitResult> {
    let model = replicadetect::CorrelationModel::from_covariance(matrix(r)?, None).map_err(err)?;
    let est = replicadetect::pvs_from_model(&model, qnorm(q)?, delta, RankRule::Mu(mu), &PvsOptions::default())
        .map_err(err)?;
    let json = est.to_json();
    Ok(FitResult { inner: est, json })
}

/// One replicate of the synthetic factor model: `(x, truth)`.
#[pyfunction]
#[pyo3(signature = (n = 300, p = 500, k = 10, alpha = 2.5, rho_z = 0.3, eta = 1.0, n0 = 0, seed = 0, rep = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    n: usize,
    p: usize,
    k: usize,
    alpha: f64,
    rho_z: f64,
    eta: f64,
    n0: usize,
    seed: u64,
    rep: u64,
) -> PyResult<(Vec<Vec<f64>>, Truth)> {
    let sc = replicadetect::SimScenario { n, p, k, alpha, rho_z, eta, n0, seed, ..Default::default() };
    let (x, truth) = generate_replicate(&sc, rep).map_err(err)?;
    Ok((to_rows(x.values()), Truth { inner: truth }))
}

/// Recovery and error metrics of a fit against the truth.
#[pyfunction]
fn evaluate(py: Python<'_>, result: &FitResult, truth: &Truth) -> PyResult<Py<PyAny>> {
    let report = replicadetect::evaluate(&result.inner, &truth.inner).map_err(err)?;
    json_to_py(py, &serde_json::to_value(report).expect("plain data serializes"))
}

#[pymodule(name = "replicadetect")]
fn replicadetect_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ReplicaDetectError", m.py().get_type::<ReplicaDetectError>())?;
    m.add_class::<FitResult>()?;
    m.add_class::<Truth>()?;
    m.add_function(wrap_pyfunction!(sample_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(score_pair, m)?)?;
    m.add_function(wrap_pyfunction!(score_table, m)?)?;
    m.add_function(wrap_pyfunction!(find_parallel, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
