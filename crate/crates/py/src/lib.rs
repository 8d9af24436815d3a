//! Python bindings: generators, signatures, risk functionals, deep-hedge
//! training and the backward out-of-sample test.
//!
//! Each Python entry point wraps a plain Rust function of the same name in
//! [`api`], which the Rust tests exercise directly.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use robhedge::genkit::GeneratorParams;
use robhedge::hedgekit::{HedgeRun, StrategySpec};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub mod api;

fn py_err(e: robhedge::Error) -> PyErr {
    match e {
        robhedge::Error::InvalidInput(_) | robhedge::Error::Shape(_) | robhedge::Error::Empty(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A path generator (Black-Scholes, Heston or neural SDE).
#[pyclass(name = "Generator", module = "robhedge_py")]
#[derive(Clone)]
pub struct PyGenerator {
    pub inner: GeneratorParams,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn bs(sigma: f64, s0: f64) -> PyResult<Self> {
        let inner = GeneratorParams::bs(sigma, s0);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn heston(kappa: f64, beta: f64, sigma: f64, rho: f64, s0: f64) -> PyResult<Self> {
        let inner = GeneratorParams::heston(kappa, beta, sigma, rho, s0);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: GeneratorParams = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant()
    }

    /// Channel names, in path order.
    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner.roles().iter().map(|r| format!("{r:?}").to_lowercase()).collect()
    }

    /// `n` paths on a uniform grid, as `n` lists of `(steps + 1) · channels` values (point-major).
    fn sample(&self, seed: u64, n: usize, dt: f64, steps: usize) -> PyResult<Vec<Vec<f64>>> {
        api::sample(&self.inner, seed, n, dt, steps).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Generator({})", self.inner)
    }
}

/// A trained hedging strategy.
#[pyclass(name = "Strategy", module = "robhedge_py")]
#[derive(Clone)]
pub struct PyStrategy {
    pub inner: StrategySpec,
    /// In-sample objective, when the strategy comes from training.
    #[pyo3(get)]
    pub objective: Option<f64>,
}

#[pymethods]
impl PyStrategy {
    /// Loads `hedger.ckpt` and its metadata from a run directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let run = HedgeRun::load(&dir).map_err(py_err)?;
        Ok(Self { inner: run.strategy, objective: Some(run.final_objective) })
    }

    /// Positions at normalised time `time_frac` for channel levels `state`.
    fn position(&self, time_frac: f64, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.position_at(time_frac, &state).map_err(py_err)
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features.iter().map(|f| f.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        let f = self.features().join(", ");
        format!("Strategy(features=[{f}], traded={:?})", self.inner.traded)
    }
}

/// Truncated signature coefficients, level-major with lexicographic words.
#[pyfunction]
#[pyo3(signature = (points, dim, depth, augmentations = Vec::new()))]
fn signature(points: Vec<f64>, dim: usize, depth: usize, augmentations: Vec<String>) -> PyResult<Vec<f64>> {
    api::signature(&points, dim, depth, &augmentations).map_err(py_err)
}

/// SigMMD between two path batches given as lists of point-major paths.
#[pyfunction]
#[pyo3(signature = (p, q, dim, depth, augmentations = Vec::new()))]
fn sig_mmd(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>, dim: usize, depth: usize, augmentations: Vec<String>) -> PyResult<f64> {
    api::sig_mmd(&p, &q, dim, depth, &augmentations).map_err(py_err)
}

/// Entropic risk `(1/λ) log E[exp(−λX)]` of a sample.
#[pyfunction]
fn entropic_risk(sample: Vec<f64>, risk_aversion: f64) -> PyResult<f64> {
    api::entropic_risk(&sample, risk_aversion).map_err(py_err)
}

/// Black-Scholes call price and delta.
#[pyfunction]
fn bs_call(s: f64, strike: f64, sigma: f64, tau: f64) -> (f64, f64) {
    api::bs_call(s, strike, sigma, tau)
}

/// Deep hedge of an at-the-money call under `generator` (18 steps of
/// 5/255, entropic risk with λ = 130).
#[pyfunction]
#[pyo3(signature = (generator, scale = 0.05, seed = 0, hidden = vec![128, 128]))]
fn train_deep_hedge(generator: &PyGenerator, scale: f64, seed: u64, hidden: Vec<usize>) -> PyResult<PyStrategy> {
    let run = api::train_deep_hedge(&generator.inner, scale, seed, &hidden).map_err(py_err)?;
    Ok(PyStrategy { inner: run.strategy, objective: Some(run.final_objective) })
}

/// Backward out-of-sample losses of `strategy` under each scenario generator.
#[pyfunction]
#[pyo3(signature = (strategy, scenarios, eval_paths = 1000, seed = 0))]
fn oosp(strategy: &PyStrategy, scenarios: Vec<PyGenerator>, eval_paths: usize, seed: u64) -> PyResult<Vec<f64>> {
    let params: Vec<GeneratorParams> = scenarios.into_iter().map(|g| g.inner).collect();
    api::oosp(&strategy.inner, params, eval_paths, seed).map_err(py_err)
}

#[pymodule]
fn robhedge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyStrategy>()?;
    m.add_function(wrap_pyfunction!(signature, m)?)?;
    m.add_function(wrap_pyfunction!(sig_mmd, m)?)?;
    m.add_function(wrap_pyfunction!(entropic_risk, m)?)?;
    m.add_function(wrap_pyfunction!(bs_call, m)?)?;
    m.add_function(wrap_pyfunction!(train_deep_hedge, m)?)?;
    m.add_function(wrap_pyfunction!(oosp, m)?)?;
    Ok(())
}
