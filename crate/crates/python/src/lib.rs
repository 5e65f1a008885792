use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use orthofield::cli;
use orthofield::conditional::{verify_commuting, verify_ortho, FootprintFunctional, VerifyOptions};
use orthofield::harness::{self, ExperimentSpec, FieldSampler, Regime};
use orthofield::lattice::IndexVec;
use orthofield::models::{self, InnovationSpec, Kernel};
use orthofield::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Capacity { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A stationary random field model.
#[pyclass(name = "FieldModel", module = "orthofield_py", from_py_object)]
#[derive(Clone)]
struct PyFieldModel {
    inner: models::FieldModel,
}

#[pymethods]
impl PyFieldModel {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyFieldModel {
            inner: models::FieldModel::from_toml_str(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyFieldModel {
            inner: models::FieldModel::load(path).map_err(py_err)?,
        })
    }

    /// I.i.d. fair signs on `Z^dim`.
    #[staticmethod]
    fn iid(dim: usize) -> PyResult<Self> {
        let inner = models::FieldModel::iid(dim, InnovationSpec::Rademacher);
        inner.validate().map_err(py_err)?;
        Ok(PyFieldModel { inner })
    }

    /// Linear field of fair signs with `terms` as `(offset, coefficient)`.
    #[staticmethod]
    fn linear(terms: Vec<(Vec<i64>, f64)>) -> PyResult<Self> {
        let dim = terms
            .first()
            .map(|t| t.0.len())
            .ok_or_else(|| PyValueError::new_err("a kernel needs at least one term"))?;
        let kernel = Kernel::new(dim, terms.into_iter().map(|(o, a)| (IndexVec::new(o), a))).map_err(py_err)?;
        let inner = models::FieldModel::linear(InnovationSpec::Rademacher, kernel);
        inner.validate().map_err(py_err)?;
        Ok(PyFieldModel { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    /// `max |X|`, or `None` for an unbounded field.
    #[getter]
    fn bound(&self) -> Option<f64> {
        self.inner.bound()
    }

    fn is_structural_omd(&self) -> bool {
        self.inner.is_structural_omd()
    }

    /// Field values over the origin box `[0, sizes)`, row-major.
    #[pyo3(signature = (sizes, seed=0, replicate=0, frozen_past=None))]
    fn sample(&self, sizes: Vec<usize>, seed: u64, replicate: u64, frozen_past: Option<u64>) -> PyResult<Vec<f64>> {
        let sampler = FieldSampler::origin(&self.inner, &sizes).map_err(py_err)?;
        let frozen = frozen_past.map(|p| harness::frozen_past(self.inner.dim, seed, p));
        let base = harness::replicate_base(seed, frozen.as_ref());
        let mut ws = sampler.workspace();
        Ok(sampler
            .sample(&mut ws, base, replicate, frozen.as_ref())
            .map_err(py_err)?
            .to_vec())
    }

    fn __repr__(&self) -> String {
        format!("FieldModel(dim={}, field={:?})", self.inner.dim, self.inner.field)
    }
}

/// Orthomartingale check over the default conditioning offsets.
#[pyfunction]
fn verify_ortho_model(py: Python<'_>, model: &PyFieldModel) -> PyResult<Py<PyAny>> {
    let r = verify_ortho(&model.inner, None, &VerifyOptions::default()).map_err(py_err)?;
    json_to_py(py, &r)
}

/// Commuting check for `X_0` at the anchors `u` and `a`.
#[pyfunction]
fn verify_commuting_model(py: Python<'_>, model: &PyFieldModel, u: Vec<i64>, a: Vec<i64>) -> PyResult<Py<PyAny>> {
    let f = FootprintFunctional::from_model(&model.inner, &IndexVec::zeros(model.inner.dim)).map_err(py_err)?;
    let r = verify_commuting(&f, &IndexVec::new(u), &IndexVec::new(a), &VerifyOptions::default()).map_err(py_err)?;
    json_to_py(py, &r)
}

/// `(value, method, error)` for `E X_0^2`.
#[pyfunction]
fn estimate_sigma2(model: &PyFieldModel) -> PyResult<(f64, String, f64)> {
    let e = harness::estimate_sigma2(&model.inner).map_err(py_err)?;
    let method = match e.method {
        harness::EstimateMethod::Exact => "exact",
        harness::EstimateMethod::Mc => "mc",
    };
    Ok((e.value, method.to_string(), e.error))
}

#[pyfunction]
fn long_run_variance(model: &PyFieldModel) -> PyResult<f64> {
    Ok(harness::long_run_variance(&model.inner).map_err(py_err)?.value)
}

/// Quenched (with frozen pasts) or annealed CLT run; returns the report.
#[pyfunction]
#[pyo3(signature = (model, sizes, replicates, frozen_pasts=None, seed=0, threads=0, rectangular=false))]
fn run_clt(
    py: Python<'_>,
    model: &PyFieldModel,
    sizes: Vec<Vec<usize>>,
    replicates: usize,
    frozen_pasts: Option<Vec<u64>>,
    seed: u64,
    threads: usize,
    rectangular: bool,
) -> PyResult<Py<PyAny>> {
    let regime = if rectangular { Regime::Rectangular } else { Regime::Diagonal };
    let mut spec = ExperimentSpec::new(model.inner.clone(), regime, sizes, replicates);
    spec.base_seed = seed;
    spec.threads = threads;
    let result = py
        .detach(|| match frozen_pasts {
            Some(p) => {
                spec.frozen_pasts = p;
                harness::run_quenched_clt(&spec)
            }
            None => harness::run_annealed_clt(&spec),
        })
        .map_err(py_err)?;
    json_to_py(py, &result)
}

#[pyfunction]
fn normal_cdf(x: f64, sigma2: f64) -> PyResult<f64> {
    harness::normal_cdf(x, sigma2).map_err(py_err)
}

/// KS distance and verdict of `sample` against `N(0, sigma2)`.
#[pyfunction]
fn gof_stats(py: Python<'_>, sample: Vec<f64>, sigma2: f64) -> PyResult<Py<PyAny>> {
    let emp = harness::EmpiricalDistribution::new(sample).map_err(py_err)?;
    json_to_py(py, &harness::gof_stats(&emp, sigma2, None).map_err(py_err)?)
}

/// Partial sums of `sum_n f(n / ln^2 n) / (2 n^2)` at `checkpoints`, for
/// `f` one of `"x2"`, `"xlog"` or `"phi2"`.
#[pyfunction]
fn level_moment_series(n_max: u64, f: &str, checkpoints: Vec<u64>) -> PyResult<Vec<f64>> {
    let functional = match f {
        "x2" => models::MomentFunctional::Plain,
        "xlog" => models::MomentFunctional::OrliczG { eps: 0.0 },
        "phi2" => models::MomentFunctional::Phi { d: 2 },
        other => return Err(PyValueError::new_err(format!("unknown moment function `{other}`"))),
    };
    let s = models::u_moment_series(n_max, &functional, &checkpoints).map_err(py_err)?;
    Ok(s.partial_sums)
}

/// Run an experiment config file; returns `(exit_code, summary)`.
#[pyfunction]
fn run_config(py: Python<'_>, path: PathBuf) -> PyResult<(i32, Py<PyAny>)> {
    let cfg = cli::load_config(&path).map_err(py_err)?;
    let result = py.detach(|| cli::run(&cfg));
    let code = cli::exit_code(&result);
    let (outcome, _) = result.map_err(py_err)?;
    Ok((code, json_to_py(py, &outcome.summary)?))
}

#[pymodule]
fn orthofield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFieldModel>()?;
    m.add_function(wrap_pyfunction!(verify_ortho_model, m)?)?;
    m.add_function(wrap_pyfunction!(verify_commuting_model, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(long_run_variance, m)?)?;
    m.add_function(wrap_pyfunction!(run_clt, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(gof_stats, m)?)?;
    m.add_function(wrap_pyfunction!(level_moment_series, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
