use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use timeless::clock::{self, ClockModel, Kernel};
use timeless::experiments::{check_config, parse_config, run_experiment};
use timeless::measurement::{InteractionSchedule, WindowFunction};
use timeless::purified::{self, BornSeriesOptions};
use timeless::tensor::{COperator, CVector};

fn err(e: timeless::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn operator(rows: Vec<Vec<C64>>) -> PyResult<COperator> {
    COperator::from_rows(&rows).map_err(err)
}

fn state(entries: Vec<C64>) -> PyResult<CVector> {
    CVector::new(entries).map_err(err)
}

fn rows(op: &COperator) -> Vec<Vec<C64>> {
    (0..op.dim()).map(|r| (0..op.dim()).map(|c| op.get(r, c)).collect()).collect()
}

fn kernel(energy: Option<f64>) -> Kernel {
    energy.map_or(Kernel::Ideal, Kernel::Finite)
}

#[pyfunction]
fn sine_integral(x: f64) -> f64 {
    clock::sine_integral(x)
}

/// `f(t) = sin(Et)/(πt)`.
#[pyfunction]
fn overlap_kernel(energy: f64, t: f64) -> f64 {
    clock::overlap_kernel_f(energy, t)
}

/// `F(t) = 1/2 + Si(Et)/π`; the ideal step when `energy` is None.
#[pyfunction]
#[pyo3(signature = (t, energy=None))]
fn cumulative_kernel(t: f64, energy: Option<f64>) -> f64 {
    kernel(energy).cumulative(t)
}

#[pyclass(name = "Clock", frozen)]
struct PyClock(ClockModel);

#[pymethods]
impl PyClock {
    #[staticmethod]
    fn continuum(energy: f64) -> PyResult<Self> {
        ClockModel::continuum(energy).map(Self).map_err(err)
    }

    #[staticmethod]
    fn periodic(energy: f64, dim: usize) -> PyResult<Self> {
        ClockModel::periodic(energy, dim).map(Self).map_err(err)
    }

    #[staticmethod]
    fn discrete(energy: f64, dim: usize) -> PyResult<Self> {
        ClockModel::discrete(energy, dim).map(Self).map_err(err)
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.0.energy()
    }

    #[getter]
    fn dim(&self) -> Option<usize> {
        self.0.dim()
    }

    #[getter]
    fn period(&self) -> Option<f64> {
        self.0.period()
    }

    fn levels(&self) -> PyResult<Vec<f64>> {
        self.0.levels().map_err(err)
    }

    fn __repr__(&self) -> String {
        match self.0.dim() {
            Some(d) => format!("Clock({:?}, E={}, dim={d})", self.0.kind(), self.0.energy()),
            None => format!("Clock({:?}, E={})", self.0.kind(), self.0.energy()),
        }
    }
}

/// Sequential projective probability through the twirled (clock-conditioned) route.
#[pyfunction]
fn two_time_probability(
    clock: &PyClock,
    h_s: Vec<Vec<C64>>,
    psi0: Vec<C64>,
    first: Vec<Vec<C64>>,
    tau1: f64,
    second: Vec<Vec<C64>>,
    tau2: f64,
) -> PyResult<f64> {
    let p = timeless::twirled::two_time_probability_to(
        &clock.0,
        &operator(h_s)?,
        &state(psi0)?,
        &operator(first)?,
        tau1,
        &operator(second)?,
        tau2,
    )
    .map_err(err)?;
    Ok(p.probability)
}

/// `M(F) = 1 − 2iF K(2 + iK)⁻¹`.
#[pyfunction]
fn delta_kick(coupling: Vec<Vec<C64>>, fraction: f64) -> PyResult<Vec<Vec<C64>>> {
    let m = purified::delta_kick_closed_form(&operator(coupling)?, fraction).map_err(err)?;
    Ok(rows(&m))
}

/// Causal and acausal second-order coefficients for two copies of the window `[a, b)`.
#[pyfunction]
#[pyo3(signature = (window, tau1, tau2, t, energy=None))]
fn order_coefficients(window: (f64, f64), tau1: f64, tau2: f64, t: f64, energy: Option<f64>) -> PyResult<(C64, C64)> {
    let w = WindowFunction::indicator(window.0, window.1).map_err(err)?;
    let a = timeless::order::analyze(kernel(energy), &w, tau1, tau2, t).map_err(err)?;
    Ok((a.causal, a.acausal))
}

#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    inner: purified::Trajectory,
    #[pyo3(get)]
    orders_used: usize,
    #[pyo3(get)]
    converged: bool,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid().points()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<C64>> {
        self.inner.states().iter().map(|s| s.as_slice().to_vec()).collect()
    }

    fn norms(&self) -> Vec<f64> {
        self.inner.norms()
    }

    fn residual(&self) -> PyResult<f64> {
        purified::evolution_residual(&self.inner).map_err(err)
    }

    fn probability(&self, ancilla: usize, outcome: usize, t: f64) -> PyResult<f64> {
        purified::pm_probability(&self.inner, &[(ancilla, outcome)], t).map(|p| p.probability).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.grid().len()
    }
}

/// Born-series solution for one coupling `K` switched on over `[a, b)`.
#[pyfunction]
#[pyo3(signature = (energy, coupling, psi0, window, ancilla_dims=Vec::new()))]
fn solve_window(
    energy: f64,
    coupling: Vec<Vec<C64>>,
    psi0: Vec<C64>,
    window: (f64, f64),
    ancilla_dims: Vec<usize>,
) -> PyResult<PyTrajectory> {
    let psi0 = state(psi0)?;
    let coupling = operator(coupling)?;
    let schedule = InteractionSchedule::empty(psi0.dim(), ancilla_dims.clone())
        .and_then(|s| s.with_term(WindowFunction::indicator(window.0, window.1)?, 0.0, coupling))
        .map_err(err)?;
    let psi0 = purified::ready_state(&psi0, &ancilla_dims);
    let k = Kernel::Finite(energy);
    let grid = purified::solver_grid(k, &schedule, None).map_err(err)?;
    let (inner, report) = purified::born_series_solve(k, &schedule, &psi0, &grid, &BornSeriesOptions::default()).map_err(err)?;
    Ok(PyTrajectory { inner, orders_used: report.orders_used, converged: report.converged })
}

/// Diagnostics for a JSON config as `(path, reason)` pairs; empty when valid.
#[pyfunction]
fn validate_config(text: &str) -> Vec<(String, String)> {
    match parse_config(text) {
        Err(d) => vec![(d.path, d.reason)],
        Ok(cfg) => check_config(&cfg).into_iter().map(|d| (d.path, d.reason)).collect(),
    }
}

/// Run an experiment config and return the manifest as JSON.
#[pyfunction]
fn run(py: Python<'_>, text: &str) -> PyResult<String> {
    let cfg = parse_config(text).map_err(|d| PyValueError::new_err(d.to_string()))?;
    let manifest = py.detach(|| run_experiment(&cfg)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::to_string_pretty(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn timeless_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClock>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(sine_integral, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(cumulative_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(two_time_probability, m)?)?;
    m.add_function(wrap_pyfunction!(delta_kick, m)?)?;
    m.add_function(wrap_pyfunction!(order_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(solve_window, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
