//! Python bindings: margins, case validation and the CLI entry point.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use secmargin::cli::{resolve_case, Settings};
use secmargin::dynmodels::{zip_power as core_zip_power, ZipLoadParams};
use secmargin::margins::{self, MarginResult};
use secmargin::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } | Error::Initialization(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<'py>(py: Python<'py>, r: &MarginResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("margin_mw", r.margin_mw)?;
    d.set_item("method", r.method.as_str())?;
    d.set_item("contingency", &r.contingency)?;
    d.set_item("limiting_reason", r.limiting_reason.clone())?;
    d.set_item("monitored", r.monitored.clone())?;
    d.set_item("base_load_mw", r.base_load_mw)?;
    d.set_item("warnings", r.warnings.clone())?;
    let levels: Vec<(f64, bool, &str, Vec<f64>)> = r
        .levels
        .iter()
        .map(|l| {
            (
                l.stress_mw,
                l.verdict.stable,
                l.verdict.reason.as_str(),
                l.voltages.clone(),
            )
        })
        .collect();
    d.set_item("levels", levels)?;
    Ok(d)
}

fn settings(fine_step: f64, t_end: f64) -> Settings {
    Settings {
        fine_step,
        t_end,
        ..Settings::default()
    }
}

/// Raise if the case (file path or `builtin:<name>`) is invalid.
#[pyfunction]
fn validate_case(case: &str) -> PyResult<()> {
    resolve_case(case).and_then(|c| c.validate()).map_err(py_err)
}

/// Post-contingency loadability limit as a dict.
#[pyfunction]
#[pyo3(signature = (case, contingency, fine_step = 1.0, t_end = 1000.0))]
fn compute_pcll<'py>(
    py: Python<'py>,
    case: &str,
    contingency: &str,
    fine_step: f64,
    t_end: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = resolve_case(case).map_err(py_err)?;
    let s = settings(fine_step, t_end);
    let r = py
        .detach(|| {
            let cont = c.contingency(contingency)?;
            margins::compute_pcll(&c, cont, &s.schedule(&c)?, &s.criterion()?)
        })
        .map_err(py_err)?;
    to_dict(py, &r)
}

/// Secure operating limit as a dict; linear scan unless `binary_search`.
#[pyfunction]
#[pyo3(signature = (case, contingency, fine_step = 1.0, t_end = 1000.0, binary_search = false, tol = 1.0, hi = 100.0))]
#[allow(clippy::too_many_arguments)]
fn compute_sol<'py>(
    py: Python<'py>,
    case: &str,
    contingency: &str,
    fine_step: f64,
    t_end: f64,
    binary_search: bool,
    tol: f64,
    hi: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = resolve_case(case).map_err(py_err)?;
    let s = settings(fine_step, t_end);
    let r = py
        .detach(|| {
            let cont = c.contingency(contingency)?;
            let (schedule, criterion) = (s.schedule(&c)?, s.criterion()?);
            if binary_search {
                margins::binary_search_sol(&c, cont, 0.0, hi, tol, &schedule, &criterion)
            } else {
                margins::compute_sol(&c, cont, &schedule, &criterion)
            }
        })
        .map_err(py_err)?;
    to_dict(py, &r)
}

/// ZIP load consumption (MW, Mvar) at voltage `v`.
#[pyfunction]
fn zip_power(p0_mw: f64, q0_mvar: f64, p_shares: [f64; 3], q_shares: [f64; 3], v: f64) -> PyResult<(f64, f64)> {
    let p = ZipLoadParams::new(p0_mw, q0_mvar, p_shares, q_shares);
    let bad = p.violations();
    if !bad.is_empty() {
        return Err(PyValueError::new_err(bad.join("; ")));
    }
    Ok(core_zip_power(&p, v))
}

/// Run the command-line front end with `args` (without the program name);
/// returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("secmargin".to_string()).chain(args).collect();
    py.detach(|| secmargin::cli::run(argv))
}

#[pymodule(name = "secmargin")]
fn secmargin_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_case, m)?)?;
    m.add_function(wrap_pyfunction!(compute_pcll, m)?)?;
    m.add_function(wrap_pyfunction!(compute_sol, m)?)?;
    m.add_function(wrap_pyfunction!(zip_power, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
