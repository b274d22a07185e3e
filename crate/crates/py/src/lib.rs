//! Python bindings exposing the main types and operations: presets,
//! deterministic sampling, runs with reports and traces, fidelity
//! metrics, and the offline criterion replay.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use easycache::engine::{run_cached, run_full, step_speedup, RunConfig};
use easycache::error::Error;
use easycache::harness::execute_run;
use easycache::metrics;
use easycache::policy;
use easycache::presets::{preset, PRESET_NAMES};
use easycache::tensor::{l1_mean, NormStat, Tensor1D};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor(values: Vec<f64>) -> PyResult<Tensor1D> {
    Tensor1D::new(values).map_err(err)
}

fn grid_tensor(values: Vec<f64>, width: usize, height: usize) -> PyResult<Tensor1D> {
    Tensor1D::new_grid(values, width, height).map_err(err)
}

fn parse_config(config_json: &str) -> PyResult<RunConfig> {
    serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Names of the built-in anchor presets.
#[pyfunction]
fn presets() -> Vec<String> {
    PRESET_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Dimension of a preset's anchors.
#[pyfunction]
fn preset_dim(name: &str) -> PyResult<usize> {
    Ok(preset(name).map_err(err)?.dim())
}

/// Deterministic standard-normal sample.
#[pyfunction]
fn sample_initial(dim: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(easycache::fields::sample_initial(dim, seed)
        .map_err(err)?
        .values()
        .to_vec())
}

/// Mean absolute value.
#[pyfunction]
#[pyo3(name = "l1_mean")]
fn l1_mean_py(values: Vec<f64>) -> PyResult<f64> {
    Ok(l1_mean(&tensor(values)?).value())
}

/// Times s_0..s_T of the uniform schedule.
#[pyfunction]
fn uniform_schedule(steps: usize, delta_end: f64) -> PyResult<Vec<f64>> {
    Ok(easycache::schedule::Schedule::uniform(steps, delta_end)
        .map_err(err)?
        .times()
        .to_vec())
}

/// Estimated percent output change: 100 * k * dx_norm / v_prev_norm.
#[pyfunction]
fn local_stability_indicator(k: f64, dx_norm: f64, v_prev_norm: f64) -> f64 {
    policy::local_stability_indicator(k, NormStat(dx_norm), NormStat(v_prev_norm))
}

/// Reused steps of the accumulate-and-threshold criterion on a frozen
/// indicator trace.
#[pyfunction]
fn replay_skip_set(epsilon_trace: Vec<f64>, tau: f64, warmup: usize) -> Vec<usize> {
    policy::replay_skip_set(&epsilon_trace, tau, warmup)
        .into_iter()
        .collect()
}

/// PSNR in dB with MAX taken from the reference.
#[pyfunction]
fn psnr(reference: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    metrics::psnr(&tensor(reference)?, &tensor(test)?).map_err(err)
}

/// Mean local SSIM over 8x8 uniform windows on width x height grids.
#[pyfunction]
fn ssim(reference: Vec<f64>, test: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    metrics::ssim(
        &grid_tensor(reference, width, height)?,
        &grid_tensor(test, width, height)?,
    )
    .map_err(err)
}

/// Mean absolute error.
#[pyfunction]
fn mae(reference: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    metrics::mae(&tensor(reference)?, &tensor(test)?).map_err(err)
}

fn trace_rows<'py>(
    py: Python<'py>,
    trace: &easycache::TrajectoryTrace,
) -> PyResult<Bound<'py, PyList>> {
    let rows = PyList::empty(py);
    for row in &trace.rows {
        let d = PyDict::new(py);
        d.set_item("t", row.t)?;
        d.set_item("s", row.s)?;
        d.set_item(
            "decision",
            match row.action {
                policy::Action::FullCompute => "full",
                policy::Action::Reuse => "reuse",
            },
        )?;
        d.set_item("reason", row.reason.as_str())?;
        d.set_item("x_norm", row.x_norm)?;
        d.set_item("v_norm", row.v_norm)?;
        d.set_item("k", row.k)?;
        d.set_item("epsilon", row.epsilon)?;
        d.set_item("E", row.e_accum)?;
        d.set_item("approx", row.approx)?;
        rows.append(d)?;
    }
    Ok(rows)
}

/// Runs the configured policy (or the full reference when `cached` is
/// false) and returns the final sample, evaluation count, speedup, and
/// per-step trace.
#[pyfunction]
#[pyo3(signature = (config_json, cached = true))]
fn run<'py>(py: Python<'py>, config_json: &str, cached: bool) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config_json)?;
    let (x, trace) = if cached {
        run_cached(&config).map_err(err)?
    } else {
        run_full(&config).map_err(err)?
    };
    let out = PyDict::new(py);
    out.set_item("final", x.values().to_vec())?;
    out.set_item("eval_count", trace.eval_count)?;
    out.set_item("speedup", step_speedup(&trace))?;
    out.set_item("rows", trace_rows(py, &trace)?)?;
    Ok(out)
}

/// Runs cached and full under one config and returns the fidelity report.
#[pyfunction]
fn run_report<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config_json)?;
    let (report, trace) = execute_run(&config).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("run_id", report.run_id)?;
    out.set_item("eval_count", report.eval_count)?;
    out.set_item("speedup", report.step_speedup)?;
    out.set_item("psnr_db", report.fidelity.psnr_db)?;
    out.set_item("ssim", report.fidelity.ssim)?;
    out.set_item("mae", report.fidelity.mae)?;
    out.set_item("refreshes_after_reuse", report.refreshes_after_reuse)?;
    out.set_item("rows", trace_rows(py, &trace)?)?;
    Ok(out)
}

#[pymodule]
fn easycache_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_dim, m)?)?;
    m.add_function(wrap_pyfunction!(sample_initial, m)?)?;
    m.add_function(wrap_pyfunction!(l1_mean_py, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(local_stability_indicator, m)?)?;
    m.add_function(wrap_pyfunction!(replay_skip_set, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_report, m)?)?;
    Ok(())
}
