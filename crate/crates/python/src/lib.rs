//! Python bindings. Matrices cross the boundary as nested lists (rows of
//! time steps); unit indices are 0-based as in the Rust library.

use ndarray::{Array1, Array2};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use hawkes_core::inference::{self, InferenceConfig};
use hawkes_core::model::{self as core_model, HawkesModel, KernelSpec, SpikeData};
use hawkes_core::simulator::{self, SimConfig, StructureKind, StructureSpec};
use hawkes_core::Error;

create_exception!(hawkes_net, AssumptionError, PyException, "A stationarity or flow-bound assumption fails.");
create_exception!(hawkes_net, DegeneracyError, PyException, "The score or curvature matrix is singular.");

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        3 => AssumptionError::new_err(e.to_string()),
        4 => DegeneracyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix<T: Copy>(rows: Vec<Vec<T>>, what: &str) -> PyResult<Array2<T>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err(format!("{what} rows have unequal lengths")));
    }
    Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn nested<T: Copy>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Event rows as lists of ints; `Vec<u8>` would surface as `bytes`.
fn event_rows(s: &SpikeData) -> Vec<Vec<u32>> {
    s.events().rows().into_iter().map(|r| r.iter().map(|&v| u32::from(v)).collect()).collect()
}

fn spikes(events: Vec<Vec<u8>>) -> PyResult<SpikeData> {
    SpikeData::new(matrix(events, "events")?).map_err(py_err)
}

#[pyclass(name = "HawkesModel", frozen)]
struct PyModel {
    inner: HawkesModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (mu, theta, decay_rate = 1.0))]
    fn new(mu: Vec<f64>, theta: Vec<Vec<f64>>, decay_rate: f64) -> PyResult<Self> {
        let inner = HawkesModel::new(Array1::from(mu), matrix(theta, "theta")?, KernelSpec::exponential(decay_rate))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.units()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu.to_vec()
    }

    #[getter]
    fn theta(&self) -> Vec<Vec<f64>> {
        nested(&self.inner.theta)
    }

    #[getter]
    fn decay_rate(&self) -> f64 {
        self.inner.kernel.decay_rate
    }

    fn __repr__(&self) -> String {
        let edges = self.inner.theta.iter().filter(|&&v| v != 0.0).count();
        format!("HawkesModel(p={}, edges={edges}, decay_rate={})", self.p(), self.decay_rate())
    }
}

#[pyclass(name = "AssumptionReport", frozen, get_all)]
struct PyAssumptionReport {
    omega: Vec<Vec<f64>>,
    gamma_omega: f64,
    rho_r: f64,
    rho_c: f64,
    intensity_bounds: Option<(f64, f64)>,
    pass_flags: Vec<bool>,
}

#[pyclass(name = "ScoreTestResult", frozen, get_all)]
struct PyScoreTest {
    row: usize,
    cols: Vec<usize>,
    s_hat: Vec<f64>,
    upsilon_hat: Vec<Vec<f64>>,
    u_hat: f64,
    dof: usize,
    p_value: f64,
    critical_value: f64,
    reject: bool,
    alpha: f64,
    ridge_jitter: f64,
}

#[pyclass(name = "ConfidenceRegion", frozen, get_all)]
struct PyConfidenceRegion {
    row: usize,
    cols: Vec<usize>,
    b_hat: Vec<f64>,
    beta_hat: Vec<f64>,
    upsilon_hat: Vec<Vec<f64>>,
    level: f64,
    region_radius: f64,
    interval: Option<(f64, f64)>,
}

#[pyfunction]
#[pyo3(signature = (kind, p, beta_scale = 0.3, mu_scale = 0.2, block_size = 2, density = 0.02, seed = 0, decay_rate = 1.0))]
#[allow(clippy::too_many_arguments)]
fn make_structure(
    kind: &str,
    p: usize,
    beta_scale: f64,
    mu_scale: f64,
    block_size: usize,
    density: f64,
    seed: u64,
    decay_rate: f64,
) -> PyResult<PyModel> {
    let kind = match kind {
        "chain" => StructureKind::Chain,
        "block" => StructureKind::Block,
        "random" => StructureKind::Random,
        other => return Err(PyValueError::new_err(format!("unknown structure {other:?}"))),
    };
    let spec = StructureSpec {
        beta_scale,
        mu_scale,
        block_size,
        density,
        seed,
        decay_rate,
        ..StructureSpec::new(kind, p)
    };
    Ok(PyModel {
        inner: simulator::make_structure(&spec).map_err(py_err)?,
    })
}

/// Returns `(events, clip_count)`.
#[pyfunction]
#[pyo3(signature = (model, steps, seed, burn_in = 500))]
fn simulate(py: Python<'_>, model: &PyModel, steps: usize, seed: u64, burn_in: usize) -> PyResult<(Vec<Vec<u32>>, usize)> {
    let cfg = SimConfig {
        burn_in,
        ..SimConfig::new(steps, seed)
    };
    let (s, state) = py.detach(|| simulator::simulate(&model.inner, &cfg)).map_err(py_err)?;
    Ok((event_rows(&s), state.clip_count))
}

#[pyfunction]
fn permute_trains(events: Vec<Vec<u8>>, seed: u64) -> PyResult<Vec<Vec<u32>>> {
    Ok(event_rows(&simulator::permute_trains(&spikes(events)?, seed)))
}

#[pyfunction]
#[pyo3(signature = (events, decay_rate = 1.0))]
fn integrated_process(events: Vec<Vec<u8>>, decay_rate: f64) -> PyResult<Vec<Vec<f64>>> {
    let kernel = KernelSpec::exponential(decay_rate);
    kernel.validate().map_err(py_err)?;
    Ok(nested(&core_model::integrated_process(&spikes(events)?, &kernel)))
}

#[pyfunction]
#[pyo3(signature = (model, events = None))]
fn check_assumptions(model: &PyModel, events: Option<Vec<Vec<u8>>>) -> PyResult<PyAssumptionReport> {
    let probe = events.map(spikes).transpose()?;
    let r = core_model::check_assumptions(&model.inner, probe.as_ref()).map_err(py_err)?;
    Ok(PyAssumptionReport {
        omega: nested(&r.omega),
        gamma_omega: r.gamma_omega,
        rho_r: r.rho_r,
        rho_c: r.rho_c,
        intensity_bounds: r.intensity_bounds,
        pass_flags: r.pass_flags.to_vec(),
    })
}

struct Prepared {
    spikes: SpikeData,
    x: Array2<f64>,
    fit: inference::NuisanceFit,
}

fn prepare(events: Vec<Vec<u8>>, row: usize, cols: &[usize], sigma_floor: f64, decay_rate: f64) -> PyResult<Prepared> {
    let spikes = spikes(events)?;
    let kernel = KernelSpec::exponential(decay_rate);
    kernel.validate().map_err(py_err)?;
    let cfg = InferenceConfig {
        sigma_floor,
        ..InferenceConfig::default()
    };
    let x = core_model::integrated_process(&spikes, &kernel);
    let fit = inference::fit_nuisance(&spikes, &x, row, cols, &cfg).map_err(py_err)?;
    Ok(Prepared { spikes, x, fit })
}

#[pyfunction]
#[pyo3(signature = (events, row, cols, alpha = 0.05, sigma_floor = 1e-4, decay_rate = 1.0))]
fn score_test(
    py: Python<'_>,
    events: Vec<Vec<u8>>,
    row: usize,
    cols: Vec<usize>,
    alpha: f64,
    sigma_floor: f64,
    decay_rate: f64,
) -> PyResult<PyScoreTest> {
    let r = py
        .detach(|| {
            let p = prepare(events, row, &cols, sigma_floor, decay_rate)?;
            inference::score_test(&p.fit, &p.spikes, &p.x, alpha).map_err(py_err)
        })?;
    Ok(PyScoreTest {
        row: r.row,
        cols: r.cols,
        s_hat: r.s_hat,
        upsilon_hat: r.upsilon_hat,
        u_hat: r.u_hat,
        dof: r.dof,
        p_value: r.p_value,
        critical_value: r.critical_value,
        reject: r.reject,
        alpha: r.alpha,
        ridge_jitter: r.diagnostics.ridge_jitter,
    })
}

#[pyfunction]
#[pyo3(signature = (events, row, cols, alpha = 0.05, sigma_floor = 1e-4, decay_rate = 1.0))]
fn one_step_ci(
    py: Python<'_>,
    events: Vec<Vec<u8>>,
    row: usize,
    cols: Vec<usize>,
    alpha: f64,
    sigma_floor: f64,
    decay_rate: f64,
) -> PyResult<PyConfidenceRegion> {
    let r = py
        .detach(|| {
            let p = prepare(events, row, &cols, sigma_floor, decay_rate)?;
            inference::one_step_ci(&p.fit, &p.spikes, &p.x, alpha).map_err(py_err)
        })?;
    Ok(PyConfidenceRegion {
        row: r.row,
        cols: r.cols,
        b_hat: r.b_hat,
        beta_hat: r.beta_hat,
        upsilon_hat: r.upsilon_hat,
        level: r.level,
        region_radius: r.region_radius,
        interval: r.interval,
    })
}

#[pyfunction]
fn chi2_cdf(x: f64, dof: usize) -> PyResult<f64> {
    inference::chi2_cdf(x, dof).map_err(py_err)
}

#[pyfunction]
fn chi2_quantile(q: f64, dof: usize) -> PyResult<f64> {
    inference::chi2_quantile(q, dof).map_err(py_err)
}

#[pyfunction]
fn noncentral_chi2_cdf(x: f64, dof: usize, delta2: f64) -> PyResult<f64> {
    inference::noncentral_chi2_cdf(x, dof, delta2).map_err(py_err)
}

#[pymodule]
fn hawkes_net(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyAssumptionReport>()?;
    m.add_class::<PyScoreTest>()?;
    m.add_class::<PyConfidenceRegion>()?;
    m.add("AssumptionError", m.py().get_type::<AssumptionError>())?;
    m.add("DegeneracyError", m.py().get_type::<DegeneracyError>())?;
    m.add_function(wrap_pyfunction!(make_structure, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(permute_trains, m)?)?;
    m.add_function(wrap_pyfunction!(integrated_process, m)?)?;
    m.add_function(wrap_pyfunction!(check_assumptions, m)?)?;
    m.add_function(wrap_pyfunction!(score_test, m)?)?;
    m.add_function(wrap_pyfunction!(one_step_ci, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(noncentral_chi2_cdf, m)?)?;
    Ok(())
}
