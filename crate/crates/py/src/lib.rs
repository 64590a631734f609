//! Python bindings over the core crate: scalar helpers (decade rounding,
//! percentiles, beta2 suggestion), magnitude histograms, a stateful
//! `Optimizer` class, and JSON-in/JSON-out drivers for full training and
//! eps-estimation runs.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use optscope_core::{
    self as core, HyperParams, LogMagnitudeHistogram, OptimizerState, Rule, RunConfig, Tensor,
};

fn py_err(e: core::Error) -> PyErr {
    use core::Error as E;
    match &e {
        E::Contract(_) | E::Config(_) | E::Format(_) | E::Consistency(_) => {
            PyValueError::new_err(e.to_string())
        }
        E::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Round a positive value to the nearest power of ten (ties away from zero).
#[pyfunction]
fn round_pow10(x: f64) -> PyResult<f64> {
    core::round_pow10(x).map_err(py_err)
}

/// Smallest beta2 whose averaging window spans one epoch of `batches_per_epoch`
/// steps: 1 - 1/N.
#[pyfunction]
fn suggest_beta2(batches_per_epoch: usize) -> PyResult<f64> {
    core::suggest_beta2(batches_per_epoch).map_err(py_err)
}

/// Nearest-rank percentile over the positive values only; p in (0, 100).
#[pyfunction]
fn percentile(values: Vec<f64>, p: f64) -> PyResult<f64> {
    core::percentile(&values, p).map_err(py_err)
}

/// Fraction of values strictly greater than eps (zeros stay in the
/// denominator).
#[pyfunction]
fn fraction_above(values: Vec<f64>, eps: f64) -> PyResult<f64> {
    core::fraction_above(&values, eps).map_err(py_err)
}

/// Log-spaced magnitude histogram of the given values, as a dict with
/// `bin_edges`, `counts`, `underflow`, `overflow`, `zeros`, and `total`.
#[pyfunction]
fn histogram(py: Python<'_>, values: Vec<f64>) -> PyResult<Py<PyDict>> {
    let h = LogMagnitudeHistogram::from_values(&values).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("total", h.total())?;
    d.set_item("bin_edges", h.bin_edges)?;
    d.set_item("counts", h.counts)?;
    d.set_item("underflow", h.underflow)?;
    d.set_item("overflow", h.overflow)?;
    d.set_item("zeros", h.zeros)?;
    Ok(d.unbind())
}

/// Names of every supported update rule.
#[pyfunction]
fn rules() -> Vec<String> {
    Rule::ALL.iter().map(|r| r.to_string()).collect()
}

fn hp_from_kwargs(
    alpha: Option<f64>,
    eps: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    beta3: Option<f64>,
    momentum: Option<f64>,
    dampening: Option<f64>,
    weight_decay: Option<f64>,
) -> PyResult<HyperParams> {
    let mut hp = HyperParams::default();
    if let Some(v) = alpha {
        hp.alpha = v;
    }
    if let Some(v) = eps {
        hp.eps = v;
    }
    if let Some(v) = beta1 {
        hp.beta1 = v;
    }
    if let Some(v) = beta2 {
        hp.beta2 = v;
    }
    if let Some(v) = beta3 {
        hp.beta3 = v;
    }
    if let Some(v) = momentum {
        hp.momentum = v;
    }
    if let Some(v) = dampening {
        hp.dampening = v;
    }
    if let Some(v) = weight_decay {
        hp.weight_decay = v;
    }
    hp.validate().map_err(py_err)?;
    Ok(hp)
}

/// One update rule plus its state buffers, stepping flat per-variable value
/// lists. Variables are fixed at construction by their shapes.
#[pyclass]
struct Optimizer {
    state: OptimizerState,
    shapes: Vec<Vec<usize>>,
}

impl Optimizer {
    fn tensors(&self, flats: Vec<Vec<f64>>, what: &str) -> PyResult<Vec<Tensor>> {
        if flats.len() != self.shapes.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} {what} lists, got {}",
                self.shapes.len(),
                flats.len()
            )));
        }
        self.shapes
            .iter()
            .zip(flats)
            .map(|(shape, flat)| Tensor::new(shape, flat).map_err(py_err))
            .collect()
    }
}

#[pymethods]
impl Optimizer {
    #[new]
    #[pyo3(signature = (rule, shapes, *, names=None, alpha=None, eps=None, beta1=None,
                        beta2=None, beta3=None, momentum=None, dampening=None,
                        weight_decay=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        rule: &str,
        shapes: Vec<Vec<usize>>,
        names: Option<Vec<String>>,
        alpha: Option<f64>,
        eps: Option<f64>,
        beta1: Option<f64>,
        beta2: Option<f64>,
        beta3: Option<f64>,
        momentum: Option<f64>,
        dampening: Option<f64>,
        weight_decay: Option<f64>,
    ) -> PyResult<Self> {
        let rule: Rule = rule.parse().map_err(py_err)?;
        let hp = hp_from_kwargs(
            alpha,
            eps,
            beta1,
            beta2,
            beta3,
            momentum,
            dampening,
            weight_decay,
        )?;
        let params: Vec<Tensor> = shapes
            .iter()
            .map(|s| Tensor::new(s, vec![0.0; s.iter().product()]).map_err(py_err))
            .collect::<PyResult<_>>()?;
        let mut state = OptimizerState::new(rule, &params, hp).map_err(py_err)?;
        if let Some(names) = names {
            state.set_names(&names).map_err(py_err)?;
        }
        Ok(Optimizer { state, shapes })
    }

    /// Apply one update: takes current parameter values and gradients (flat,
    /// one list per variable, in construction order) and returns the updated
    /// values.
    fn step(&mut self, params: Vec<Vec<f64>>, grads: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let mut ps = self.tensors(params, "parameter")?;
        let gs = self.tensors(grads, "gradient")?;
        self.state.step(&mut ps, &gs).map_err(py_err)?;
        Ok(ps.iter().map(|t| t.data().to_vec()).collect())
    }

    #[getter]
    fn t(&self) -> u64 {
        self.state.t()
    }

    #[getter]
    fn rule(&self) -> String {
        self.state.rule().to_string()
    }

    #[getter]
    fn variable_names(&self) -> Vec<String> {
        self.state.variable_names().to_vec()
    }

    /// The active hyperparameters as a dict.
    fn hyperparams(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        let hp = self.state.hyperparams();
        let d = PyDict::new(py);
        d.set_item("alpha", hp.alpha)?;
        d.set_item("eps", hp.eps)?;
        d.set_item("beta1", hp.beta1)?;
        d.set_item("beta2", hp.beta2)?;
        d.set_item("beta3", hp.beta3)?;
        d.set_item("momentum", hp.momentum)?;
        d.set_item("dampening", hp.dampening)?;
        d.set_item("weight_decay", hp.weight_decay)?;
        Ok(d.unbind())
    }

    /// Adaptive-denominator magnitudes after the latest step, as a dict
    /// mapping variable name to a flat list. Errors before the first step
    /// and for rules without an adaptive denominator.
    fn magnitudes(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        let snaps = self.state.magnitude_snapshots(0).map_err(py_err)?;
        let d = PyDict::new(py);
        for snap in snaps {
            d.set_item(snap.variable_id, snap.values)?;
        }
        Ok(d.unbind())
    }

    /// Realized per-coordinate learning rate after the latest step (flat, one
    /// list per variable).
    fn effective_lr(&self) -> PyResult<Vec<Vec<f64>>> {
        let lrs = self.state.effective_lr().map_err(py_err)?;
        Ok(lrs.iter().map(|t| t.data().to_vec()).collect())
    }
}

fn parse_config(config_json: &str) -> PyResult<RunConfig> {
    let config: RunConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("config error: {e}")))?;
    config.validate().map_err(py_err)?;
    Ok(config)
}

/// Run a full training job from a config JSON string and return the run
/// record as JSON. Writes artifacts only if the config names an `out_dir`.
#[pyfunction]
fn train(config_json: &str) -> PyResult<String> {
    let config = parse_config(config_json)?;
    let record = core::train_run(&config).map_err(py_err)?;
    serde_json::to_string_pretty(&record).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Probe one epoch from a config JSON string and return the eps-range
/// estimation report as JSON.
#[pyfunction]
fn estimate_eps(config_json: &str) -> PyResult<String> {
    let config = parse_config(config_json)?;
    let report = core::estimate_run(&config).map_err(py_err)?;
    serde_json::to_string_pretty(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn optscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(round_pow10, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_beta2, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(fraction_above, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(rules, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_eps, m)?)?;
    m.add_class::<Optimizer>()?;
    Ok(())
}
