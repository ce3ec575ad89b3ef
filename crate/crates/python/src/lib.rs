//! Python bindings: the search lattice, reward, accountant, clipping and
//! the four search strategies, driven either by a Python evaluator or by a
//! full JSON run configuration.

use std::path::PathBuf;
use std::sync::Mutex;

use dptune::cli::{self, RunConfig};
use dptune::objective::{TrialCost, FAILED_REWARD};
use dptune::optimizers::StrategySettings;
use dptune::{
    Budget, Dimension, Evaluation, HyperParams, MechanismParams, RewardWeights, StrategyConfig, TrialRecord, TrialStatus,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// The `(sigma, eta)` lattice. Each dimension is `(lo, hi, step)`; eta is
/// log-scaled with `step` in decades.
#[pyclass(name = "SearchSpace", module = "dptune", frozen, from_py_object)]
#[derive(Clone)]
struct PySearchSpace {
    inner: dptune::SearchSpace,
}

#[pymethods]
impl PySearchSpace {
    #[new]
    #[pyo3(signature = (sigma=None, eta=None))]
    fn new(sigma: Option<(f64, f64, f64)>, eta: Option<(f64, f64, f64)>) -> PyResult<Self> {
        let d = dptune::SearchSpace::default();
        let sigma = match sigma {
            Some((lo, hi, step)) => Dimension::linear("sigma", lo, hi, step).map_err(value_err)?,
            None => d.sigma,
        };
        let eta = match eta {
            Some((lo, hi, step)) => Dimension::log("eta", lo, hi, step).map_err(value_err)?,
            None => d.eta,
        };
        Ok(PySearchSpace {
            inner: dptune::SearchSpace::new(sigma, eta).map_err(value_err)?,
        })
    }

    /// `(n_sigma, n_eta)`.
    fn shape(&self) -> (usize, usize) {
        let [a, b] = self.inner.shape();
        (a, b)
    }

    fn point_at(&self, sigma_index: usize, eta_index: usize) -> PyResult<(f64, f64)> {
        let [a, b] = self.inner.shape();
        if sigma_index >= a || eta_index >= b {
            return Err(value_err(format!("index ({sigma_index}, {eta_index}) outside shape ({a}, {b})")));
        }
        let p = self.inner.point_at(sigma_index, eta_index);
        Ok((p.sigma, p.eta))
    }

    /// Lattice indices of the nearest point.
    fn index_of(&self, sigma: f64, eta: f64) -> PyResult<(usize, usize)> {
        let [a, b] = self.inner.index_of(&HyperParams::new(sigma, eta).map_err(value_err)?);
        Ok((a, b))
    }

    fn quantize(&self, sigma: f64, eta: f64) -> PyResult<(f64, f64)> {
        let p = self.inner.quantize(&HyperParams::new(sigma, eta).map_err(value_err)?);
        Ok((p.sigma, p.eta))
    }

    fn lattice(&self) -> Vec<(f64, f64)> {
        self.inner.lattice().iter().map(|p| (p.sigma, p.eta)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.cardinality()
    }

    fn __repr__(&self) -> String {
        let [a, b] = self.inner.shape();
        format!("SearchSpace(shape=({a}, {b}))")
    }
}

/// `alpha_u * exp(-val_loss) + alpha_p * exp(-epsilon)`.
#[pyfunction]
#[pyo3(signature = (val_loss, epsilon, alpha_u=0.5, alpha_p=0.5))]
fn reward(val_loss: f64, epsilon: f64, alpha_u: f64, alpha_p: f64) -> PyResult<f64> {
    let w = RewardWeights::new(alpha_u, alpha_p).map_err(value_err)?;
    dptune::reward(val_loss, epsilon, &w).map_err(value_err)
}

/// RDP of one subsampled Gaussian step at an integer order, in nats.
#[pyfunction]
fn rdp_step(q: f64, sigma: f64, order: u32) -> PyResult<f64> {
    MechanismParams::new(q, sigma, 1).map_err(value_err)?;
    if order < 2 {
        return Err(value_err("order must be >= 2"));
    }
    Ok(dptune::rdp_step(q, sigma, order))
}

/// `(epsilon, best_order)` after `steps` steps; the order is `None` when
/// the run is not private.
#[pyfunction]
#[pyo3(signature = (q, sigma, steps, delta=1e-5))]
fn epsilon_of_run(q: f64, sigma: f64, steps: u64, delta: f64) -> PyResult<(f64, Option<u32>)> {
    let params = MechanismParams::new(q, sigma, steps).map_err(value_err)?;
    let spend = dptune::epsilon_of_run(&params, delta).map_err(value_err)?;
    Ok((spend.epsilon, spend.order))
}

/// Scales `grad` to L2 norm at most `clip_norm`.
#[pyfunction]
fn clip(grad: Vec<f64>, clip_norm: f64) -> PyResult<Vec<f64>> {
    if !(clip_norm > 0.0) {
        return Err(value_err("clip_norm must be > 0"));
    }
    Ok(dptune::dpsgd::clip(&grad, clip_norm))
}

fn record_dict<'py>(py: Python<'py>, r: &TrialRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("trial_index", r.trial_index)?;
    d.set_item("strategy", &r.strategy)?;
    d.set_item("seed", r.seed)?;
    d.set_item("sigma", r.hyperparams.sigma)?;
    d.set_item("eta", r.hyperparams.eta)?;
    d.set_item("val_loss", r.val_loss)?;
    d.set_item("val_accuracy", r.val_accuracy)?;
    d.set_item("epsilon", r.epsilon)?;
    d.set_item("reward", r.reward)?;
    d.set_item("status", r.status.as_str())?;
    d.set_item("sample_visits", r.cost.sample_visits)?;
    d.set_item("wall_seconds", r.cost.wall_seconds)?;
    Ok(d)
}

/// Runs one strategy against a Python evaluator.
///
/// `evaluator(sigma, eta, trial_index)` returns `(val_loss, epsilon)`; a
/// non-finite component marks the trial failed. `settings` is the JSON
/// text of the per-strategy settings block. Returns the trial records as
/// dicts, in trial order.
#[pyfunction]
#[pyo3(signature = (strategy, evaluator, space=None, max_trials=100, seed=0, alpha_u=0.5, alpha_p=0.5, settings=None))]
#[allow(clippy::too_many_arguments)]
fn run_search<'py>(
    py: Python<'py>,
    strategy: &str,
    evaluator: Py<PyAny>,
    space: Option<PySearchSpace>,
    max_trials: usize,
    seed: u64,
    alpha_u: f64,
    alpha_p: f64,
    settings: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let weights = RewardWeights::new(alpha_u, alpha_p).map_err(value_err)?;
    let settings: StrategySettings = match settings {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => StrategySettings::default(),
    };
    let config = StrategyConfig::from_name(strategy, &settings).map_err(value_err)?;
    let space = space.map(|s| s.inner).unwrap_or_default();
    // The first Python exception raised by the evaluator, re-raised as is.
    let raised: Mutex<Option<PyErr>> = Mutex::new(None);

    let eval = |hp: &HyperParams, trial_index: usize| -> dptune::Result<Evaluation> {
        let out = Python::attach(|py| {
            evaluator
                .call1(py, (hp.sigma, hp.eta, trial_index))
                .and_then(|v| v.extract::<(f64, f64)>(py))
        });
        let (val_loss, epsilon) = out.map_err(|e| {
            let msg = e.to_string();
            raised.lock().unwrap().get_or_insert(e);
            dptune::Error::InvalidArgument(format!("evaluator raised: {msg}"))
        })?;
        let (status, reward) = match dptune::reward(val_loss, epsilon, &weights) {
            Ok(r) => (TrialStatus::Ok, r),
            Err(_) => (TrialStatus::Failed, FAILED_REWARD),
        };
        Ok(Evaluation {
            record: TrialRecord {
                trial_index,
                strategy: String::new(),
                seed: seed.wrapping_add(trial_index as u64),
                hyperparams: *hp,
                val_loss,
                val_accuracy: f64::NAN,
                epsilon,
                reward,
                status,
                cost: TrialCost::default(),
            },
            visits: None,
        })
    };
    let result = dptune::run_strategy(&config, &space, &Budget::trials(max_trials), &eval, seed, 1);
    if let Some(e) = raised.into_inner().unwrap() {
        return Err(e);
    }
    let result = result.map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    result.records.iter().map(|r| record_dict(py, r)).collect()
}

/// Runs a JSON configuration end to end, like `dptune run`.
///
/// Returns `{"run_id", "best", "records", "out_dir"}`; the ledger is
/// exported only when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=1, out_dir=None))]
fn run_config<'py>(
    py: Python<'py>,
    config_json: &str,
    jobs: usize,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::from_json(config_json).map_err(value_err)?;
    let ledger = py
        .detach(|| cli::execute(&cfg, jobs))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("run_id", &ledger.run_id)?;
    d.set_item("best", ledger.best_index())?;
    let records = ledger.records.iter().map(|r| record_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    d.set_item("records", records)?;
    let written = match out_dir {
        Some(root) => {
            let dir = root.join(&ledger.run_id);
            ledger.export(&dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            Some(dir)
        }
        None => None,
    };
    d.set_item("out_dir", written)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "dptune")]
fn dptune_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySearchSpace>()?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_step, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_of_run, m)?)?;
    m.add_function(wrap_pyfunction!(clip, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
