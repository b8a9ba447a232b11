//! Python bindings: rules, acquisition functions, the forest surrogate, the
//! hedge portfolio, searches and reports.

use std::path::PathBuf;

use mushroom_core::acquisition::{self, Acquisition, HedgeState};
use mushroom_core::cli::{self, build_report};
use mushroom_core::dataset::{dataset_dir, verify_dir, Dataset, DatasetId};
use mushroom_core::net::{NetConfig, Weights};
use mushroom_core::plasticity::{RuleId, RuleParams, SynapticInputs};
use mushroom_core::search::{run_search, EvaluationLog, SearchSettings, SyntheticObjective};
use mushroom_core::space::{Configuration, SearchSpaceDef};
use mushroom_core::surrogate::{ForestModel, ForestParams};
use mushroom_core::trainer::{evaluate_config, PreparedData, TrainProtocol};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(mushroom, MushroomError, PyException);

fn err(e: mushroom_core::Error) -> PyErr {
    MushroomError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    MushroomError::new_err(e.to_string())
}

fn rule(name: &str) -> PyResult<RuleId> {
    name.parse::<RuleId>().map_err(err)
}

fn acquisition_named(name: &str) -> PyResult<Acquisition> {
    Acquisition::ALL
        .into_iter()
        .find(|a| a.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            MushroomError::new_err(format!(
                "unknown acquisition {name:?}; expected EI, PI or LCB"
            ))
        })
}

/// Serialize through the Python `json` module so callers get plain dicts.
fn to_python<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_python<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(json_err)
}

#[pyfunction]
fn rule_names() -> Vec<&'static str> {
    RuleId::ALL.iter().map(|r| r.name()).collect()
}

/// One application of `rule` to the weight matrix `w` (rows = hidden units).
#[pyfunction]
#[pyo3(signature = (rule_name, x_e, x_o, x_m, w, alpha, beta1=0.0, beta2=0.0, beta3=0.0))]
#[allow(clippy::too_many_arguments)]
fn apply_rule(
    rule_name: &str,
    x_e: Vec<f64>,
    x_o: Vec<f64>,
    x_m: Vec<f64>,
    w: Vec<Vec<f64>>,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    beta3: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let r = rule(rule_name)?;
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if w.iter().any(|row| row.len() != cols) {
        return Err(MushroomError::new_err("weight rows differ in length"));
    }
    let weights = Weights::from_vec(rows, cols, w.concat()).map_err(err)?;
    let params = RuleParams::new(alpha, beta1, beta2, beta3);
    let out = mushroom_core::plasticity::apply_rule(
        r,
        &SynapticInputs::new(&x_e, &x_o, &x_m),
        &params,
        &weights,
    )
    .map_err(err)?;
    Ok(out
        .as_slice()
        .chunks(cols.max(1))
        .map(<[f64]>::to_vec)
        .collect())
}

#[pyfunction]
fn ei(mean: f64, spread: f64, f_best: f64) -> f64 {
    acquisition::ei(mean, spread, f_best)
}

#[pyfunction]
fn pi(mean: f64, spread: f64, f_best: f64) -> f64 {
    acquisition::pi(mean, spread, f_best)
}

#[pyfunction]
#[pyo3(signature = (mean, spread, kappa=1.96))]
fn lcb(mean: f64, spread: f64, kappa: f64) -> f64 {
    acquisition::lcb(mean, spread, kappa)
}

/// A uniformly random configuration from the default search space.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn random_config(py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    to_python(py, &SearchSpaceDef::default().random_config(&mut rng))
}

/// The 12-feature encoding of a configuration dict.
#[pyfunction]
fn encode_config(config: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
    let c: Configuration = from_python(config)?;
    let x = SearchSpaceDef::default().encode(&c).map_err(err)?;
    Ok(x.to_vec())
}

#[pyclass(name = "Forest", module = "mushroom")]
struct PyForest {
    inner: ForestModel,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    #[pyo3(signature = (xs, ys, n_trees=100, min_leaf=3, seed=0))]
    fn fit(
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
        n_trees: usize,
        min_leaf: usize,
        seed: u64,
    ) -> PyResult<Self> {
        if xs.len() != ys.len() {
            return Err(MushroomError::new_err(format!(
                "{} inputs but {} targets",
                xs.len(),
                ys.len()
            )));
        }
        let params = ForestParams {
            n_trees,
            min_leaf,
            ..ForestParams::default()
        };
        let records: Vec<(Vec<f64>, f64)> = xs.into_iter().zip(ys).collect();
        let inner = mushroom_core::surrogate::fit(&records, &params, seed).map_err(err)?;
        Ok(Self { inner })
    }

    /// `(mean, spread)` at `x`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predict(&x).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.trees().len()
    }
}

#[pyclass(name = "Hedge", module = "mushroom")]
struct PyHedge {
    inner: HedgeState,
}

#[pymethods]
impl PyHedge {
    #[new]
    #[pyo3(signature = (eta=1.0, seed=0))]
    fn new(eta: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: HedgeState::new(eta, seed).map_err(err)?,
        })
    }

    /// Probabilities in EI, PI, LCB order.
    fn probabilities(&self) -> [f64; 3] {
        self.inner.probabilities()
    }

    fn gains(&self) -> [f64; 3] {
        self.inner.gains()
    }

    fn select(&mut self) -> &'static str {
        acquisition::hedge_select(&mut self.inner).name()
    }

    fn update(&mut self, name: &str, reward: f64) -> PyResult<()> {
        acquisition::hedge_update(&mut self.inner, acquisition_named(name)?, reward).map_err(err)
    }
}

fn log_to_python(py: Python<'_>, log: &EvaluationLog) -> PyResult<Py<PyAny>> {
    to_python(py, &log.entries)
}

/// Search the cheap synthetic objective whose basin lies under `rule_name`.
/// Returns the log entries in completion order.
#[pyfunction]
#[pyo3(signature = (rule_name, budget=100, seed=0, workers=1, pool_size=10_000, n_init=None))]
fn synthetic_search(
    py: Python<'_>,
    rule_name: &str,
    budget: usize,
    seed: u64,
    workers: usize,
    pool_size: usize,
    n_init: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let objective = SyntheticObjective::new(rule(rule_name)?);
    let settings = SearchSettings {
        budget,
        seed,
        n_workers: workers,
        pool_size,
        n_init,
        record_wall_time: false,
        ..SearchSettings::default()
    };
    let log = py
        .detach(|| run_search(&SearchSpaceDef::default(), &objective, &settings))
        .map_err(err)?;
    log_to_python(py, &log)
}

/// Train and test one configuration on a dataset found under `data_dir`
/// (or the data-directory environment variable when omitted).
#[pyfunction]
#[pyo3(signature = (config, dataset="mnist", data_dir=None, n_train=20_000, seed=0))]
fn evaluate(
    py: Python<'_>,
    config: &Bound<'_, PyAny>,
    dataset: &str,
    data_dir: Option<PathBuf>,
    n_train: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let c: Configuration = from_python(config)?;
    SearchSpaceDef::default().check(&c).map_err(err)?;
    let id: DatasetId = dataset.parse().map_err(err)?;
    let protocol = TrainProtocol {
        n_train,
        train_seed: seed,
        ..TrainProtocol::default()
    };
    let record = py
        .detach(|| -> mushroom_core::Result<_> {
            let dir = dataset_dir(data_dir.as_deref(), id)?;
            verify_dir(&dir, id)?;
            let data = Dataset::load(&dir, id)?;
            let prepared = PreparedData::new(&data, NetConfig::default(), protocol.net_seed)?;
            Ok(evaluate_config(&c, &prepared, &protocol))
        })
        .map_err(err)?;
    to_python(py, &record)
}

/// Per-rule table and CSV for a JSONL search log given as text.
#[pyfunction]
fn report<'py>(py: Python<'py>, jsonl: &str) -> PyResult<Bound<'py, PyDict>> {
    let log = EvaluationLog::from_jsonl(jsonl).map_err(err)?;
    let r = build_report(&log).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("table", r.table)?;
    d.set_item("csv", r.csv)?;
    d.set_item("best_rule", r.best_rule.name())?;
    d.set_item("best_accuracy", r.best_accuracy)?;
    Ok(d)
}

/// Run the command-line interface in-process; returns `(exit_code, stdout)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<(i32, String)> {
    let mut out = Vec::new();
    let argv = std::iter::once("mushroom".to_string()).chain(args);
    let code = py.detach(|| cli::run(argv, &mut out)).map_err(err)?;
    Ok((code, String::from_utf8_lossy(&out).into_owned()))
}

#[pymodule]
fn mushroom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MushroomError", m.py().get_type::<MushroomError>())?;
    m.add_function(wrap_pyfunction!(rule_names, m)?)?;
    m.add_function(wrap_pyfunction!(apply_rule, m)?)?;
    m.add_function(wrap_pyfunction!(ei, m)?)?;
    m.add_function(wrap_pyfunction!(pi, m)?)?;
    m.add_function(wrap_pyfunction!(lcb, m)?)?;
    m.add_function(wrap_pyfunction!(random_config, m)?)?;
    m.add_function(wrap_pyfunction!(encode_config, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_search, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyHedge>()?;
    Ok(())
}
