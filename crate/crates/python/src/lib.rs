//! Python bindings. Structured values (actions, observations, step results)
//! cross the boundary as plain dicts with the same shape as their JSON form.

use std::path::PathBuf;
use std::sync::Arc;

use gridgym::agents::agent_by_name;
use gridgym::chronics::{write_chronics, SynthProfile};
use gridgym::{
    default_topology, load_chronics, reduce_to_buses, Action, EnvConfig, EpisodeLog, EpisodeSource, InjectionSet,
    Topology,
};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn action_arg(action: Option<&Bound<'_, PyAny>>) -> PyResult<Action> {
    match action {
        Some(a) if !a.is_none() => from_py(a),
        _ => Ok(Action::do_nothing()),
    }
}

fn config_arg(path: Option<PathBuf>) -> PyResult<EnvConfig> {
    match path {
        Some(p) => EnvConfig::load(p).map_err(value_err),
        None => EnvConfig::from_env().map_err(value_err),
    }
}

/// A grid case: substations, lines, generators and loads.
#[pyclass(name = "GridCase", module = "gridgym", frozen)]
struct PyGridCase {
    inner: Arc<gridgym::GridCase>,
}

#[pymethods]
impl PyGridCase {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = gridgym::GridCase::load(path).map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = gridgym::GridCase::from_json(text).map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Structural problems; empty when the case is usable.
    fn validate(&self) -> Vec<String> {
        gridgym::validate_case(&self.inner)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn line_ids(&self) -> Vec<String> {
        self.inner.lines().iter().map(|l| l.id.clone()).collect()
    }

    #[getter]
    fn substation_ids(&self) -> Vec<String> {
        self.inner.substations().iter().map(|s| s.id.clone()).collect()
    }

    #[getter]
    fn n_generators(&self) -> usize {
        self.inner.n_generators()
    }

    #[getter]
    fn n_loads(&self) -> usize {
        self.inner.n_loads()
    }

    fn __repr__(&self) -> String {
        format!(
            "GridCase({:?}, substations={}, lines={})",
            self.inner.name(),
            self.inner.n_substations(),
            self.inner.n_lines()
        )
    }
}

/// One episode over a case and a chronics directory.
#[pyclass(name = "Environment", module = "gridgym")]
struct PyEnvironment {
    inner: gridgym::Environment,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    #[pyo3(signature = (case, chronics_dir, seed = 0, config_path = None))]
    fn new(case: &PyGridCase, chronics_dir: PathBuf, seed: u64, config_path: Option<PathBuf>) -> PyResult<Self> {
        let chronics = load_chronics(chronics_dir).map_err(value_err)?;
        let config = config_arg(config_path)?;
        let inner = gridgym::Environment::new(case.inner.clone(), &chronics, config, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn reset<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let obs = self.inner.reset().map_err(runtime_err)?;
        to_py(py, &obs)
    }

    #[pyo3(signature = (action = None))]
    fn step<'py>(&mut self, py: Python<'py>, action: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let action = action_arg(action)?;
        let result = self.inner.step(&action).map_err(runtime_err)?;
        to_py(py, &result)
    }

    #[pyo3(signature = (action = None))]
    fn simulate<'py>(&self, py: Python<'py>, action: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let action = action_arg(action)?;
        let result = self.inner.simulate(&action).map_err(runtime_err)?;
        to_py(py, &result)
    }

    /// None when the action is legal now, else the reason it is not.
    fn check_legal(&self, action: &Bound<'_, PyAny>) -> PyResult<Option<String>> {
        let action: Action = from_py(action)?;
        Ok(self.inner.check_legal(&action).err().map(|e| e.0))
    }

    fn observation<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.observation())
    }

    fn n1_screen<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let reports = self.inner.n1_screen().map_err(runtime_err)?;
        to_py(py, &reports)
    }

    #[getter]
    fn timestep(&self) -> usize {
        self.inner.timestep()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }
}

/// DC flow for given injections, on the default topology unless one is given.
#[pyfunction]
#[pyo3(signature = (case, injections, topology = None))]
fn solve_dc<'py>(
    py: Python<'py>,
    case: &PyGridCase,
    injections: &Bound<'py, PyAny>,
    topology: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let inj: InjectionSet = from_py(injections)?;
    let topo: Topology = match topology {
        Some(t) if !t.is_none() => from_py(t)?,
        _ => default_topology(&case.inner),
    };
    let model = reduce_to_buses(&case.inner, &topo).map_err(value_err)?;
    let sol = gridgym::solve_dc(&case.inner, &model, &inj).map_err(runtime_err)?;
    to_py(py, &sol)
}

/// Writes a synthetic chronics directory and returns its path.
#[pyfunction]
#[pyo3(signature = (case, steps, seed, out_dir, peak_fraction = None))]
fn synthesize_chronics(
    case: &PyGridCase,
    steps: usize,
    seed: u64,
    out_dir: PathBuf,
    peak_fraction: Option<f64>,
) -> PyResult<PathBuf> {
    if steps == 0 {
        return Err(PyValueError::new_err("steps must be at least 1"));
    }
    let mut profile = SynthProfile::default();
    if let Some(p) = peak_fraction {
        profile.peak_fraction = p;
    }
    let mut chronics = gridgym::synthesize_chronics(&case.inner, steps, seed, &profile).map_err(value_err)?;
    if let Some(name) = out_dir.file_name() {
        chronics.name = name.to_string_lossy().into_owned();
    }
    write_chronics(&out_dir, &chronics).map_err(runtime_err)
}

/// Runs a baseline agent for one episode and returns the log as JSON lines.
#[pyfunction]
#[pyo3(signature = (case_path, chronics_dir, agent = "do_nothing", seed = 0, config_path = None))]
fn run_episode(
    case_path: PathBuf,
    chronics_dir: PathBuf,
    agent: &str,
    seed: u64,
    config_path: Option<PathBuf>,
) -> PyResult<String> {
    let mut policy = agent_by_name(agent).ok_or_else(|| PyKeyError::new_err(format!("unknown agent `{agent}`")))?;
    let case = gridgym::GridCase::load(&case_path).map_err(value_err)?;
    let chronics = load_chronics(&chronics_dir).map_err(value_err)?;
    let config = config_arg(config_path)?;
    let source = EpisodeSource {
        case_path: case_path.display().to_string(),
        chronics_path: chronics_dir.display().to_string(),
    };
    let log = gridgym::run_episode(policy.as_mut(), Arc::new(case), &chronics, seed, &config, &source)
        .map_err(runtime_err)?;
    Ok(log.to_jsonl())
}

/// Discounted score of a logged episode, recomputed from its steps.
#[pyfunction]
fn episode_score(jsonl: &str) -> PyResult<f64> {
    let log = EpisodeLog::parse(jsonl).map_err(value_err)?;
    Ok(gridgym::episode_score(&log.steps, log.termination(), &log.header.config.reward))
}

#[pymodule(name = "gridgym")]
fn gridgym_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridCase>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_function(wrap_pyfunction!(solve_dc, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_chronics, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(episode_score, m)?)?;
    m.add("AGENTS", gridgym::agents::AGENT_NAMES.to_vec())?;
    Ok(())
}
