//! Python bindings: configs, training, environments, checkpoints and the
//! hindsight helpers.

use std::path::PathBuf;

use esil_core::agent::Policy;
use esil_core::env::{seeded_rng, EnvRng, GoalObservation};
use esil_core::hindsight;
use esil_core::rollout::collect_episode;
use esil_core::{checkpoint, Action, EnvKind, EsilError, GoalEnv, TrainConfig, Trajectory, Trainer};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: EsilError) -> PyErr {
    match e {
        EsilError::Io { .. } | EsilError::Worker { .. } | EsilError::NonFinite { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn env_kind(name: &str) -> PyResult<EnvKind> {
    name.parse().map_err(err)
}

#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (env = "empty-room", **overrides))]
    fn new(env: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = TrainConfig::for_env(env_kind(env)?);
        if let Some(kw) = overrides {
            let pairs = kw
                .iter()
                .map(|(k, v)| {
                    let v = match v.extract::<bool>() {
                        Ok(b) => b.to_string(),
                        Err(_) => v.str()?.to_string(),
                    };
                    Ok(format!("{}={v}", k.str()?))
                })
                .collect::<PyResult<Vec<_>>>()?;
            inner.apply_overrides(&pairs).map_err(err)?;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainConfig::parse(text).map_err(err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner
            .apply_overrides(&[format!("{key}={value}")])
            .map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key `{key}`")))
    }

    fn to_text(&self) -> String {
        self.inner.to_config_text()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(env={}, variant={})", self.inner.env, self.inner.variant)
    }
}

#[pyclass(name = "Agent", from_py_object)]
#[derive(Clone)]
struct PyAgent {
    inner: esil_core::Agent,
}

#[pymethods]
impl PyAgent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params().into_values()
    }

    fn checksum(&self) -> u64 {
        self.inner.params().checksum()
    }

    /// Most likely action for `(observation, goal)`: an int for the grid
    /// world, a list of floats for the point tasks.
    fn act<'py>(&self, py: Python<'py>, observation: Vec<f64>, goal: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let action = self.inner.action_distribution(&observation, &goal).map_err(err)?.mode();
        action_to_py(py, &action)
    }

    fn value(&self, observation: Vec<f64>, goal: Vec<f64>) -> PyResult<f64> {
        self.inner
            .value(&esil_core::agent::policy_input(&observation, &goal))
            .map_err(err)
    }

    /// Greedy evaluation; returns `(success_rate, outcomes)`.
    #[pyo3(signature = (env, episodes = 10, seed = 0, random_action_prob = 0.2))]
    fn evaluate(&self, env: &str, episodes: usize, seed: u64, random_action_prob: f64) -> PyResult<(f64, Vec<bool>)> {
        let mut e = env_kind(env)?.build(random_action_prob);
        let report = esil_core::evaluate(&self.inner, e.as_mut(), episodes, &mut seeded_rng(seed)).map_err(err)?;
        Ok((report.success_rate, report.outcomes))
    }

    /// Samples one training episode under the current policy.
    #[pyo3(signature = (env, seed = 0, random_action_prob = 0.2, gamma = 0.98))]
    fn rollout(&self, env: &str, seed: u64, random_action_prob: f64, gamma: f64) -> PyResult<PyEpisode> {
        let kind = env_kind(env)?;
        let mut e = kind.build(random_action_prob);
        let mut traj = collect_episode(&self.inner, e.as_mut(), &mut seeded_rng(seed)).map_err(err)?;
        hindsight::fill_returns(&mut traj, gamma);
        Ok(PyEpisode { kind, traj, gamma })
    }
}

fn action_to_py<'py>(py: Python<'py>, action: &Action) -> PyResult<Bound<'py, PyAny>> {
    match action {
        Action::Discrete(a) => Ok(a.into_pyobject(py)?.into_any()),
        Action::Continuous(v) => Ok(v.clone().into_pyobject(py)?.into_any()),
    }
}

fn action_from_py(kind: EnvKind, obj: &Bound<'_, PyAny>) -> PyResult<Action> {
    Ok(match kind {
        EnvKind::EmptyRoom => Action::Discrete(obj.extract()?),
        _ => Action::Continuous(obj.extract()?),
    })
}

/// A collected episode with its returns.
#[pyclass(name = "Episode")]
struct PyEpisode {
    kind: EnvKind,
    traj: Trajectory,
    gamma: f64,
}

#[pymethods]
impl PyEpisode {
    fn __len__(&self) -> usize {
        self.traj.len()
    }

    fn rewards(&self) -> Vec<f64> {
        self.traj.rewards()
    }

    fn returns(&self) -> Vec<f64> {
        self.traj.returns.clone()
    }

    fn desired_goal(&self) -> Vec<f64> {
        self.traj.desired_goal().unwrap_or_default().to_vec()
    }

    fn achieved_goals(&self) -> Vec<Vec<f64>> {
        self.traj.transitions.iter().map(|t| t.achieved_goal_after.clone()).collect()
    }

    /// Final-goal hindsight copy of this episode.
    fn relabel(&self) -> PyResult<PyEpisode> {
        let mut h = hindsight::relabel_episode(&self.traj, &self.kind.spec()).map_err(err)?;
        hindsight::fill_returns(&mut h.trajectory, self.gamma);
        Ok(PyEpisode {
            kind: self.kind,
            traj: h.trajectory,
            gamma: self.gamma,
        })
    }

    /// Per-step selection mask of the hindsight copy against this episode.
    fn selection_mask(&self) -> PyResult<Vec<bool>> {
        let h = hindsight::prepare_episode(&mut self.traj.clone(), &self.kind.spec(), self.gamma).map_err(err)?;
        Ok(h.selection_mask)
    }
}

#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: PyTrainConfig) -> PyResult<Self> {
        Ok(Self {
            inner: Trainer::new(config.inner).map_err(err)?,
        })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch()
    }

    /// Runs one epoch and returns its metrics as a dict.
    fn run_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.run_epoch().map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("epoch", m.epoch)?;
        d.set_item("success_rate", m.success_rate)?;
        d.set_item("beta", m.beta)?;
        d.set_item("policy_loss", m.policy_loss)?;
        d.set_item("value_loss", m.value_loss)?;
        d.set_item("esil_loss", m.esil_loss)?;
        d.set_item("seconds", m.seconds)?;
        d.set_item("episodes_collected", m.episodes_collected)?;
        d.set_item("n_esil", m.n_esil)?;
        d.set_item("n_total", m.n_total)?;
        Ok(d)
    }

    fn agent(&self) -> PyAgent {
        PyAgent {
            inner: self.inner.agent().clone(),
        }
    }

    fn worker_checksums(&self) -> Vec<u64> {
        self.inner.worker_checksums()
    }
}

/// Stepping interface to one environment with its own generator.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    kind: EnvKind,
    env: Box<dyn GoalEnv>,
    rng: EnvRng,
}

fn obs_dict<'py>(py: Python<'py>, obs: &GoalObservation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("observation", obs.observation.clone())?;
    d.set_item("achieved_goal", obs.achieved_goal.clone())?;
    d.set_item("desired_goal", obs.desired_goal.clone())?;
    Ok(d)
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (name, seed = 0, random_action_prob = 0.2))]
    fn new(name: &str, seed: u64, random_action_prob: f64) -> PyResult<Self> {
        let kind = env_kind(name)?;
        Ok(Self {
            kind,
            env: kind.build(random_action_prob),
            rng: seeded_rng(seed),
        })
    }

    #[getter]
    fn episode_length(&self) -> usize {
        self.env.spec().episode_length
    }

    fn reset<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let obs = self.env.reset(&mut self.rng);
        obs_dict(py, &obs)
    }

    /// Returns `(observation dict, reward)`.
    fn step<'py>(&mut self, py: Python<'py>, action: &Bound<'py, PyAny>) -> PyResult<(Bound<'py, PyDict>, f64)> {
        let a = action_from_py(self.kind, action)?;
        let r = self.env.step(&a, &mut self.rng).map_err(err)?;
        Ok((obs_dict(py, &r.observation)?, r.reward))
    }
}

#[pyfunction]
fn compute_returns(rewards: Vec<f64>, gamma: f64) -> Vec<f64> {
    hindsight::compute_returns(&rewards, gamma)
}

#[pyfunction]
fn select_steps(original_returns: Vec<f64>, hindsight_returns: Vec<f64>) -> PyResult<Vec<bool>> {
    hindsight::select_steps(&original_returns, &hindsight_returns).map_err(err)
}

/// Trains from scratch; returns the final agent and one metrics dict per
/// epoch.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: PyTrainConfig) -> PyResult<(PyAgent, Vec<Bound<'py, PyDict>>)> {
    let mut trainer = PyTrainer::new(config)?;
    let mut rows = Vec::new();
    while trainer.inner.epoch() < trainer.inner.config().epochs {
        rows.push(trainer.run_epoch(py)?);
    }
    Ok((trainer.agent(), rows))
}

#[pymodule]
fn esil(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyAgent>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(compute_returns, m)?)?;
    m.add_function(wrap_pyfunction!(select_steps, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
