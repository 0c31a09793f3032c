//! Replay-based self-imitation baselines: a transition buffer sampled by
//! positive-part advantage `(R - V(s, g))_+`, optionally filled with
//! final-goal relabeled copies of each episode.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::agent::{policy_input, Agent};
use crate::env::{EnvRng, EnvSpec};
use crate::error::{EsilError, Result};
use crate::hindsight::{fill_returns, relabel_episode, ImitationSample};
use crate::losses::LossGrad;
use crate::nn::Action;
use crate::rollout::Trajectory;

pub const DEFAULT_CAPACITY: usize = 100_000;
pub const DEFAULT_BATCH_SIZE: usize = 64;

const PRIORITY_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SilEntry {
    pub observation: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: Action,
    pub ret: f64,
}

/// FIFO buffer of past transitions with their episode returns.
#[derive(Debug, Clone)]
pub struct SilBuffer {
    capacity: usize,
    entries: VecDeque<SilEntry>,
}

/// Entries drawn for one imitation update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SilBatch {
    pub samples: Vec<ImitationSample>,
    pub returns: Vec<f64>,
}

impl SilBatch {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

impl SilBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(EsilError::InvalidConfig("sil_capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &SilEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: SilEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Appends every transition of `traj` with its return. The returns must
    /// already be filled.
    pub fn store(&mut self, traj: &Trajectory) -> Result<()> {
        if traj.returns.len() != traj.len() {
            return Err(EsilError::dim("trajectory returns", traj.len(), traj.returns.len()));
        }
        for (t, &ret) in traj.transitions.iter().zip(&traj.returns) {
            self.push(SilEntry {
                observation: t.state.clone(),
                goal: t.desired_goal.clone(),
                action: t.action.clone(),
                ret,
            });
        }
        Ok(())
    }

    /// `(R - V(s, g))_+` for every entry under the current critic.
    pub fn priorities(&self, agent: &Agent) -> Result<Vec<f64>> {
        let dim = agent.input_dim();
        let entries: Vec<&SilEntry> = self.entries.iter().collect();
        let mut out = Vec::with_capacity(entries.len());
        for chunk in entries.chunks(PRIORITY_CHUNK) {
            let mut flat = Vec::with_capacity(chunk.len() * dim);
            for e in chunk {
                flat.extend(policy_input(&e.observation, &e.goal));
            }
            let inputs = Array2::from_shape_vec((chunk.len(), dim), flat)
                .map_err(|_| EsilError::dim("sil entry input", dim, 0))?;
            let values = agent.values_batch(inputs.view())?;
            out.extend(chunk.iter().zip(values).map(|(e, v)| (e.ret - v).max(0.0)));
        }
        Ok(out)
    }

    /// Draws `batch_size` entries with replacement, proportionally to their
    /// priority. Returns an empty batch when no entry has positive priority.
    pub fn sample(&self, batch_size: usize, agent: &Agent, rng: &mut EnvRng) -> Result<SilBatch> {
        if self.entries.is_empty() {
            return Err(EsilError::InvalidConfig("cannot sample from an empty buffer".into()));
        }
        let priorities = self.priorities(agent)?;
        Ok(self.sample_with_priorities(&priorities, batch_size, rng))
    }

    pub fn sample_with_priorities(&self, priorities: &[f64], batch_size: usize, rng: &mut EnvRng) -> SilBatch {
        let Ok(index) = WeightedIndex::new(priorities) else {
            return SilBatch::default();
        };
        let mut batch = SilBatch::default();
        for _ in 0..batch_size {
            let e = &self.entries[index.sample(rng)];
            batch.samples.push(ImitationSample {
                observation: e.observation.clone(),
                goal: e.goal.clone(),
                action: e.action.clone(),
            });
            batch.returns.push(e.ret);
        }
        batch
    }
}

/// Normalized sampling probabilities for a priority vector, `None` when every
/// priority is zero.
pub fn sampling_probabilities(priorities: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = priorities.iter().sum();
    if total <= 0.0 {
        return None;
    }
    Some(priorities.iter().map(|p| p / total).collect())
}

/// Final-goal relabeled copy of `traj` with rewards and returns recomputed,
/// ready to be stored in the buffer.
pub fn her_relabel_for_buffer(traj: &Trajectory, spec: &EnvSpec, gamma: f64) -> Result<Trajectory> {
    let mut relabeled = relabel_episode(traj, spec)?.trajectory;
    fill_returns(&mut relabeled, gamma);
    Ok(relabeled)
}

/// Value-side self-imitation term: mean of `((R - V)_+)^2`, pulling the critic
/// up towards returns it underestimates.
pub fn sil_value_loss(agent: &Agent, inputs: &Array2<f64>, returns: &[f64]) -> Result<LossGrad> {
    let mut grad = vec![0.0; agent.param_count()];
    let n = returns.len();
    if n == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let cache = agent.critic().forward_batch(inputs.view())?;
    let predictions = cache.output();
    let mut out_grad = Array2::zeros((n, 1));
    let mut total = 0.0;
    for (i, &ret) in returns.iter().enumerate() {
        let gap = (ret - predictions[[i, 0]]).max(0.0);
        total += gap * gap;
        out_grad[[i, 0]] = -2.0 * gap / n as f64;
    }
    agent
        .critic()
        .backward_batch_into(&cache, out_grad.view(), &mut grad[agent.critic_range()])?;
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}
