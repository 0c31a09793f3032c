//! Episode collection and the synchronized worker pool.

use std::thread;

use rand::SeedableRng;

use crate::agent::Policy;
use crate::env::{EnvKind, EnvRng, GoalEnv};
use crate::error::{EsilError, Result};
use crate::nn::{Action, ParamVector};

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub desired_goal: Vec<f64>,
    pub achieved_goal_before: Vec<f64>,
    pub achieved_goal_after: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// Log-probability of `action` under the policy that collected it.
    pub behavior_log_prob: f64,
    pub next_state: Vec<f64>,
}

/// A full fixed-length episode. `returns` is empty until filled by
/// [`crate::hindsight::fill_returns`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub returns: Vec<f64>,
    pub worker: usize,
    pub episode: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn desired_goal(&self) -> Option<&[f64]> {
        self.transitions.first().map(|t| t.desired_goal.as_slice())
    }

    /// `g^ac` after the last step.
    pub fn final_achieved_goal(&self) -> Option<&[f64]> {
        self.transitions.last().map(|t| t.achieved_goal_after.as_slice())
    }

    /// Checks that consecutive transitions chain and the desired goal is
    /// constant.
    pub fn is_consistent(&self) -> bool {
        let chained = self
            .transitions
            .windows(2)
            .all(|w| w[0].next_state == w[1].state && w[0].achieved_goal_after == w[1].achieved_goal_before);
        let goal_fixed = self
            .transitions
            .windows(2)
            .all(|w| w[0].desired_goal == w[1].desired_goal);
        chained && goal_fixed
    }
}

/// Rolls out one full episode with actions sampled from `policy`.
pub fn collect_episode<P: Policy + ?Sized>(
    policy: &P,
    env: &mut dyn GoalEnv,
    rng: &mut EnvRng,
) -> Result<Trajectory> {
    let length = env.spec().episode_length;
    let mut obs = env.reset(rng);
    let mut transitions = Vec::with_capacity(length);
    for _ in 0..length {
        let dist = policy.action_distribution(&obs.observation, &obs.desired_goal)?;
        let action = dist.sample(rng);
        let behavior_log_prob = dist.log_prob(&action)?;
        if !behavior_log_prob.is_finite() {
            return Err(EsilError::NonFinite {
                what: "behavior log-probability",
                segment: format!("step {} action {action:?} dist {dist:?}", transitions.len()),
                index: transitions.len(),
            });
        }
        let step = env.step(&action, rng)?;
        transitions.push(Transition {
            state: obs.observation,
            desired_goal: obs.desired_goal,
            achieved_goal_before: obs.achieved_goal,
            achieved_goal_after: step.observation.achieved_goal.clone(),
            action,
            reward: step.reward,
            behavior_log_prob,
            next_state: step.observation.observation.clone(),
        });
        obs = step.observation;
    }
    Ok(Trajectory {
        transitions,
        returns: Vec::new(),
        worker: 0,
        episode: 0,
    })
}

/// One rollout worker: its own environment instance and generator.
pub struct Worker {
    pub index: usize,
    pub env: Box<dyn GoalEnv>,
    pub rng: EnvRng,
    episodes_collected: usize,
}

impl Worker {
    pub fn new(index: usize, env: Box<dyn GoalEnv>, seed: u64) -> Self {
        Self {
            index,
            env,
            rng: EnvRng::seed_from_u64(seed),
            episodes_collected: 0,
        }
    }

    pub fn collect<P: Policy + ?Sized>(&mut self, policy: &P, episodes: usize) -> Result<Vec<Trajectory>> {
        (0..episodes)
            .map(|_| {
                let mut traj = collect_episode(policy, self.env.as_mut(), &mut self.rng)?;
                traj.worker = self.index;
                traj.episode = self.episodes_collected;
                self.episodes_collected += 1;
                Ok(traj)
            })
            .collect()
    }
}

/// Runs `f` once per item, concurrently when there is more than one item, and
/// returns the results in item order.
pub fn run_parallel<T, R, F>(items: &mut [T], f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> Result<R> + Sync,
{
    if items.len() <= 1 {
        return items.iter_mut().enumerate().map(|(i, item)| f(i, item)).collect();
    }
    thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .iter_mut()
            .enumerate()
            .map(|(i, item)| scope.spawn(move || f(i, item)))
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| match h.join() {
                Ok(result) => result.map_err(|e| EsilError::Worker {
                    worker: i,
                    message: e.to_string(),
                }),
                Err(_) => Err(EsilError::Worker {
                    worker: i,
                    message: "worker thread panicked".into(),
                }),
            })
            .collect()
    })
}

/// Fixed set of rollout workers. Each owns a disjoint environment and rng;
/// the policy is shared read-only during collection.
pub struct WorkerPool {
    workers: Vec<Worker>,
}

impl WorkerPool {
    pub fn new(workers: Vec<Worker>) -> Result<Self> {
        if workers.is_empty() {
            return Err(EsilError::InvalidConfig("worker_count must be at least 1".into()));
        }
        Ok(Self { workers })
    }

    /// One worker per seed, all running the same environment kind.
    pub fn for_env(kind: EnvKind, random_action_prob: f64, seeds: &[u64]) -> Result<Self> {
        Self::new(
            seeds
                .iter()
                .enumerate()
                .map(|(i, &seed)| Worker::new(i, kind.build(random_action_prob), seed))
                .collect(),
        )
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    pub fn workers_mut(&mut self) -> &mut [Worker] {
        &mut self.workers
    }

    /// Collects `episodes` episodes split evenly across workers, grouped per
    /// worker.
    pub fn collect_by_worker<P: Policy + ?Sized>(&mut self, policy: &P, episodes: usize) -> Result<Vec<Vec<Trajectory>>> {
        let w = self.workers.len();
        if !episodes.is_multiple_of(w) {
            return Err(EsilError::InvalidConfig(format!(
                "episodes_per_epoch ({episodes}) must be divisible by worker_count ({w})"
            )));
        }
        let per_worker = episodes / w;
        run_parallel(&mut self.workers, |_, worker| worker.collect(policy, per_worker))
    }

    /// Collects `episodes` episodes ordered by (worker index, episode index).
    pub fn collect_epoch<P: Policy + ?Sized>(&mut self, policy: &P, episodes: usize) -> Result<Vec<Trajectory>> {
        Ok(self.collect_by_worker(policy, episodes)?.into_iter().flatten().collect())
    }
}

/// Element-wise mean of per-worker gradients, summed in worker order.
pub fn reduce_gradients(per_worker: &[ParamVector]) -> Result<ParamVector> {
    let first = per_worker
        .first()
        .ok_or_else(|| EsilError::InvalidConfig("no gradients to reduce".into()))?;
    let slices: Vec<&[f64]> = per_worker.iter().map(|g| g.values()).collect();
    let mean = reduce_slices(&slices)?;
    first.with_values(mean)
}

pub(crate) fn reduce_slices(per_worker: &[&[f64]]) -> Result<Vec<f64>> {
    let n = per_worker[0].len();
    if let Some(bad) = per_worker.iter().find(|g| g.len() != n) {
        return Err(EsilError::dim("worker gradient", n, bad.len()));
    }
    let mut sum = per_worker[0].to_vec();
    for g in &per_worker[1..] {
        for (s, v) in sum.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }
    if per_worker.len() > 1 {
        let w = per_worker.len() as f64;
        for s in &mut sum {
            *s /= w;
        }
    }
    Ok(sum)
}
