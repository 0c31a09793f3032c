//! Goal-conditioned environments: the 11x11 Empty Room grid world and two
//! continuous sparse-reward point tasks.

mod empty_room;
mod point;

use std::fmt;
use std::str::FromStr;

pub use empty_room::{EmptyRoom, GridAction, GRID_SIZE};
pub use point::{PointEnv, PointTask, CONTACT_RADIUS, MAX_DISPLACEMENT, MIN_GOAL_OBJECT_DISTANCE};

use crate::error::{EsilError, Result};
use crate::nn::Action;

/// Deterministic generator used for every stochastic choice in the crate.
pub type EnvRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> EnvRng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Observation triple returned by environments.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalObservation {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardConvention {
    /// +1 on success, 0 otherwise.
    UnitPositive,
    /// 0 on success, -1 otherwise.
    NegativeIndicator,
}

impl RewardConvention {
    pub fn success_value(self) -> f64 {
        match self {
            RewardConvention::UnitPositive => 1.0,
            RewardConvention::NegativeIndicator => 0.0,
        }
    }

    pub fn failure_value(self) -> f64 {
        match self {
            RewardConvention::UnitPositive => 0.0,
            RewardConvention::NegativeIndicator => -1.0,
        }
    }
}

/// Which steps of an evaluation episode count towards episode success.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeSuccess {
    /// The achieved goal after the last step satisfies the goal.
    FinalStep,
    /// The goal was satisfied after some step (reaching the goal ends the
    /// task).
    AnyStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub observation_dim: usize,
    pub goal_dim: usize,
    pub action_space: ActionSpace,
    pub episode_length: usize,
    pub reward: RewardConvention,
    /// Goals within this euclidean distance count as achieved. Zero for the
    /// grid, i.e. exact equality.
    pub distance_threshold: f64,
    pub episode_success: EpisodeSuccess,
}

impl EnvSpec {
    pub fn policy_input_dim(&self) -> usize {
        self.observation_dim + self.goal_dim
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: GoalObservation,
    pub reward: f64,
    /// Zero-based index of the step just taken.
    pub step_index: usize,
}

pub trait GoalEnv: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and samples its desired goal.
    fn reset(&mut self, rng: &mut EnvRng) -> GoalObservation;

    /// Applies `action`. Fails past the episode length.
    fn step(&mut self, action: &Action, rng: &mut EnvRng) -> Result<StepResult>;
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_goal_dims(spec: &EnvSpec, achieved: &[f64], desired: &[f64]) -> Result<()> {
    if achieved.len() != spec.goal_dim {
        return Err(EsilError::dim("achieved goal", spec.goal_dim, achieved.len()));
    }
    if desired.len() != spec.goal_dim {
        return Err(EsilError::dim("desired goal", spec.goal_dim, desired.len()));
    }
    Ok(())
}

/// Sparse reward for reaching `desired` given the achieved goal after a
/// transition. Shared by live stepping and hindsight relabeling.
pub fn compute_reward(spec: &EnvSpec, achieved_after: &[f64], desired: &[f64]) -> Result<f64> {
    check_goal_dims(spec, achieved_after, desired)?;
    Ok(if distance(achieved_after, desired) <= spec.distance_threshold {
        spec.reward.success_value()
    } else {
        spec.reward.failure_value()
    })
}

pub fn is_success(spec: &EnvSpec, achieved: &[f64], desired: &[f64]) -> Result<bool> {
    check_goal_dims(spec, achieved, desired)?;
    Ok(distance(achieved, desired) <= spec.distance_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    EmptyRoom,
    PointReach,
    PointPush,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::EmptyRoom, EnvKind::PointReach, EnvKind::PointPush];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::EmptyRoom => "empty-room",
            EnvKind::PointReach => "point-reach",
            EnvKind::PointPush => "point-push",
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::EmptyRoom => EmptyRoom::spec_template(),
            EnvKind::PointReach => PointEnv::spec_template(PointTask::Reach),
            EnvKind::PointPush => PointEnv::spec_template(PointTask::Push),
        }
    }

    /// `random_action_prob` only affects the grid world.
    pub fn build(self, random_action_prob: f64) -> Box<dyn GoalEnv> {
        match self {
            EnvKind::EmptyRoom => Box::new(EmptyRoom::new(random_action_prob)),
            EnvKind::PointReach => Box::new(PointEnv::new(PointTask::Reach)),
            EnvKind::PointPush => Box::new(PointEnv::new(PointTask::Push)),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EsilError;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EsilError::UnknownEnv(s.to_string()))
    }
}
