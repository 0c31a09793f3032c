use rand::Rng;

use super::{
    compute_reward, ActionSpace, EnvRng, EnvSpec, EpisodeSuccess, GoalEnv, GoalObservation, RewardConvention,
    StepResult,
};
use crate::error::{EsilError, Result};
use crate::nn::Action;

/// Largest per-axis displacement of the agent in one step. Actions in
/// `[-1, 1]` are scaled by this value.
pub const MAX_DISPLACEMENT: f64 = 0.05;
/// The agent pushes the object only from within this distance.
pub const CONTACT_RADIUS: f64 = 0.08;
pub const MIN_GOAL_OBJECT_DISTANCE: f64 = 0.2;

const EPISODE_LENGTH: usize = 50;
const GOAL_THRESHOLD: f64 = 0.05;

const REACH_AGENT_START: [f64; 2] = [0.5, 0.5];
const PUSH_AGENT_START: [f64; 2] = [0.5, 0.4];
const PUSH_OBJECT_START: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointTask {
    /// Move the point agent to the goal.
    Reach,
    /// Push an object to the goal. The achieved goal is the object position.
    Push,
}

/// A point agent in the unit square with sparse `0 / -1` rewards.
#[derive(Debug, Clone)]
pub struct PointEnv {
    task: PointTask,
    spec: EnvSpec,
    agent: [f64; 2],
    object: [f64; 2],
    goal: [f64; 2],
    steps: usize,
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

impl PointEnv {
    pub fn spec_template(task: PointTask) -> EnvSpec {
        let (name, observation_dim) = match task {
            PointTask::Reach => ("point-reach", 2),
            PointTask::Push => ("point-push", 4),
        };
        EnvSpec {
            name,
            observation_dim,
            goal_dim: 2,
            action_space: ActionSpace::Continuous {
                dim: 2,
                low: -1.0,
                high: 1.0,
            },
            episode_length: EPISODE_LENGTH,
            reward: RewardConvention::NegativeIndicator,
            distance_threshold: GOAL_THRESHOLD,
            episode_success: EpisodeSuccess::FinalStep,
        }
    }

    pub fn new(task: PointTask) -> Self {
        Self {
            task,
            spec: Self::spec_template(task),
            agent: REACH_AGENT_START,
            object: PUSH_OBJECT_START,
            goal: [0.0, 0.0],
            steps: 0,
        }
    }

    pub fn task(&self) -> PointTask {
        self.task
    }

    pub fn agent_position(&self) -> [f64; 2] {
        self.agent
    }

    pub fn object_position(&self) -> [f64; 2] {
        self.object
    }

    /// Overrides the current state (tests and scripted evaluation).
    pub fn set_state(&mut self, agent: [f64; 2], object: [f64; 2], goal: [f64; 2]) {
        self.agent = agent;
        self.object = object;
        self.goal = goal;
    }

    fn achieved(&self) -> [f64; 2] {
        match self.task {
            PointTask::Reach => self.agent,
            PointTask::Push => self.object,
        }
    }

    fn observe(&self) -> GoalObservation {
        let observation = match self.task {
            PointTask::Reach => self.agent.to_vec(),
            PointTask::Push => vec![self.agent[0], self.agent[1], self.object[0], self.object[1]],
        };
        GoalObservation {
            observation,
            achieved_goal: self.achieved().to_vec(),
            desired_goal: self.goal.to_vec(),
        }
    }
}

impl GoalEnv for PointEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut EnvRng) -> GoalObservation {
        self.steps = 0;
        self.object = PUSH_OBJECT_START;
        match self.task {
            PointTask::Reach => {
                self.agent = REACH_AGENT_START;
                self.goal = [rng.random::<f64>(), rng.random::<f64>()];
            }
            PointTask::Push => {
                self.agent = PUSH_AGENT_START;
                self.goal = loop {
                    let g = [rng.random::<f64>(), rng.random::<f64>()];
                    let d = ((g[0] - self.object[0]).powi(2) + (g[1] - self.object[1]).powi(2)).sqrt();
                    if d >= MIN_GOAL_OBJECT_DISTANCE {
                        break g;
                    }
                };
            }
        }
        self.observe()
    }

    fn step(&mut self, action: &Action, _rng: &mut EnvRng) -> Result<StepResult> {
        if self.steps >= self.spec.episode_length {
            return Err(EsilError::EpisodeExhausted {
                step: self.steps,
                length: self.spec.episode_length,
            });
        }
        let a = action
            .as_continuous()
            .ok_or_else(|| EsilError::InvalidAction("point environments take continuous actions".into()))?;
        if a.len() != 2 {
            return Err(EsilError::dim("point action", 2, a.len()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(EsilError::InvalidAction(format!("non-finite action {a:?}")));
        }
        let disp = [a[0].clamp(-1.0, 1.0) * MAX_DISPLACEMENT, a[1].clamp(-1.0, 1.0) * MAX_DISPLACEMENT];

        if self.task == PointTask::Push {
            let to_object = [self.object[0] - self.agent[0], self.object[1] - self.agent[1]];
            let dist = (to_object[0].powi(2) + to_object[1].powi(2)).sqrt();
            if dist > 0.0 && dist <= CONTACT_RADIUS {
                let dir = [to_object[0] / dist, to_object[1] / dist];
                let along = disp[0] * dir[0] + disp[1] * dir[1];
                if along > 0.0 {
                    self.object = clamp_unit([self.object[0] + along * dir[0], self.object[1] + along * dir[1]]);
                }
            }
        }
        self.agent = clamp_unit([self.agent[0] + disp[0], self.agent[1] + disp[1]]);

        let step_index = self.steps;
        self.steps += 1;
        let observation = self.observe();
        let reward = compute_reward(&self.spec, &observation.achieved_goal, &observation.desired_goal)?;
        Ok(StepResult {
            observation,
            reward,
            step_index,
        })
    }
}
