use rand::Rng;

use super::{
    compute_reward, ActionSpace, EnvRng, EnvSpec, EpisodeSuccess, GoalEnv, GoalObservation, RewardConvention,
    StepResult,
};
use crate::error::{EsilError, Result};
use crate::nn::Action;

/// Side length of the square grid.
pub const GRID_SIZE: i64 = 11;
const EPISODE_LENGTH: usize = 32;

/// Grid moves. `x` grows to the right and `y` grows downwards, so the start
/// cell `(0, 0)` is the upper-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
    Stay = 4,
}

impl GridAction {
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Option<Self> {
        [Self::Left, Self::Right, Self::Up, Self::Down, Self::Stay].get(i).copied()
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Self::Left => (-1, 0),
            Self::Right => (1, 0),
            Self::Up => (0, -1),
            Self::Down => (0, 1),
            Self::Stay => (0, 0),
        }
    }
}

/// 11x11 room; the agent starts in the upper-left corner and must reach a
/// uniformly drawn target cell. With probability `random_action_prob` the
/// chosen action is replaced by a uniformly random one.
#[derive(Debug, Clone)]
pub struct EmptyRoom {
    spec: EnvSpec,
    random_action_prob: f64,
    position: (i64, i64),
    goal: (i64, i64),
    steps: usize,
}

impl EmptyRoom {
    pub fn spec_template() -> EnvSpec {
        EnvSpec {
            name: "empty-room",
            observation_dim: 2,
            goal_dim: 2,
            action_space: ActionSpace::Discrete(GridAction::COUNT),
            episode_length: EPISODE_LENGTH,
            reward: RewardConvention::UnitPositive,
            distance_threshold: 0.0,
            episode_success: EpisodeSuccess::AnyStep,
        }
    }

    pub fn new(random_action_prob: f64) -> Self {
        Self {
            spec: Self::spec_template(),
            random_action_prob,
            position: (0, 0),
            goal: (0, 0),
            steps: 0,
        }
    }

    pub fn position(&self) -> (i64, i64) {
        self.position
    }

    pub fn goal(&self) -> (i64, i64) {
        self.goal
    }

    /// Places the target explicitly (tests and scripted evaluation).
    pub fn set_goal(&mut self, goal: (i64, i64)) {
        self.goal = goal;
    }

    fn observe(&self) -> GoalObservation {
        let pos = vec![self.position.0 as f64, self.position.1 as f64];
        GoalObservation {
            observation: pos.clone(),
            achieved_goal: pos,
            desired_goal: vec![self.goal.0 as f64, self.goal.1 as f64],
        }
    }
}

impl GoalEnv for EmptyRoom {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut EnvRng) -> GoalObservation {
        self.position = (0, 0);
        self.steps = 0;
        let gx = rng.random_range(0..GRID_SIZE);
        let gy = rng.random_range(0..GRID_SIZE);
        self.goal = (gx, gy);
        self.observe()
    }

    fn step(&mut self, action: &Action, rng: &mut EnvRng) -> Result<StepResult> {
        if self.steps >= self.spec.episode_length {
            return Err(EsilError::EpisodeExhausted {
                step: self.steps,
                length: self.spec.episode_length,
            });
        }
        let chosen = action
            .as_discrete()
            .and_then(GridAction::from_index)
            .ok_or_else(|| EsilError::InvalidAction(format!("{action:?} is not a grid action")))?;
        let executed = if self.random_action_prob > 0.0 && rng.random::<f64>() < self.random_action_prob {
            GridAction::from_index(rng.random_range(0..GridAction::COUNT)).expect("index in range")
        } else {
            chosen
        };
        let (dx, dy) = executed.delta();
        let (nx, ny) = (self.position.0 + dx, self.position.1 + dy);
        if (0..GRID_SIZE).contains(&nx) && (0..GRID_SIZE).contains(&ny) {
            self.position = (nx, ny);
        }
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn reset_starts_in_corner() {
        let mut env = EmptyRoom::new(0.2);
        for seed in 0..20 {
            let mut rng = EnvRng::seed_from_u64(seed);
            let obs = env.reset(&mut rng);
            assert_eq!(obs.observation, vec![0.0, 0.0]);
            assert_eq!(obs.achieved_goal, vec![0.0, 0.0]);
            assert!(obs.desired_goal.iter().all(|&g| (0.0..=10.0).contains(&g)));
        }
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let mut a = EmptyRoom::new(0.2);
        let mut b = EmptyRoom::new(0.2);
        let obs_a = a.reset(&mut EnvRng::seed_from_u64(9));
        let obs_b = b.reset(&mut EnvRng::seed_from_u64(9));
        assert_eq!(obs_a, obs_b);
    }

    #[test]
    fn wall_keeps_agent_in_place() {
        let mut env = EmptyRoom::new(0.0);
        let mut rng = EnvRng::seed_from_u64(1);
        env.reset(&mut rng);
        env.set_goal((5, 5));
        let r = env.step(&Action::Discrete(GridAction::Left as usize), &mut rng).unwrap();
        assert_eq!(r.observation.observation, vec![0.0, 0.0]);
        assert_eq!(r.reward, 0.0);
        let r = env.step(&Action::Discrete(GridAction::Up as usize), &mut rng).unwrap();
        assert_eq!(r.observation.observation, vec![0.0, 0.0]);
        assert_eq!(r.step_index, 1);
    }

    #[test]
    fn reward_on_goal_cell() {
        let mut env = EmptyRoom::new(0.0);
        let mut rng = EnvRng::seed_from_u64(1);
        env.reset(&mut rng);
        env.set_goal((1, 0));
        let r = env.step(&Action::Discrete(GridAction::Right as usize), &mut rng).unwrap();
        assert_eq!(r.reward, 1.0);
        let r = env.step(&Action::Discrete(GridAction::Stay as usize), &mut rng).unwrap();
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn stepping_past_episode_end_fails() {
        let mut env = EmptyRoom::new(0.2);
        let mut rng = EnvRng::seed_from_u64(2);
        env.reset(&mut rng);
        for _ in 0..32 {
            env.step(&Action::Discrete(4), &mut rng).unwrap();
        }
        assert!(matches!(
            env.step(&Action::Discrete(4), &mut rng),
            Err(EsilError::EpisodeExhausted { step: 32, length: 32 })
        ));
    }

    #[test]
    fn rejects_invalid_actions() {
        let mut env = EmptyRoom::new(0.0);
        let mut rng = EnvRng::seed_from_u64(2);
        env.reset(&mut rng);
        assert!(env.step(&Action::Discrete(5), &mut rng).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0, 1.0]), &mut rng).is_err());
    }

    #[test]
    fn noise_replaces_some_actions() {
        let mut env = EmptyRoom::new(0.2);
        let mut rng = EnvRng::seed_from_u64(3);
        let mut moved = 0;
        for _ in 0..50 {
            env.reset(&mut rng);
            for _ in 0..32 {
                let r = env.step(&Action::Discrete(GridAction::Stay as usize), &mut rng).unwrap();
                if r.observation.observation != [0.0, 0.0] {
                    moved += 1;
                }
            }
        }
        assert!(moved > 0);
    }
}
