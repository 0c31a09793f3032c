//! Goal-conditioned PPO with episodic hindsight self-imitation, the replay
//! self-imitation baselines, the environments they are compared on, and the
//! run/metrics plumbing around them.

pub mod agent;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod hindsight;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rollout;
pub mod trainer;

pub use agent::{Agent, Policy, PolicyHead};
pub use config::{TrainConfig, Variant};
pub use env::{EnvKind, EnvRng, EnvSpec, GoalEnv};
pub use error::{EsilError, Result};
pub use hindsight::{compute_returns, relabel_episode, select_steps};
pub use nn::{Action, ParamVector, PolicyDistribution};
pub use rollout::{reduce_gradients, Trajectory, Transition};
pub use trainer::{evaluate, train, EpochMetrics, EvalReport, Trainer};
