use std::ops::Range;

use ndarray::ArrayView2;
use rand::Rng;

use crate::env::ActionSpace;
use crate::error::{EsilError, Result};
use crate::nn::{Mlp, ParamVector, PolicyDistribution, Segment};

/// Output gain of the actor's last layer. Small, so the initial policy is
/// close to uniform (categorical) or zero-mean (gaussian).
const ACTOR_OUTPUT_GAIN: f64 = 0.01;
const CRITIC_OUTPUT_GAIN: f64 = 1.0;

/// How the actor's output is turned into a distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    /// Actor outputs one logit per action.
    Categorical { actions: usize },
    /// Actor outputs the mean; the standard deviation is a state-independent
    /// learnable vector stored as log-std.
    Gaussian { log_std: Vec<f64> },
}

impl PolicyHead {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, PolicyHead::Gaussian { .. })
    }
}

/// Anything that maps `(observation, desired goal)` to an action distribution.
pub trait Policy: Sync {
    fn action_distribution(&self, observation: &[f64], goal: &[f64]) -> Result<PolicyDistribution>;
}

pub fn policy_input(observation: &[f64], goal: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(observation.len() + goal.len());
    input.extend_from_slice(observation);
    input.extend_from_slice(goal);
    input
}

/// Actor-critic pair. Both networks read the concatenation of observation and
/// goal.
///
/// The flat parameter layout used for optimizer steps and checkpoints is
/// `actor.* | log_std (gaussian only) | critic.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    actor: Mlp,
    critic: Mlp,
    head: PolicyHead,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        action_space: &ActionSpace,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let (outputs, head) = match action_space {
            ActionSpace::Discrete(n) => (*n, PolicyHead::Categorical { actions: *n }),
            ActionSpace::Continuous { dim, .. } => (*dim, PolicyHead::Gaussian { log_std: vec![0.0; *dim] }),
        };
        let mut actor_sizes = vec![input_dim];
        actor_sizes.extend_from_slice(hidden);
        let mut critic_sizes = actor_sizes.clone();
        actor_sizes.push(outputs);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, ACTOR_OUTPUT_GAIN, rng)?;
        let critic = Mlp::new(&critic_sizes, CRITIC_OUTPUT_GAIN, rng)?;
        Self::from_parts(actor, critic, head)
    }

    pub fn from_parts(actor: Mlp, critic: Mlp, head: PolicyHead) -> Result<Self> {
        if actor.input_dim() != critic.input_dim() {
            return Err(EsilError::dim("critic input", actor.input_dim(), critic.input_dim()));
        }
        if critic.output_dim() != 1 {
            return Err(EsilError::dim("critic output", 1, critic.output_dim()));
        }
        let head_dim = match &head {
            PolicyHead::Categorical { actions } => *actions,
            PolicyHead::Gaussian { log_std } => log_std.len(),
        };
        if actor.output_dim() != head_dim {
            return Err(EsilError::dim("actor output", head_dim, actor.output_dim()));
        }
        Ok(Self { actor, critic, head })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn head(&self) -> &PolicyHead {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    fn log_std_len(&self) -> usize {
        match &self.head {
            PolicyHead::Categorical { .. } => 0,
            PolicyHead::Gaussian { log_std } => log_std.len(),
        }
    }

    pub fn actor_range(&self) -> Range<usize> {
        0..self.actor.param_count()
    }

    pub fn log_std_range(&self) -> Range<usize> {
        let start = self.actor.param_count();
        start..start + self.log_std_len()
    }

    pub fn critic_range(&self) -> Range<usize> {
        let start = self.log_std_range().end;
        start..start + self.critic.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.critic_range().end
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut layout = self.actor.layout("actor");
        let log_std = self.log_std_range();
        if !log_std.is_empty() {
            layout.push(Segment {
                name: "log_std".into(),
                offset: log_std.start,
                len: log_std.len(),
            });
        }
        let base = self.critic_range().start;
        layout.extend(self.critic.layout("critic").into_iter().map(|mut s| {
            s.offset += base;
            s
        }));
        layout
    }

    pub fn params(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        values.extend_from_slice(self.actor.params());
        if let PolicyHead::Gaussian { log_std } = &self.head {
            values.extend_from_slice(log_std);
        }
        values.extend_from_slice(self.critic.params());
        ParamVector::new(values, self.layout()).expect("agent layout tiles its parameters")
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        self.set_param_slice(params.values())
    }

    pub fn set_param_slice(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(EsilError::dim("agent parameters", self.param_count(), values.len()));
        }
        let actor = self.actor_range();
        let log_std_range = self.log_std_range();
        let critic = self.critic_range();
        self.actor.set_params(&values[actor])?;
        if let PolicyHead::Gaussian { log_std } = &mut self.head {
            log_std.copy_from_slice(&values[log_std_range]);
        }
        self.critic.set_params(&values[critic])
    }

    /// Turns one row of actor output into a distribution.
    pub fn distribution_from_output(&self, output: &[f64]) -> Result<PolicyDistribution> {
        match &self.head {
            PolicyHead::Categorical { .. } => PolicyDistribution::categorical(output.to_vec()),
            PolicyHead::Gaussian { log_std } => {
                PolicyDistribution::gaussian(output.to_vec(), log_std.iter().map(|l| l.exp()).collect())
            }
        }
    }

    pub fn distribution(&self, input: &[f64]) -> Result<PolicyDistribution> {
        let out = self.actor.forward(input)?;
        self.distribution_from_output(&out)
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(input)?[0])
    }

    pub fn values_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let cache = self.critic.forward_batch(inputs)?;
        Ok(cache.output().column(0).to_vec())
    }
}

impl Policy for Agent {
    fn action_distribution(&self, observation: &[f64], goal: &[f64]) -> Result<PolicyDistribution> {
        self.distribution(&policy_input(observation, goal))
    }
}
