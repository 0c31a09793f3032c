//! Differentiable objectives: clipped surrogate, squared-error value loss and
//! hindsight imitation, plus their weighted combination.
//!
//! Every loss returns its scalar value and the gradient of that value with
//! respect to the full agent parameter vector (layout of
//! [`Agent::params`]). The policy and imitation terms are objectives to
//! maximize; the value loss is an error to minimize. The trainer descends on
//!
//! ```text
//! loss = -(alpha * (policy - c * value) + beta * esil)
//! ```
//!
//! which is what [`combined_gradient`] returns.

use ndarray::{Array2, Axis};

use crate::agent::{policy_input, Agent};
use crate::error::{EsilError, Result};
use crate::hindsight::ImitationSample;
use crate::nn::Action;

/// Transitions from the original episodes with everything the PPO terms need.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    /// One `observation ++ goal` row per transition.
    pub inputs: Array2<f64>,
    pub actions: Vec<Action>,
    pub behavior_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PpoBatch {
        PpoBatch {
            inputs: self.inputs.select(Axis(0), indices),
            actions: indices.iter().map(|&i| self.actions[i].clone()).collect(),
            behavior_log_probs: indices.iter().map(|&i| self.behavior_log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        }
    }

    /// Standardizes advantages to zero mean and unit variance in place.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt() + 1e-8;
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// `(input, action)` pairs for behavior cloning.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationBatch {
    pub inputs: Array2<f64>,
    pub actions: Vec<Action>,
}

impl ImitationBatch {
    pub fn empty(input_dim: usize) -> Self {
        Self {
            inputs: Array2::zeros((0, input_dim)),
            actions: Vec::new(),
        }
    }

    pub fn from_samples<'a, I>(input_dim: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ImitationSample>,
    {
        let mut flat = Vec::new();
        let mut actions = Vec::new();
        for s in samples {
            let row = policy_input(&s.observation, &s.goal);
            if row.len() != input_dim {
                return Err(EsilError::dim("imitation input", input_dim, row.len()));
            }
            flat.extend(row);
            actions.push(s.action.clone());
        }
        let inputs = Array2::from_shape_vec((actions.len(), input_dim), flat).expect("row-major inputs");
        Ok(Self { inputs, actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Scalar plus gradient over the whole agent parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    /// Mean clipped surrogate.
    pub surrogate: f64,
    /// Mean policy entropy over the batch.
    pub entropy: f64,
    /// `surrogate + entropy_coef * entropy`; `grad` is its gradient.
    pub objective: f64,
    pub grad: Vec<f64>,
}

/// Runs the actor over `inputs` and backpropagates
/// `sum_i coef_i * d log pi(a_i) + ent_coef_i * d H_i` with the per-sample
/// coefficients returned by `per_sample`.
fn actor_pass<F>(
    agent: &Agent,
    inputs: &Array2<f64>,
    actions: &[Action],
    entropy_weight: f64,
    mut per_sample: F,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(usize, f64) -> Result<f64>,
{
    let mut grad = vec![0.0; agent.param_count()];
    let n = actions.len();
    if n == 0 {
        return Ok((0.0, grad));
    }
    if inputs.nrows() != n {
        return Err(EsilError::dim("batch inputs", n, inputs.nrows()));
    }
    let cache = agent.actor().forward_batch(inputs.view())?;
    let output = cache.output();
    let mut out_grad = Array2::zeros(output.raw_dim());
    let log_std_range = agent.log_std_range();
    let mut log_std_grad = vec![0.0; log_std_range.len()];
    let mut entropy_sum = 0.0;
    for (i, action) in actions.iter().enumerate() {
        let row = output.row(i);
        let dist = agent.distribution_from_output(row.as_slice().expect("contiguous row"))?;
        let (lp, g) = dist.log_prob_with_grad(action)?;
        let coef = per_sample(i, lp)?;
        let mut out_row = out_grad.row_mut(i);
        if coef != 0.0 {
            for (o, d) in out_row.iter_mut().zip(&g.head) {
                *o += coef * d;
            }
            for (l, d) in log_std_grad.iter_mut().zip(&g.log_std) {
                *l += coef * d;
            }
        }
        if entropy_weight != 0.0 {
            let (h, hg) = dist.entropy_with_grad();
            entropy_sum += h;
            for (o, d) in out_row.iter_mut().zip(&hg.head) {
                *o += entropy_weight * d;
            }
            for (l, d) in log_std_grad.iter_mut().zip(&hg.log_std) {
                *l += entropy_weight * d;
            }
        } else {
            entropy_sum += dist.entropy();
        }
    }
    agent
        .actor()
        .backward_batch_into(&cache, out_grad.view(), &mut grad[agent.actor_range()])?;
    for (g, l) in grad[log_std_range].iter_mut().zip(log_std_grad) {
        *g += l;
    }
    Ok((entropy_sum / n as f64, grad))
}

/// Mean clipped surrogate
/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)` with
/// `ratio = exp(log pi - behavior_log_prob)`. Advantages are treated as
/// constants. A non-zero `entropy_coef` adds a mean-entropy bonus to the
/// objective.
pub fn ppo_policy_loss(agent: &Agent, batch: &PpoBatch, clip_ratio: f64, entropy_coef: f64) -> Result<PolicyLoss> {
    let n = batch.len();
    let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let mut surrogate = 0.0;
    let (entropy, grad) = actor_pass(agent, &batch.inputs, &batch.actions, entropy_coef * inv_n, |i, lp| {
        let ratio = (lp - batch.behavior_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(EsilError::NonFinite {
                what: "probability ratio",
                segment: format!("transition {i}"),
                index: i,
            });
        }
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio) * adv;
        if unclipped <= clipped {
            surrogate += unclipped;
            // d(ratio * A)/d(log pi) = ratio * A
            Ok(unclipped * inv_n)
        } else {
            surrogate += clipped;
            Ok(0.0)
        }
    })?;
    let surrogate = surrogate * inv_n;
    Ok(PolicyLoss {
        surrogate,
        entropy,
        objective: surrogate + entropy_coef * entropy,
        grad,
    })
}

/// Mean squared error between critic predictions and `returns`.
pub fn value_loss(agent: &Agent, inputs: &Array2<f64>, returns: &[f64]) -> Result<LossGrad> {
    let mut grad = vec![0.0; agent.param_count()];
    let n = returns.len();
    if n == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    if inputs.nrows() != n {
        return Err(EsilError::dim("value batch inputs", n, inputs.nrows()));
    }
    let cache = agent.critic().forward_batch(inputs.view())?;
    let predictions = cache.output();
    let mut out_grad = Array2::zeros((n, 1));
    let mut total = 0.0;
    for (i, &ret) in returns.iter().enumerate() {
        let residual = predictions[[i, 0]] - ret;
        total += residual * residual;
        out_grad[[i, 0]] = 2.0 * residual / n as f64;
    }
    agent
        .critic()
        .backward_batch_into(&cache, out_grad.view(), &mut grad[agent.critic_range()])?;
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}

/// Mean log-probability of the batch actions; 0 with zero gradient for an
/// empty batch.
pub fn esil_loss(agent: &Agent, batch: &ImitationBatch) -> Result<LossGrad> {
    let n = batch.len();
    let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let mut total = 0.0;
    let (_, grad) = actor_pass(agent, &batch.inputs, &batch.actions, 0.0, |_, lp| {
        total += lp;
        Ok(inv_n)
    })?;
    Ok(LossGrad {
        value: total * inv_n,
        grad,
    })
}

/// Scalar parts of one evaluation of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub esil: f64,
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub value_coef: f64,
}

/// `alpha * (policy - c * value) + beta * esil`, the objective to maximize.
pub fn combined_loss(weights: LossWeights, parts: LossParts) -> f64 {
    weights.alpha * (parts.policy - weights.value_coef * parts.value) + weights.beta * parts.esil
}

/// Descent gradient of `-combined_loss`. A zero `beta` (or a missing
/// imitation gradient) skips the imitation term entirely, so the result is
/// bit-identical to plain PPO.
pub fn combined_gradient(
    weights: LossWeights,
    policy_grad: &[f64],
    value_grad: &[f64],
    esil_grad: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if value_grad.len() != policy_grad.len() {
        return Err(EsilError::dim("value gradient", policy_grad.len(), value_grad.len()));
    }
    let mut out: Vec<f64> = policy_grad
        .iter()
        .zip(value_grad)
        .map(|(p, v)| weights.alpha * (weights.value_coef * v - p))
        .collect();
    if let Some(esil) = esil_grad {
        if weights.beta != 0.0 {
            if esil.len() != out.len() {
                return Err(EsilError::dim("imitation gradient", out.len(), esil.len()));
            }
            for (o, e) in out.iter_mut().zip(esil) {
                *o -= weights.beta * e;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionSpace;
    use crate::nn::Mlp;
    use crate::agent::PolicyHead;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_agent(seed: u64) -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Agent::new(4, &ActionSpace::Discrete(5), &[6], &mut rng).unwrap()
    }

    fn batch_for(agent: &Agent, advantages: Vec<f64>) -> PpoBatch {
        let n = advantages.len();
        let inputs = Array2::from_shape_fn((n, 4), |(i, j)| (i * 4 + j) as f64 * 0.1 - 0.5);
        let actions: Vec<_> = (0..n).map(|i| Action::Discrete(i % 5)).collect();
        let behavior_log_probs = (0..n)
            .map(|i| {
                agent
                    .distribution(inputs.row(i).as_slice().unwrap())
                    .unwrap()
                    .log_prob(&actions[i])
                    .unwrap()
            })
            .collect();
        PpoBatch {
            inputs,
            actions,
            behavior_log_probs,
            returns: vec![1.0; n],
            advantages,
        }
    }

    #[test]
    fn identity_ratio_gives_mean_advantage() {
        let agent = grid_agent(1);
        let batch = batch_for(&agent, vec![0.5, -1.0, 2.0, 0.25]);
        let loss = ppo_policy_loss(&agent, &batch, 0.2, 0.0).unwrap();
        assert!((loss.surrogate - 0.4375).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_gives_zero_loss_and_gradient() {
        let agent = grid_agent(2);
        let batch = batch_for(&agent, vec![0.0; 6]);
        let loss = ppo_policy_loss(&agent, &batch, 0.2, 0.0).unwrap();
        assert_eq!(loss.surrogate, 0.0);
        assert!(loss.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clipped_branch_contributes_bound() {
        let agent = grid_agent(3);
        let mut batch = batch_for(&agent, vec![1.0]);
        batch.behavior_log_probs[0] -= 1.5f64.ln();
        let loss = ppo_policy_loss(&agent, &batch, 0.2, 0.0).unwrap();
        assert!((loss.surrogate - 1.2).abs() < 1e-12);
        // The clipped branch is selected, so the sample carries no gradient.
        assert!(loss.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_ratio_is_reported() {
        let agent = grid_agent(3);
        let mut batch = batch_for(&agent, vec![1.0, 1.0]);
        batch.behavior_log_probs[1] = f64::NEG_INFINITY;
        let err = ppo_policy_loss(&agent, &batch, 0.2, 0.0).unwrap_err();
        assert!(matches!(err, EsilError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn value_loss_examples() {
        let critic = Mlp::zeros(&[2, 1]).unwrap();
        let actor = Mlp::zeros(&[2, 3]).unwrap();
        let agent = Agent::from_parts(actor, critic, PolicyHead::Categorical { actions: 3 }).unwrap();
        let inputs = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(value_loss(&agent, &inputs, &[2.0, 2.0, 2.0]).unwrap().value, 4.0);
        assert_eq!(value_loss(&agent, &inputs, &[0.0, 0.0, 0.0]).unwrap().value, 0.0);
    }

    #[test]
    fn esil_uniform_and_empty() {
        let actor = Mlp::zeros(&[4, 5]).unwrap();
        let critic = Mlp::zeros(&[4, 1]).unwrap();
        let agent = Agent::from_parts(actor, critic, PolicyHead::Categorical { actions: 5 }).unwrap();
        let batch = ImitationBatch {
            inputs: Array2::from_elem((3, 4), 0.3),
            actions: vec![Action::Discrete(0), Action::Discrete(3), Action::Discrete(4)],
        };
        let l = esil_loss(&agent, &batch).unwrap();
        assert!((l.value - 0.2f64.ln()).abs() < 1e-12);
        let empty = esil_loss(&agent, &ImitationBatch::empty(4)).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn esil_touches_only_actor() {
        let agent = grid_agent(4);
        let batch = ImitationBatch {
            inputs: Array2::from_elem((2, 4), 0.7),
            actions: vec![Action::Discrete(1), Action::Discrete(2)],
        };
        let l = esil_loss(&agent, &batch).unwrap();
        assert!(l.grad[agent.critic_range()].iter().all(|&g| g == 0.0));
        assert!(l.grad[agent.actor_range()].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn combined_examples() {
        let w = LossWeights { alpha: 1.0, beta: 0.5, value_coef: 1.0 };
        let parts = LossParts { policy: 2.0, value: 1.0, esil: 4.0 };
        assert_eq!(combined_loss(w, parts), 3.0);

        let p = [0.5, -1.0];
        let v = [0.25, 2.0];
        let e = [3.0, -3.0];
        let ppo_only = combined_gradient(LossWeights { beta: 0.0, ..w }, &p, &v, None).unwrap();
        let zero_beta = combined_gradient(LossWeights { beta: 0.0, ..w }, &p, &v, Some(&e)).unwrap();
        assert_eq!(ppo_only, zero_beta);
        let imitation = combined_gradient(LossWeights { alpha: 0.0, beta: 1.0, value_coef: 1.0 }, &p, &v, Some(&e)).unwrap();
        assert_eq!(imitation, vec![-3.0, 3.0]);
    }
}
