//! Independent reference computations shared by the oracle and acceptance
//! suites.
#![allow(dead_code)]

use esil_core::agent::{policy_input, Agent};
use esil_core::env::{seeded_rng, EnvKind, EnvRng};
use esil_core::losses::{ImitationBatch, PpoBatch};
use esil_core::nn::Action;
use ndarray::Array2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn small_agent(kind: EnvKind, hidden: &[usize], seed: u64) -> Agent {
    let spec = kind.spec();
    let mut rng = seeded_rng(seed);
    let mut agent = Agent::new(spec.policy_input_dim(), &spec.action_space, hidden, &mut rng).unwrap();
    // Larger output weights than the default init so every gradient is well
    // away from zero.
    let mut params = agent.params().into_values();
    for p in &mut params {
        *p += rng.random_range(-0.3..0.3);
    }
    agent.set_param_slice(&params).unwrap();
    agent
}

/// `sum_k gamma^(k - t) r_k` for every `t`, by direct double summation.
pub fn returns_oracle(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let mut total = 0.0;
            let mut discount = 1.0;
            for r in &rewards[t..] {
                total += discount * r;
                discount *= gamma;
            }
            total
        })
        .collect()
}

/// Worker-ordered sum divided by the worker count, one element at a time.
pub fn fixed_order_mean(grads: &[Vec<f64>]) -> Vec<f64> {
    let n = grads[0].len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s = grads[0][i];
        for g in &grads[1..] {
            s += g[i];
        }
        out[i] = if grads.len() > 1 { s / grads.len() as f64 } else { s };
    }
    out
}

/// Central differences of `f` with respect to every agent parameter.
pub fn numeric_gradient(agent: &Agent, f: impl Fn(&Agent) -> f64) -> Vec<f64> {
    let base = agent.params().into_values();
    let mut probe = agent.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + FD_STEP;
            probe.set_param_slice(&p).unwrap();
            let up = f(&probe);
            p[i] = base[i] - FD_STEP;
            probe.set_param_slice(&p).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative error `|a - n| / max(|a|, |n|)`, ignoring entries where
/// both are below `1e-7` in magnitude.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-7 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

pub fn random_inputs(agent: &Agent, n: usize, rng: &mut EnvRng) -> Array2<f64> {
    Array2::from_shape_fn((n, agent.input_dim()), |_| rng.random_range(0.0..1.0))
}

pub fn random_actions(agent: &Agent, inputs: &Array2<f64>, rng: &mut EnvRng) -> Vec<Action> {
    inputs
        .rows()
        .into_iter()
        .map(|row| agent.distribution(&row.to_vec()).unwrap().sample(rng))
        .collect()
}

/// PPO batch whose ratios at the current parameters are the given values,
/// so the clip kinks can be kept away from finite-difference probes.
pub fn ppo_batch_with_ratios(agent: &Agent, ratios: &[f64], advantages: &[f64], rng: &mut EnvRng) -> PpoBatch {
    let n = ratios.len();
    let inputs = random_inputs(agent, n, rng);
    let actions = random_actions(agent, &inputs, rng);
    let behavior_log_probs = (0..n)
        .map(|i| {
            let lp = agent.distribution(&inputs.row(i).to_vec()).unwrap().log_prob(&actions[i]).unwrap();
            lp - ratios[i].ln()
        })
        .collect();
    let returns = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    PpoBatch {
        inputs,
        actions,
        behavior_log_probs,
        advantages: advantages.to_vec(),
        returns,
    }
}

pub fn imitation_batch(agent: &Agent, n: usize, rng: &mut EnvRng) -> ImitationBatch {
    let inputs = random_inputs(agent, n, rng);
    let actions = random_actions(agent, &inputs, rng);
    ImitationBatch { inputs, actions }
}

pub fn log_prob_row(agent: &Agent, obs: &[f64], goal: &[f64], action: &Action) -> f64 {
    agent.distribution(&policy_input(obs, goal)).unwrap().log_prob(action).unwrap()
}
