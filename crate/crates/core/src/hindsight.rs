//! Episodic hindsight: final-state goal relabeling, discounted returns, the
//! per-step selection filter and the adaptive imitation weight.
//!
//! For an episode collected under goal `g`, the hindsight copy replaces `g`
//! with `g' = g^ac_T` (the achieved goal after the final step) and recomputes
//! every reward against `g'`. Step `t` of the hindsight copy is kept for
//! imitation only when its return strictly exceeds the original return at the
//! same step. The imitation weight is the fraction of all collected steps that
//! were kept.

use crate::env::{compute_reward, EnvSpec};
use crate::error::{EsilError, Result};
use crate::nn::Action;
use crate::rollout::Trajectory;

/// Discounted return of every step, truncated at the episode end:
/// `R_t = r_t + gamma * R_{t+1}`, `R_T = 0`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        running = r + gamma * running;
        returns[t] = running;
    }
    returns
}

/// Fills `traj.returns` from its rewards.
pub fn fill_returns(traj: &mut Trajectory, gamma: f64) {
    traj.returns = compute_returns(&traj.rewards(), gamma);
}

/// Hindsight copy of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct HindsightTrajectory {
    /// Cloned transitions with `desired_goal = g'` and recomputed rewards.
    /// `trajectory.returns` holds `R'` once [`evaluate_selection`] ran.
    pub trajectory: Trajectory,
    pub hindsight_goal: Vec<f64>,
    /// `selection_mask[t] = R'_t > R_t`; empty until evaluated.
    pub selection_mask: Vec<bool>,
}

impl HindsightTrajectory {
    pub fn returns(&self) -> &[f64] {
        &self.trajectory.returns
    }

    pub fn selected_count(&self) -> usize {
        self.selection_mask.iter().filter(|&&m| m).count()
    }
}

/// Clones every transition with the desired goal replaced by the final
/// achieved goal and rewards recomputed against it. States, actions and
/// behavior log-probabilities are untouched.
pub fn relabel_episode(traj: &Trajectory, spec: &EnvSpec) -> Result<HindsightTrajectory> {
    let hindsight_goal = traj
        .final_achieved_goal()
        .ok_or_else(|| EsilError::InvalidConfig("cannot relabel an empty trajectory".into()))?
        .to_vec();
    let transitions = traj
        .transitions
        .iter()
        .map(|t| {
            let mut relabeled = t.clone();
            relabeled.reward = compute_reward(spec, &t.achieved_goal_after, &hindsight_goal)?;
            relabeled.desired_goal = hindsight_goal.clone();
            Ok(relabeled)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HindsightTrajectory {
        trajectory: Trajectory {
            transitions,
            returns: Vec::new(),
            worker: traj.worker,
            episode: traj.episode,
        },
        hindsight_goal,
        selection_mask: Vec::new(),
    })
}

/// `mask[t] = hindsight[t] > original[t]` (strict).
pub fn select_steps(original_returns: &[f64], hindsight_returns: &[f64]) -> Result<Vec<bool>> {
    if original_returns.len() != hindsight_returns.len() {
        return Err(EsilError::dim(
            "hindsight returns",
            original_returns.len(),
            hindsight_returns.len(),
        ));
    }
    Ok(original_returns
        .iter()
        .zip(hindsight_returns)
        .map(|(r, r_prime)| r_prime > r)
        .collect())
}

/// Computes `R'` for `htraj` and its selection mask against the original
/// returns (which must already be filled).
pub fn evaluate_selection(original: &Trajectory, htraj: &mut HindsightTrajectory, gamma: f64) -> Result<()> {
    fill_returns(&mut htraj.trajectory, gamma);
    htraj.selection_mask = select_steps(&original.returns, &htraj.trajectory.returns)?;
    Ok(())
}

/// Fills the original returns, relabels, and evaluates the selection filter.
pub fn prepare_episode(traj: &mut Trajectory, spec: &EnvSpec, gamma: f64) -> Result<HindsightTrajectory> {
    fill_returns(traj, gamma);
    let mut htraj = relabel_episode(traj, spec)?;
    evaluate_selection(traj, &mut htraj, gamma)?;
    Ok(htraj)
}

/// One hindsight step kept for imitation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationSample {
    pub observation: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: Action,
}

/// Selected hindsight steps of an epoch and the resulting imitation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EsilBatch {
    pub samples: Vec<ImitationSample>,
    pub n_esil: usize,
    pub n_total: usize,
    pub beta: f64,
}

impl EsilBatch {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Flattens the selected hindsight steps (every step when `use_selection` is
/// false) and sets `beta = n_esil / n_total`, where `n_total` counts the
/// original transitions.
pub fn build_esil_batch(
    trajs: &[Trajectory],
    htrajs: &[HindsightTrajectory],
    use_selection: bool,
) -> Result<EsilBatch> {
    if trajs.len() != htrajs.len() {
        return Err(EsilError::dim("hindsight trajectories", trajs.len(), htrajs.len()));
    }
    let n_total: usize = trajs.iter().map(Trajectory::len).sum();
    let mut samples = Vec::new();
    for (traj, htraj) in trajs.iter().zip(htrajs) {
        if htraj.trajectory.len() != traj.len() {
            return Err(EsilError::dim("hindsight trajectory length", traj.len(), htraj.trajectory.len()));
        }
        if use_selection && htraj.selection_mask.len() != traj.len() {
            return Err(EsilError::dim("selection mask", traj.len(), htraj.selection_mask.len()));
        }
        for (t, tr) in htraj.trajectory.transitions.iter().enumerate() {
            if !use_selection || htraj.selection_mask[t] {
                samples.push(ImitationSample {
                    observation: tr.state.clone(),
                    goal: tr.desired_goal.clone(),
                    action: tr.action.clone(),
                });
            }
        }
    }
    let n_esil = samples.len();
    let beta = if n_total == 0 { 0.0 } else { n_esil as f64 / n_total as f64 };
    Ok(EsilBatch {
        samples,
        n_esil,
        n_total,
        beta,
    })
}
