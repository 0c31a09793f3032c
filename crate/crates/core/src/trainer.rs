//! Epoch loop: collect, relabel, compute returns, optimize the combined
//! objective over several shuffled sweeps with a synchronized data-parallel
//! update, then evaluate greedily.
//!
//! Every worker holds its own copy of the agent, its own episodes and its own
//! shuffling generators. For each minibatch step the workers compute
//! gradients on their own shards, the gradients are averaged in worker order,
//! one Adam step is applied and the new parameters are copied back to every
//! worker.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::agent::{policy_input, Agent, Policy};
use crate::baselines::{her_relabel_for_buffer, sil_value_loss, SilBuffer};
use crate::config::{TrainConfig, Variant};
use crate::env::{is_success, EnvRng, EnvSpec, EpisodeSuccess, GoalEnv};
use crate::error::{EsilError, Result};
use crate::hindsight::{build_esil_batch, prepare_episode};
use crate::losses::{
    combined_gradient, esil_loss, ppo_policy_loss, value_loss, ImitationBatch, LossWeights, PpoBatch,
};
use crate::nn::{AdamState, ParamVector};
use crate::rollout::{reduce_slices, run_parallel, Trajectory, Worker};

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub success_rate: f64,
    /// Imitation weight applied this epoch (0 for variants without the
    /// episodic imitation term).
    pub beta: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub esil_loss: f64,
    /// Wall-clock seconds, only when timing is recorded.
    pub seconds: Option<f64>,
    pub episodes_collected: usize,
    pub n_esil: usize,
    pub n_total: usize,
}

/// Outcome of greedy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub outcomes: Vec<bool>,
}

/// Runs `episodes` episodes with the most likely action at every step and
/// reports the fraction that succeeded (see [`EpisodeSuccess`]).
pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    env: &mut dyn GoalEnv,
    episodes: usize,
    rng: &mut EnvRng,
) -> Result<EvalReport> {
    let spec = env.spec().clone();
    let mut outcomes = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let goal = obs.desired_goal.clone();
        let mut reached = false;
        for _ in 0..spec.episode_length {
            let action = policy.action_distribution(&obs.observation, &goal)?.mode();
            obs = env.step(&action, rng)?.observation;
            reached |= is_success(&spec, &obs.achieved_goal, &goal)?;
        }
        outcomes.push(match spec.episode_success {
            EpisodeSuccess::AnyStep => reached,
            EpisodeSuccess::FinalStep => is_success(&spec, &obs.achieved_goal, &goal)?,
        });
    }
    let success_rate = if episodes == 0 {
        0.0
    } else {
        outcomes.iter().filter(|&&s| s).count() as f64 / episodes as f64
    };
    Ok(EvalReport { success_rate, outcomes })
}

/// Per-worker training data for one epoch.
struct Shard {
    ppo: PpoBatch,
    esil: ImitationBatch,
}

struct WorkerState {
    rollout: Worker,
    agent: Agent,
    shuffle_rng: EnvRng,
    esil_rng: EnvRng,
    eval_env: Box<dyn GoalEnv>,
    eval_rng: EnvRng,
    shard: Option<Shard>,
}

/// Summary of the collection phase of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectStats {
    pub episodes: usize,
    pub n_esil: usize,
    pub n_total: usize,
    /// `n_esil / n_total` of the freshly collected data.
    pub computed_beta: f64,
    /// Weight applied to the imitation term.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct LossTotals {
    policy: f64,
    value: f64,
    esil: f64,
    steps: usize,
}

pub struct Trainer {
    config: TrainConfig,
    spec: EnvSpec,
    leader: Agent,
    adam: AdamState,
    workers: Vec<WorkerState>,
    sil: Option<(SilBuffer, EnvRng)>,
    epoch: usize,
}

fn ppo_batch(agent: &Agent, trajs: &[Trajectory], normalize: bool) -> Result<PpoBatch> {
    let dim = agent.input_dim();
    let n: usize = trajs.iter().map(Trajectory::len).sum();
    let mut flat = Vec::with_capacity(n * dim);
    let mut actions = Vec::with_capacity(n);
    let mut behavior_log_probs = Vec::with_capacity(n);
    let mut returns = Vec::with_capacity(n);
    for traj in trajs {
        for (t, tr) in traj.transitions.iter().enumerate() {
            flat.extend(policy_input(&tr.state, &tr.desired_goal));
            actions.push(tr.action.clone());
            behavior_log_probs.push(tr.behavior_log_prob);
            returns.push(traj.returns[t]);
        }
    }
    let inputs = Array2::from_shape_vec((n, dim), flat).map_err(|_| EsilError::dim("policy input", dim, 0))?;
    let values = agent.values_batch(inputs.view())?;
    let advantages = returns.iter().zip(&values).map(|(r, v)| r - v).collect();
    let mut batch = PpoBatch {
        inputs,
        actions,
        behavior_log_probs,
        advantages,
        returns,
    };
    if normalize {
        batch.normalize_advantages();
    }
    Ok(batch)
}

/// Splits `0..n` (shuffled) into chunks of `size`.
fn shuffled_chunks(n: usize, size: usize, rng: &mut EnvRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

impl Trainer {
    /// Builds the agent and per-worker state. All generators are derived from
    /// `master_seed` in a fixed order that does not depend on the variant.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.env.spec();
        let mut seeder = EnvRng::seed_from_u64(config.master_seed);
        let mut init_rng = EnvRng::seed_from_u64(seeder.random());
        let leader = Agent::new(
            spec.policy_input_dim(),
            &spec.action_space,
            &config.hidden_sizes,
            &mut init_rng,
        )?;
        let workers = (0..config.worker_count)
            .map(|i| {
                let rollout = Worker::new(i, config.env.build(config.random_action_prob), seeder.random());
                WorkerState {
                    rollout,
                    agent: leader.clone(),
                    shuffle_rng: EnvRng::seed_from_u64(seeder.random()),
                    esil_rng: EnvRng::seed_from_u64(seeder.random()),
                    eval_env: config.env.build(config.random_action_prob),
                    // Evaluation streams are disjoint from training streams.
                    eval_rng: EnvRng::seed_from_u64(seeder.random()),
                    shard: None,
                }
            })
            .collect();
        let sil_rng = EnvRng::seed_from_u64(seeder.random());
        let sil = if config.variant.uses_sil() {
            Some((SilBuffer::new(config.sil_capacity)?, sil_rng))
        } else {
            None
        };
        let adam = AdamState::new(leader.param_count(), config.learning_rate, config.adam_epsilon);
        Ok(Self {
            config,
            spec,
            leader,
            adam,
            workers,
            sil,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.leader
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn sil_buffer(&self) -> Option<&SilBuffer> {
        self.sil.as_ref().map(|(b, _)| b)
    }

    /// Parameter checksum of every worker's agent copy.
    pub fn worker_checksums(&self) -> Vec<u64> {
        self.workers.iter().map(|w| w.agent.params().checksum()).collect()
    }

    /// PPO data of every worker for the current epoch (after collection).
    pub fn ppo_batches(&self) -> Vec<&PpoBatch> {
        self.workers
            .iter()
            .filter_map(|w| w.shard.as_ref().map(|s| &s.ppo))
            .collect()
    }

    /// Collects the epoch's episodes, relabels them, computes returns,
    /// selection masks and advantages, and fills the replay buffer for the
    /// replay variants.
    pub fn collect(&mut self) -> Result<CollectStats> {
        let per_worker = self.config.episodes_per_epoch / self.config.worker_count;
        let spec = &self.spec;
        let gamma = self.config.gamma;
        let use_selection = self.config.selection_module;
        let normalize = self.config.advantage_normalization;
        let esil_on = self.config.variant == Variant::PpoEsil;
        let results = run_parallel(&mut self.workers, |_, w| {
            let mut trajs = w.rollout.collect(&w.agent, per_worker)?;
            let htrajs = trajs
                .iter_mut()
                .map(|t| prepare_episode(t, spec, gamma))
                .collect::<Result<Vec<_>>>()?;
            let batch = build_esil_batch(&trajs, &htrajs, use_selection)?;
            let esil = if esil_on {
                ImitationBatch::from_samples(w.agent.input_dim(), &batch.samples)?
            } else {
                ImitationBatch::empty(w.agent.input_dim())
            };
            let ppo = ppo_batch(&w.agent, &trajs, normalize)?;
            w.shard = Some(Shard { ppo, esil });
            Ok((batch.n_esil, batch.n_total, trajs))
        })?;
        let n_esil: usize = results.iter().map(|r| r.0).sum();
        let n_total: usize = results.iter().map(|r| r.1).sum();
        if let Some((buffer, _)) = self.sil.as_mut() {
            for (_, _, trajs) in &results {
                for traj in trajs {
                    buffer.store(traj)?;
                    if self.config.variant == Variant::PpoSilHer {
                        buffer.store(&her_relabel_for_buffer(traj, spec, gamma)?)?;
                    }
                }
            }
        }
        let computed_beta = if n_total == 0 { 0.0 } else { n_esil as f64 / n_total as f64 };
        let beta = match (esil_on, self.config.beta_override) {
            (false, _) => 0.0,
            (true, Some(b)) => b,
            (true, None) => computed_beta,
        };
        Ok(CollectStats {
            episodes: per_worker * self.workers.len(),
            n_esil,
            n_total,
            computed_beta,
            beta,
        })
    }

    /// Runs `updates_per_epoch` shuffled sweeps over the collected data.
    fn optimize(&mut self, beta: f64) -> Result<LossTotals> {
        let cfg = &self.config;
        let weights = LossWeights {
            alpha: cfg.alpha,
            beta,
            value_coef: cfg.value_coef,
        };
        let mut totals = LossTotals::default();
        for _ in 0..cfg.updates_per_epoch {
            let mut plans = Vec::with_capacity(self.workers.len());
            for w in &mut self.workers {
                let shard = w.shard.as_ref().expect("collect runs before optimize");
                let ppo_chunks = shuffled_chunks(shard.ppo.len(), cfg.minibatch_size, &mut w.shuffle_rng);
                let k = ppo_chunks.len();
                let esil_chunks = if beta != 0.0 && !shard.esil.is_empty() {
                    shuffled_chunks(shard.esil.len(), shard.esil.len().div_ceil(k), &mut w.esil_rng)
                } else {
                    Vec::new()
                };
                plans.push((ppo_chunks, esil_chunks));
            }
            let steps = plans.iter().map(|p| p.0.len()).max().unwrap_or(0);
            let sil_priorities = match &self.sil {
                Some((buffer, _)) if !buffer.is_empty() => Some(buffer.priorities(&self.leader)?),
                _ => None,
            };
            for j in 0..steps {
                let clip = cfg.clip_ratio;
                let entropy = cfg.entropy_coef;
                let results = run_parallel(&mut self.workers, |i, w| {
                    let shard = w.shard.as_ref().expect("collect runs before optimize");
                    let (ppo_chunks, esil_chunks) = &plans[i];
                    let Some(idx) = ppo_chunks.get(j) else {
                        return Ok((vec![0.0; w.agent.param_count()], 0.0, 0.0, 0.0));
                    };
                    let mb = shard.ppo.select(idx);
                    let p = ppo_policy_loss(&w.agent, &mb, clip, entropy)?;
                    let v = value_loss(&w.agent, &mb.inputs, &mb.returns)?;
                    let e = match esil_chunks.get(j) {
                        Some(eidx) => Some(esil_loss(
                            &w.agent,
                            &ImitationBatch {
                                inputs: shard.esil.inputs.select(ndarray::Axis(0), eidx),
                                actions: eidx.iter().map(|&k| shard.esil.actions[k].clone()).collect(),
                            },
                        )?),
                        None => None,
                    };
                    let grad = combined_gradient(weights, &p.grad, &v.grad, e.as_ref().map(|e| e.grad.as_slice()))?;
                    Ok((grad, p.objective, v.value, e.map_or(0.0, |e| e.value)))
                })?;
                let grads: Vec<&[f64]> = results.iter().map(|r| r.0.as_slice()).collect();
                let mut grad = reduce_slices(&grads)?;
                let w = results.len() as f64;
                totals.policy += results.iter().map(|r| r.1).sum::<f64>() / w;
                totals.value += results.iter().map(|r| r.2).sum::<f64>() / w;
                totals.esil += results.iter().map(|r| r.3).sum::<f64>() / w;
                totals.steps += 1;
                if let (Some((buffer, rng)), Some(priorities)) = (self.sil.as_mut(), sil_priorities.as_ref()) {
                    let batch = buffer.sample_with_priorities(priorities, cfg.sil_batch_size, rng);
                    if !batch.is_empty() {
                        let imitation = ImitationBatch::from_samples(self.leader.input_dim(), &batch.samples)?;
                        let e = esil_loss(&self.leader, &imitation)?;
                        for (g, d) in grad.iter_mut().zip(&e.grad) {
                            *g -= d;
                        }
                        if cfg.sil_value_loss {
                            let v = sil_value_loss(&self.leader, &imitation.inputs, &batch.returns)?;
                            for (g, d) in grad.iter_mut().zip(&v.grad) {
                                *g += cfg.sil_value_coef * d;
                            }
                        }
                    }
                }
                let grad = self.leader.params().with_values(grad)?;
                let mut params = self.leader.params();
                self.adam.step(&mut params, &grad)?;
                self.leader.set_params(&params)?;
                for w in &mut self.workers {
                    w.agent.set_param_slice(params.values())?;
                }
            }
        }
        for (name, v) in [("policy loss", totals.policy), ("value loss", totals.value), ("imitation loss", totals.esil)] {
            if !v.is_finite() {
                return Err(EsilError::NonFinite {
                    what: "loss",
                    segment: name.into(),
                    index: self.epoch,
                });
            }
        }
        Ok(totals)
    }

    /// Greedy evaluation on every worker's evaluation environment; the
    /// success rate is averaged across workers.
    pub fn evaluate(&mut self) -> Result<f64> {
        let episodes = self.config.eval_episodes;
        let rates = run_parallel(&mut self.workers, |_, w| {
            Ok(evaluate(&w.agent, w.eval_env.as_mut(), episodes, &mut w.eval_rng)?.success_rate)
        })?;
        Ok(rates.iter().sum::<f64>() / rates.len() as f64)
    }

    fn restore(&mut self, params: &ParamVector, adam: AdamState) -> Result<()> {
        self.leader.set_params(params)?;
        for w in &mut self.workers {
            w.agent.set_param_slice(params.values())?;
        }
        self.adam = adam;
        Ok(())
    }

    /// One full epoch. On a non-finite loss or gradient the parameters and
    /// optimizer state are rolled back to the start of the epoch and the
    /// error is returned.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let snapshot = (self.leader.params(), self.adam.clone());
        let outcome = self.collect().and_then(|stats| Ok((self.optimize(stats.beta)?, stats)));
        let (totals, stats) = match outcome {
            Ok(v) => v,
            Err(e) => {
                self.restore(&snapshot.0, snapshot.1)?;
                return Err(e);
            }
        };
        for w in &mut self.workers {
            w.shard = None;
        }
        let success_rate = self.evaluate()?;
        let steps = totals.steps.max(1) as f64;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            success_rate,
            beta: stats.beta,
            policy_loss: totals.policy / steps,
            value_loss: totals.value / steps,
            esil_loss: totals.esil / steps,
            seconds: self.config.record_timing.then(|| start.elapsed().as_secs_f64()),
            episodes_collected: stats.episodes,
            n_esil: stats.n_esil,
            n_total: stats.n_total,
        };
        self.epoch += 1;
        Ok(metrics)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each one.
    pub fn train<F>(&mut self, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    {
        let mut out = Vec::with_capacity(self.config.epochs.saturating_sub(self.epoch));
        while self.epoch < self.config.epochs {
            let m = self.run_epoch()?;
            on_epoch(self, &m)?;
            out.push(m);
        }
        Ok(out)
    }

    pub fn into_agent(self) -> Agent {
        self.leader
    }
}

/// Trains from scratch and returns the final agent with its metrics.
pub fn train(config: TrainConfig) -> Result<(Agent, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(config)?;
    let metrics = trainer.train(|_, _| Ok(()))?;
    Ok((trainer.into_agent(), metrics))
}
