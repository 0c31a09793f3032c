//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line each and exits non-zero if any failed.
//!
//! Training runs use the default hyperparameters of each environment; only
//! the hidden width is narrowed (see `HIDDEN`) to keep the suite within a
//! single-core budget.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use esil_core::baselines::sil_value_loss;
use esil_core::env::{compute_reward, seeded_rng, EnvKind};
use esil_core::hindsight::{compute_returns, relabel_episode};
use esil_core::losses::{combined_gradient, esil_loss, ppo_policy_loss, value_loss, LossWeights};
use esil_core::metrics::{MetricsRow, MetricsWriter};
use esil_core::nn::{Mlp, ParamVector};
use esil_core::rollout::{reduce_gradients, Trajectory, Transition};
use esil_core::{Action, EpochMetrics, TrainConfig, Trainer, Variant};
use rand::Rng;

const HIDDEN: [usize; 3] = [64, 64, 64];
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn config(env: EnvKind, variant: Variant, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_env(env);
    cfg.variant = variant;
    cfg.master_seed = seed;
    cfg.hidden_sizes = HIDDEN.to_vec();
    cfg
}

fn run(cfg: TrainConfig) -> Vec<EpochMetrics> {
    let start = Instant::now();
    let label = format!("{} {} seed {} selection {}", cfg.env, cfg.variant, cfg.master_seed, cfg.selection_module);
    let mut trainer = Trainer::new(cfg).expect("valid config");
    let metrics = trainer.train(|_, _| Ok(())).expect("training succeeds");
    let success: Vec<String> = metrics.iter().map(|m| format!("{:.2}", m.success_rate)).collect();
    eprintln!("  [{label}] {:.0}s success {}", start.elapsed().as_secs_f64(), success.join(" "));
    metrics
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn last10_success(m: &[EpochMetrics]) -> f64 {
    mean(m[m.len() - 10..].iter().map(|e| e.success_rate))
}

/// First epoch index with success >= `threshold`, or the epoch count when
/// never reached.
fn epochs_to(m: &[EpochMetrics], threshold: f64) -> usize {
    m.iter().position(|e| e.success_rate >= threshold).unwrap_or(m.len())
}

struct Report {
    results: Vec<(u8, bool, String)>,
}

impl Report {
    fn record(&mut self, id: u8, name: &str, pass: bool, detail: String) {
        println!("criterion {id} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass, detail));
    }
}

fn oracle_suite() -> (bool, String) {
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let mut rng = seeded_rng(31);
    let mut returns_ok = true;
    for len in [1, 5, 32, 50, 200] {
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = compute_returns(&rewards, 0.98);
        let slow = returns_oracle(&rewards, 0.98);
        returns_ok &= fast.iter().zip(&slow).all(|(f, s)| (f - s).abs() <= 1e-12);
    }
    checks.push(("returns vs direct summation", returns_ok));

    let mut grads_ok = true;
    for (kind, hidden) in [(EnvKind::EmptyRoom, vec![8]), (EnvKind::PointPush, vec![6, 5])] {
        let agent = small_agent(kind, &hidden, 7);
        assert!(agent.param_count() <= 200);
        let batch = ppo_batch_with_ratios(
            &agent,
            &[1.0, 0.7, 1.1, 1.45, 0.95, 0.6],
            &[0.5, -1.2, 2.0, 0.8, -0.4, 1.5],
            &mut rng,
        );
        let imitation = imitation_batch(&agent, 8, &mut rng);
        let p = ppo_policy_loss(&agent, &batch, 0.2, 0.0).unwrap();
        let n = numeric_gradient(&agent, |a| ppo_policy_loss(a, &batch, 0.2, 0.0).unwrap().objective);
        grads_ok &= max_rel_error(&p.grad, &n) <= FD_REL_TOL;
        let v = value_loss(&agent, &batch.inputs, &batch.returns).unwrap();
        let n = numeric_gradient(&agent, |a| value_loss(a, &batch.inputs, &batch.returns).unwrap().value);
        grads_ok &= max_rel_error(&v.grad, &n) <= FD_REL_TOL;
        let s = sil_value_loss(&agent, &batch.inputs, &batch.returns).unwrap();
        let n = numeric_gradient(&agent, |a| sil_value_loss(a, &batch.inputs, &batch.returns).unwrap().value);
        grads_ok &= max_rel_error(&s.grad, &n) <= FD_REL_TOL;
        let e = esil_loss(&agent, &imitation).unwrap();
        let n = numeric_gradient(&agent, |a| esil_loss(a, &imitation).unwrap().value);
        grads_ok &= max_rel_error(&e.grad, &n) <= FD_REL_TOL;
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.3,
            value_coef: 1.0,
        };
        let combined = combined_gradient(w, &p.grad, &v.grad, Some(&e.grad)).unwrap();
        let n = numeric_gradient(&agent, |a| {
            let p = ppo_policy_loss(a, &batch, 0.2, 0.0).unwrap().objective;
            let v = value_loss(a, &batch.inputs, &batch.returns).unwrap().value;
            let e = esil_loss(a, &imitation).unwrap().value;
            -(p - v + 0.3 * e)
        });
        grads_ok &= max_rel_error(&combined, &n) <= FD_REL_TOL;
    }
    let mut net_rng = seeded_rng(3);
    let net = Mlp::new(&[4, 8, 3], 1.0, &mut net_rng).unwrap();
    let x = [0.2, -0.7, 0.4, 0.9];
    let cot = [0.3, -1.0, 0.6];
    let analytic = net.backward(&x, &cot).unwrap();
    let base = net.params().to_vec();
    let numeric: Vec<f64> = (0..base.len())
        .map(|i| {
            let f = |d: f64| {
                let mut p = base.clone();
                p[i] += d;
                let out = Mlp::from_params(&[4, 8, 3], p).unwrap().forward(&x).unwrap();
                out.iter().zip(&cot).map(|(o, c)| o * c).sum::<f64>()
            };
            (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect();
    grads_ok &= max_rel_error(analytic.values(), &numeric) <= FD_REL_TOL;
    checks.push(("loss and backprop gradients vs central differences", grads_ok));

    let grads: Vec<Vec<f64>> = (0..4).map(|_| (0..64).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
    let pvs: Vec<ParamVector> = grads
        .iter()
        .map(|g| ParamVector::from_blocks([("g".to_string(), g.as_slice())]))
        .collect();
    let reduced = reduce_gradients(&pvs).unwrap();
    let expected = fixed_order_mean(&grads);
    let exact = reduced.values().iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits());
    checks.push(("gradient reduction vs fixed-order sum", exact));

    let spec = EnvKind::PointReach.spec();
    let goal = vec![0.9, 0.9];
    let transitions: Vec<Transition> = (0..8)
        .map(|t| {
            let before = vec![0.1 + 0.08 * t as f64, 0.3];
            let after = vec![0.1 + 0.08 * (t + 1) as f64, 0.3];
            Transition {
                state: before.clone(),
                desired_goal: goal.clone(),
                achieved_goal_before: before,
                achieved_goal_after: after.clone(),
                action: Action::Continuous(vec![1.0, 0.0]),
                reward: compute_reward(&spec, &after, &goal).unwrap(),
                behavior_log_prob: 0.0,
                next_state: after,
            }
        })
        .collect();
    let traj = Trajectory {
        transitions,
        returns: Vec::new(),
        worker: 0,
        episode: 0,
    };
    let once = relabel_episode(&traj, &spec).unwrap();
    let twice = relabel_episode(&once.trajectory, &spec).unwrap();
    let mut example = vec![-1.0; 8];
    example[7] = 0.0;
    checks.push((
        "relabel example and idempotence",
        traj.rewards() == vec![-1.0; 8] && once.trajectory.rewards() == example && twice.trajectory == once.trajectory,
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        format!("{} oracle checks agree", checks.len())
    } else {
        format!("disagreements: {}", failed.join("; "))
    };
    (failed.is_empty(), detail)
}

fn param_trajectory(cfg: TrainConfig) -> Vec<Vec<u64>> {
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut snapshots = vec![trainer.agent().params().values().iter().map(|v| v.to_bits()).collect()];
    trainer
        .train(|t, _| {
            snapshots.push(t.agent().params().values().iter().map(|v| v.to_bits()).collect());
            Ok(())
        })
        .unwrap();
    snapshots
}

fn metrics_bytes(cfg: TrainConfig) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut writer = MetricsWriter::create(&path).unwrap();
    let mut trainer = Trainer::new(cfg).unwrap();
    trainer.train(|_, m| writer.write(&MetricsRow::from(m))).unwrap();
    std::fs::read(&path).unwrap()
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut report = Report { results: Vec::new() };

    let (ok, detail) = oracle_suite();
    report.record(6, "oracle equivalence", ok, detail);

    let mut identical = true;
    for env in [EnvKind::EmptyRoom, EnvKind::PointPush] {
        let mut esil = config(env, Variant::PpoEsil, 11);
        esil.epochs = 5;
        esil.beta_override = Some(0.0);
        let mut ppo = esil.clone();
        ppo.variant = Variant::Ppo;
        ppo.beta_override = None;
        identical &= param_trajectory(esil) == param_trajectory(ppo);
    }
    report.record(
        7,
        "reduction to PPO",
        identical,
        format!("parameters after each of 5 epochs bit-identical on empty-room and point-push: {identical}"),
    );

    let mut same = true;
    for (env, variant) in [
        (EnvKind::EmptyRoom, Variant::PpoEsil),
        (EnvKind::EmptyRoom, Variant::PpoSilHer),
        (EnvKind::PointPush, Variant::PpoEsil),
    ] {
        let mut cfg = config(env, variant, 23);
        cfg.epochs = 3;
        same &= metrics_bytes(cfg.clone()) == metrics_bytes(cfg);
    }
    report.record(8, "determinism", same, format!("repeated runs give byte-identical metrics CSV: {same}"));

    let esil: Vec<_> = SEEDS.iter().map(|&s| run(config(EnvKind::EmptyRoom, Variant::PpoEsil, s))).collect();
    let ppo: Vec<_> = SEEDS.iter().map(|&s| run(config(EnvKind::EmptyRoom, Variant::Ppo, s))).collect();
    let no_sel: Vec<_> = SEEDS
        .iter()
        .map(|&s| {
            let mut cfg = config(EnvKind::EmptyRoom, Variant::PpoEsil, s);
            cfg.selection_module = false;
            run(cfg)
        })
        .collect();

    let finals: Vec<f64> = esil.iter().map(|m| last10_success(m)).collect();
    let avg = mean(finals.iter().copied());
    report.record(
        1,
        "Empty Room PPO+ESIL success",
        avg >= 0.95,
        format!("mean last-10-epoch success {avg:.3} (per seed {finals:.3?}), need >= 0.95"),
    );

    let pairs: Vec<(usize, usize)> = esil.iter().zip(&ppo).map(|(e, p)| (epochs_to(e, 0.9), epochs_to(p, 0.9))).collect();
    let faster = pairs.iter().filter(|(e, p)| e < p).count();
    report.record(
        2,
        "convergence speed vs PPO",
        faster >= 4,
        format!("ESIL strictly faster to 0.9 in {faster}/5 seeds (epochs ESIL vs PPO {pairs:?})"),
    );

    let ratios: Vec<f64> = esil
        .iter()
        .map(|m| {
            let first = mean(m[..10].iter().map(|e| e.beta));
            let last = mean(m[m.len() - 10..].iter().map(|e| e.beta));
            last / first
        })
        .collect();
    let beta_ok = ratios.iter().all(|&r| r <= 0.5);
    report.record(
        3,
        "beta decreases",
        beta_ok,
        format!("last-10 / first-10 mean beta per seed {ratios:.3?}, need <= 0.5 each"),
    );

    let without = mean(no_sel.iter().map(|m| last10_success(m)));
    report.record(
        4,
        "selection ablation",
        without <= avg,
        format!("last-10 success without selection {without:.3} vs with {avg:.3}"),
    );

    let push_esil: Vec<_> = SEEDS.iter().map(|&s| run(config(EnvKind::PointPush, Variant::PpoEsil, s))).collect();
    let push_ppo: Vec<_> = SEEDS.iter().map(|&s| run(config(EnvKind::PointPush, Variant::Ppo, s))).collect();
    let reached = push_esil
        .iter()
        .filter(|m| m.iter().any(|e| e.success_rate >= 0.8))
        .count();
    let ppo_best: Vec<f64> = push_ppo
        .iter()
        .map(|m| m.iter().map(|e| e.success_rate).fold(0.0, f64::max))
        .collect();
    let ppo_low = ppo_best.iter().all(|&b| b <= 0.2);
    let esil_best: Vec<f64> = push_esil
        .iter()
        .map(|m| m.iter().map(|e| e.success_rate).fold(0.0, f64::max))
        .collect();
    report.record(
        5,
        "PointPush gap",
        reached >= 3 && ppo_low,
        format!(
            "ESIL reached 0.8 in {reached}/5 seeds (best {esil_best:.3?}); PPO best per seed {ppo_best:.3?}, need all <= 0.2"
        ),
    );

    report.results.sort_by_key(|r| r.0);
    let failed: Vec<u8> = report.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        report.results.len() - failed.len(),
        report.results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
