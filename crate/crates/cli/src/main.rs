use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esil_core::checkpoint;
use esil_core::env::{seeded_rng, ActionSpace};
use esil_core::metrics::{aggregate, read_metrics, write_curves, MetricsRow, MetricsWriter};
use esil_core::{evaluate, Agent, EnvKind, EsilError, Result, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "esil", version, about = "Train and evaluate goal-conditioned PPO agents with episodic self-imitation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// KEY=VALUE, applied after the config file. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory. Defaults to `$ESIL_RUN_ROOT/<env>-<variant>-seed<seed>`
        /// (`runs/` when the variable is unset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid world action noise during evaluation.
        #[arg(long, default_value_t = 0.2)]
        random_action_prob: f64,
    },
    /// Per-epoch median and quartiles of success and beta across runs.
    Curves {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| EsilError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(config_path: &Path, seed: Option<u64>, overrides: &[String], out: Option<PathBuf>) -> Result<PathBuf> {
    let text = fs::read_to_string(config_path).map_err(|e| EsilError::Io {
        path: config_path.to_path_buf(),
        source: e,
    })?;
    let mut config = TrainConfig::parse(&text).map_err(|e| match e {
        EsilError::Config { line, message } => {
            EsilError::InvalidConfig(format!("{} line {line}: {message}", config_path.display()))
        }
        other => other,
    })?;
    config.apply_overrides(overrides)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    let dir = out.unwrap_or_else(|| {
        let root = std::env::var_os("ESIL_RUN_ROOT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{}-{}-seed{}", config.env, config.variant, config.master_seed))
    });
    fs::create_dir_all(&dir).map_err(|e| EsilError::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_file(&dir.join("config.cfg"), &text)?;
    write_file(&dir.join("resolved.cfg"), config.to_config_text())?;

    let mut trainer = Trainer::new(config.clone())?;
    let latest = dir.join("latest.ckpt");
    let best = dir.join("best.ckpt");
    checkpoint::save(trainer.agent(), &latest)?;
    checkpoint::save(trainer.agent(), &best)?;
    let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let mut best_success = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let result = trainer.train(|t, m| {
        writer.write(&MetricsRow::from(m))?;
        checkpoint::save(t.agent(), &latest)?;
        if m.success_rate > best_success {
            best_success = m.success_rate;
            best_epoch = Some(m.epoch);
            checkpoint::save(t.agent(), &best)?;
        }
        eprintln!(
            "epoch {:>4}  success {:.3}  beta {:.3}  policy {:+.4}  value {:.4}  esil {:+.4}",
            m.epoch, m.success_rate, m.beta, m.policy_loss, m.value_loss, m.esil_loss
        );
        Ok(())
    });
    let metrics = match result {
        Ok(m) => m,
        Err(e) => {
            write_file(
                &dir.join("summary.txt"),
                format!("status = failed\nerror = {e}\ncompleted_epochs = {}\n", trainer.epoch()),
            )?;
            return Err(e);
        }
    };
    let tail = &metrics[metrics.len().saturating_sub(10)..];
    let tail_mean = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|m| m.success_rate).sum::<f64>() / tail.len() as f64
    };
    let mut summary = format!(
        "status = ok\nenv = {}\nvariant = {}\nmaster_seed = {}\nepochs = {}\nparameters = {}\n",
        config.env,
        config.variant,
        config.master_seed,
        metrics.len(),
        trainer.agent().param_count()
    );
    if let Some(last) = metrics.last() {
        summary.push_str(&format!("final_success_rate = {}\n", last.success_rate));
        summary.push_str(&format!("final_beta = {}\n", last.beta));
    }
    summary.push_str(&format!("last10_mean_success_rate = {tail_mean}\n"));
    if let Some(e) = best_epoch {
        summary.push_str(&format!("best_success_rate = {best_success}\nbest_epoch = {e}\n"));
    }
    summary.push_str(&format!("parameter_checksum = {:016x}\n", trainer.agent().params().checksum()));
    write_file(&dir.join("summary.txt"), summary)?;
    Ok(dir)
}

fn check_env_compatible(agent: &Agent, env: EnvKind) -> Result<()> {
    let spec = env.spec();
    if agent.input_dim() != spec.policy_input_dim() {
        return Err(EsilError::DimensionMismatch {
            context: "checkpoint input (observation ++ goal)",
            expected: spec.policy_input_dim(),
            actual: agent.input_dim(),
        });
    }
    let (expected, gaussian) = match spec.action_space {
        ActionSpace::Discrete(n) => (n, false),
        ActionSpace::Continuous { dim, .. } => (dim, true),
    };
    if agent.actor().output_dim() != expected || agent.head().is_gaussian() != gaussian {
        return Err(EsilError::DimensionMismatch {
            context: "checkpoint action head",
            expected,
            actual: agent.actor().output_dim(),
        });
    }
    Ok(())
}

fn cmd_eval(path: &Path, env: EnvKind, episodes: usize, seed: u64, random_action_prob: f64) -> Result<()> {
    let agent = checkpoint::load(path)?;
    check_env_compatible(&agent, env)?;
    let mut environment = env.build(random_action_prob);
    let mut rng = seeded_rng(seed);
    let report = evaluate(&agent, environment.as_mut(), episodes, &mut rng)?;
    for (i, ok) in report.outcomes.iter().enumerate() {
        println!("episode {i}: {}", if *ok { "success" } else { "failure" });
    }
    println!("success_rate = {}", report.success_rate);
    Ok(())
}

fn cmd_curves(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let loaded = runs
        .iter()
        .map(|dir| {
            let path = if dir.is_dir() { dir.join("metrics.csv") } else { dir.clone() };
            Ok((dir.display().to_string(), read_metrics(&path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let points = aggregate(&loaded)?;
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| EsilError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            write_curves(file, &points)
        }
        None => write_curves(std::io::stdout().lock(), &points),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            overrides,
            out,
        } => cmd_train(&config, seed, &overrides, out).map(|dir| println!("{}", dir.display())),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            random_action_prob,
        } => cmd_eval(&checkpoint, env, episodes, seed, random_action_prob),
        Command::Curves { runs, out } => cmd_curves(&runs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (EsilError::InvalidConfig(_) | EsilError::Config { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
