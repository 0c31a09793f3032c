use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn esil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esil"))
        .args(args)
        .env_remove("ESIL_RUN_ROOT")
        .output()
        .expect("binary runs")
}

const SMALL: &str = "\
# small grid run
env = empty-room
variant = ppo_esil
epochs = 3
episodes_per_epoch = 4
minibatch_size = 64
hidden_sizes = 16
eval_episodes = 3
";

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let res = esil(&["train", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["config.cfg", "resolved.cfg", "metrics.csv", "latest.ckpt", "best.ckpt", "summary.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(out.join("config.cfg")).unwrap(), SMALL);
    let resolved = fs::read_to_string(out.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("master_seed = 7"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,success_rate,beta,policy_loss,value_loss,esil_loss,seconds"
    );
}

#[test]
fn override_sets_epoch_count_and_run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let res = esil(&[
            "train",
            "--config",
            &cfg,
            "--override",
            "epochs=1",
            "--override",
            "variant=ppo_sil_her",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        csvs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(String::from_utf8_lossy(&csvs[0]).lines().count(), 2);
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn run_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let res = Command::new(env!("CARGO_BIN_EXE_esil"))
        .args(["train", "--config", &cfg, "--override", "epochs=0"])
        .env("ESIL_RUN_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(res.status.success());
    let dir = tmp.path().join("root").join("empty-room-ppo_esil-seed0");
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count(), 1);
    assert!(dir.join("latest.ckpt").exists());
}

#[test]
fn typo_in_config_is_rejected_with_line_and_suggestion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "env = empty-room\nselction_module = false\n");
    let res = esil(&["train", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("did you mean `selection_module`"), "{err}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn eval_is_deterministic_and_checks_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    assert!(esil(&["train", "--config", &cfg, "--override", "epochs=1", "--out", out.to_str().unwrap()])
        .status
        .success());
    let ckpt = out.join("latest.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let args = ["eval", "--checkpoint", ckpt, "--env", "empty-room", "--episodes", "12", "--seed", "5"];
    let first = esil(&args);
    let second = esil(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8_lossy(&first.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("episode ")).count(), 12);
    assert!(text.lines().last().unwrap().starts_with("success_rate = "));

    let mismatch = esil(&["eval", "--checkpoint", ckpt, "--env", "point-push"]);
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("dimension mismatch"));
}

#[test]
fn untrained_point_push_checkpoint_rarely_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "env = point-push\nhidden_sizes = 32,32\nepochs = 0\n");
    let out = tmp.path().join("run");
    assert!(esil(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let res = esil(&[
        "eval",
        "--checkpoint",
        out.join("latest.ckpt").to_str().unwrap(),
        "--env",
        "point-push",
        "--episodes",
        "100",
    ]);
    let text = String::from_utf8_lossy(&res.stdout);
    let rate: f64 = text.lines().last().unwrap()["success_rate = ".len()..].parse().unwrap();
    assert!(rate <= 0.1, "{rate}");
}

#[test]
fn curves_aggregate_runs_and_report_mismatches() {
    let tmp = tempfile::tempdir().unwrap();
    let header = "epoch,success_rate,beta,policy_loss,value_loss,esil_loss,seconds\n";
    let mut dirs = Vec::new();
    for (i, s) in [0.0, 1.0, 1.0, 1.0, 1.0].iter().enumerate() {
        let d = tmp.path().join(format!("r{i}"));
        fs::create_dir(&d).unwrap();
        fs::write(d.join("metrics.csv"), format!("{header}0,{s},0.5,0,0,0,\n")).unwrap();
        dirs.push(d.to_str().unwrap().to_string());
    }
    let mut args = vec!["curves"];
    args.extend(dirs.iter().map(String::as_str));
    let res = esil(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8_lossy(&res.stdout);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,success_median,success_p25,success_p75,beta_median,beta_p25,beta_p75,runs"
    );
    assert_eq!(lines.next().unwrap(), "0,1,1,1,0.5,0.5,0.5,5");

    let long = tmp.path().join("long");
    fs::create_dir(&long).unwrap();
    fs::write(long.join("metrics.csv"), format!("{header}0,1,0,0,0,0,\n1,1,0,0,0,0,\n")).unwrap();
    let res = esil(&["curves", &dirs[0], long.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("long (2 epochs)"));
}
