use std::path::Path;
use std::process::Command;

use mpnode_cli::io::{load_trajectory, save_trajectory, Encoding};
use mpnode_cli::{parse_config, run};

const SMALL_RHO: &str = r#"
experiment = "lorenz_rho"
seed = 3
[control]
n_steps = 200
horizon = [0.0, 2.0]
spinup = 1.0
n_windows = 4
max_steps = 30
[control.schedule]
mu_min = 1e-5
mu_max = 1e5
trigger = { kind = "every_k_steps", k = 10 }
"#;

fn config_in(dir: &Path, text: &str) -> mpnode_cli::RunConfig {
    let mut cfg = parse_config(text).unwrap();
    cfg.paths.output = dir.to_path_buf();
    cfg
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn control_runs_are_deterministic_and_step_mu() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&config_in(a.path(), SMALL_RHO)).unwrap();
    run(&config_in(b.path(), SMALL_RHO)).unwrap();
    for f in [
        "history_mp.csv",
        "history_vanilla.csv",
        "control_parameters.csv",
        "checkpoint_mp.json",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let hist = std::fs::read_to_string(a.path().join("history_mp.csv")).unwrap();
    let mu: Vec<f64> = column(&hist, "mu").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(mu.len(), 30);
    for (i, m) in mu.iter().enumerate() {
        let rung = i / 10;
        let expect = 1e-5 * 10f64.powi(rung as i32);
        assert!((m / expect - 1.0).abs() < 1e-12, "step {}: mu {m}", i + 1);
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config"]["control"]["max_steps"], 30);
    assert!(meta["artifacts"].as_array().unwrap().len() >= 6);
}

#[test]
fn gen_data_header_declares_grid_and_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        "experiment = \"gen_data\"\n[ks]\nsamples = 40\ntransient = 5.0\n",
    );
    run(&cfg).unwrap();
    let path = dir.path().join("dataset.traj");
    let text = std::fs::read_to_string(&path).unwrap();
    let header: Vec<&str> = text.lines().take(6).collect();
    assert_eq!(header[0], "MPNODE-TRAJ v1");
    assert_eq!(header[1], "state_dim=64");
    assert_eq!(header[2], "num_samples=40");
    assert_eq!(header[3].trim_start_matches("dt_sample=").parse::<f64>().unwrap(), 0.25);
    let traj = load_trajectory(&path).unwrap();
    assert_eq!((traj.len(), traj.state_dim()), (40, 64));

    let bin = dir.path().join("dataset.bin");
    save_trajectory(&bin, &traj, Encoding::Binary).unwrap();
    let back = load_trajectory(&bin).unwrap();
    let diff = back
        .states()
        .iter()
        .zip(traj.states().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-15);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpnode"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "experiment = \"convergence\"\nlearning_rte = 1\n").unwrap();
    let out = binary().args(["convergence", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));

    let neg = dir.path().join("neg.toml");
    std::fs::write(
        &neg,
        "experiment = \"convergence\"\n[convergence]\ndts = [0.1, -0.05, 0.02, 0.01]\n",
    )
    .unwrap();
    let out = binary().args(["convergence", "--config"]).arg(&neg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("convergence.dts"));

    let wrong = dir.path().join("wrong.toml");
    std::fs::write(&wrong, "experiment = \"gen_data\"\n").unwrap();
    let out = binary().args(["landscape", "--config"]).arg(&wrong).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let run_dir = dir.path().join("conv");
    let out = binary()
        .args(["convergence", "--output"])
        .arg(&run_dir)
        .env("MPNODE_WORKERS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let orders = std::fs::read_to_string(run_dir.join("orders.csv")).unwrap();
    let vals: Vec<f64> = column(&orders, "order").iter().map(|s| s.parse().unwrap()).collect();
    assert!(
        (vals[0] - 1.0).abs() < 0.1 && (vals[1] - 4.0).abs() < 0.2 && (vals[2] - 5.0).abs() < 0.3,
        "{vals:?}"
    );
    assert!(run_dir.join("metadata.json").exists());
}
