use std::path::{Path, PathBuf};
use std::time::Instant;

use mpnode::lss::{
    cost_report, lorenz_ensemble_fd, lss_gradient, reference_trajectory, LorenzLss, LssProblem, MeanComponent,
};
use mpnode::models::LorenzParams;
use mpnode::ode::{convergence_order, default_dts, LinearDecay, Method};
use mpnode::systems::{
    evaluate_ks_model, forcing_landscape, generate_ks_dataset, run_control_experiment, split_ks_data, train_ks_arm,
    ControlArm, KsData, KsEvaluation, KsExperimentConfig,
};
use serde::Serialize;

use crate::config::{Experiment, RunConfig};
use crate::io::{
    load_checkpoint, load_trajectory, save_checkpoint, save_trajectory, sha256_bytes, sha256_file, write_history, Cell,
    Checkpoint, Encoding, Table, CHECKPOINT_VERSION, TRAJECTORY_MAGIC, TRAJECTORY_VERSION,
};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub wall_time: f64,
}

/// Collects artifact paths and whether each held only finite values.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
    nonfinite: Vec<String>,
}

impl Outputs {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn add(&mut self, name: &str, finite: bool) {
        if !finite {
            self.nonfinite.push(name.to_string());
        }
        self.files.push(self.path(name));
    }

    fn trajectory(&mut self, name: &str, traj: &mpnode::ode::Trajectory, enc: Encoding) -> Result<(), CliError> {
        save_trajectory(&self.path(name), traj, enc)?;
        self.add(name, true);
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<(), CliError> {
        save_checkpoint(&self.path(name), ckpt)?;
        let finite = ckpt.param_values.iter().all(|x| x.is_finite()) && ckpt.mu.is_finite();
        self.add(name, finite);
        Ok(())
    }

    fn history(&mut self, name: &str, rows: &[mpnode::mp::HistoryRow]) -> Result<(), CliError> {
        let finite = write_history(&self.path(name), rows)?;
        self.add(name, finite);
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<Cell>>) -> Result<(), CliError> {
        let mut t = Table::create(&self.path(name), header)?;
        for r in rows {
            t.row(r)?;
        }
        let finite = t.finish()?;
        self.add(name, finite);
        Ok(())
    }
}

#[derive(Serialize)]
struct ArtifactRecord {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    seed: u64,
    trajectory_format: String,
    checkpoint_format: u32,
    config: &'a RunConfig,
    config_hash: String,
    /// Digest over the config hash and every artifact digest, in order.
    content_hash: String,
    artifacts: Vec<ArtifactRecord>,
    wall_time_seconds: f64,
}

/// Worker count: `MPNODE_WORKERS` wins over the configured value, which
/// wins over the number of available cores.
pub fn configure_workers(configured: Option<usize>) -> usize {
    let n = std::env::var("MPNODE_WORKERS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(configured)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // A pool may already exist when several runs share a process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    n
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let dir = cfg.paths.output.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
        nonfinite: Vec::new(),
    };
    match cfg.experiment {
        Experiment::GenData => gen_data(cfg, &mut out)?,
        Experiment::LorenzRho | Experiment::LorenzForcing => control(cfg, &mut out)?,
        Experiment::KsTrain => ks_train(cfg, &mut out)?,
        Experiment::KsEval => ks_eval(cfg, &mut out)?,
        Experiment::Landscape => landscape(cfg, &mut out)?,
        Experiment::LssCheck => lss_check(cfg, &mut out)?,
        Experiment::Convergence => convergence(cfg, &mut out)?,
    }
    let wall_time = start.elapsed().as_secs_f64();
    write_metadata(cfg, &out, wall_time)?;
    if let Some(bad) = out.nonfinite.first() {
        return Err(CliError::NonFinite(bad.clone()));
    }
    let mut artifacts = out.files;
    artifacts.push(dir.join("metadata.json"));
    Ok(RunSummary {
        output: dir,
        artifacts,
        wall_time,
    })
}

fn write_metadata(cfg: &RunConfig, out: &Outputs, wall_time: f64) -> Result<(), CliError> {
    let config_hash = sha256_bytes(&serde_json::to_vec(cfg).expect("config serializes"));
    let mut artifacts = Vec::with_capacity(out.files.len());
    let mut joined = config_hash.clone();
    for f in &out.files {
        let h = sha256_file(f)?;
        joined.push_str(&h);
        artifacts.push(ArtifactRecord {
            file: f
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: h,
        });
    }
    let meta = Metadata {
        tool: "mpnode",
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.name(),
        seed: cfg.seed,
        trajectory_format: format!("{TRAJECTORY_MAGIC} {TRAJECTORY_VERSION}"),
        checkpoint_format: CHECKPOINT_VERSION,
        config: cfg,
        config_hash,
        content_hash: sha256_bytes(joined.as_bytes()),
        artifacts,
        wall_time_seconds: wall_time,
    };
    let path = out.path("metadata.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("metadata serializes"))
        .map_err(|e| CliError::io(&path, e))
}

fn ks_ground_truth(ks: &KsExperimentConfig, dataset: Option<&Path>) -> Result<mpnode::ode::Trajectory, CliError> {
    match dataset {
        Some(p) => load_trajectory(p),
        None => {
            let t_end = ks.transient + (ks.samples.saturating_sub(1)) as f64 * ks.ks.dt_sample;
            Ok(generate_ks_dataset(&ks.ks, t_end, ks.transient)?)
        }
    }
}

fn gen_data(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let traj = ks_ground_truth(&cfg.ks, None)?;
    let enc = if cfg.data.binary {
        Encoding::Binary
    } else {
        Encoding::Csv
    };
    out.trajectory("dataset.traj", &traj, enc)
}

fn control_row(name: &str, arm: &ControlArm) -> Vec<Cell> {
    let max_grad = arm.history().iter().map(|r| r.grad_norm_theta).fold(0.0, f64::max);
    vec![
        name.into(),
        arm.initial_objective.into(),
        arm.final_objective.into(),
        arm.percent_reduction().into(),
        arm.result.steps.into(),
        arm.result.mu.into(),
        max_grad.into(),
    ]
}

fn control(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let exp = run_control_experiment(&cfg.control)?;
    let problem = cfg.control.problem(1)?;
    out.history("history_mp.csv", exp.mp.history())?;
    out.history("history_vanilla.csv", exp.vanilla.history())?;
    out.table(
        "control_summary.csv",
        &[
            "arm",
            "initial_objective",
            "final_objective",
            "percent_reduction",
            "steps",
            "final_mu",
            "max_grad_norm",
        ],
        vec![control_row("mp", &exp.mp), control_row("vanilla", &exp.vanilla)],
    )?;
    let n = exp.mp.result.theta.len();
    out.table(
        "control_parameters.csv",
        &["index", "mp", "vanilla"],
        (0..n)
            .map(|i| {
                vec![
                    i.into(),
                    exp.mp.result.theta[i].into(),
                    exp.vanilla.result.theta[i].into(),
                ]
            })
            .collect(),
    )?;
    for (name, arm) in [("mp", &exp.mp), ("vanilla", &exp.vanilla)] {
        let traj = problem.trajectory(&arm.result.theta)?;
        out.trajectory(&format!("trajectory_{name}.traj"), &traj, Encoding::Csv)?;
        let r = &arm.result;
        out.checkpoint(
            &format!("checkpoint_{name}.json"),
            &Checkpoint::new(None, r.theta.clone(), r.steps, r.mu, r.rng_word_pos),
        )?;
    }
    Ok(())
}

fn ks_tables(out: &mut Outputs, arms: &[(&str, &KsEvaluation)]) -> Result<(), CliError> {
    out.table(
        "ks_metrics.csv",
        &[
            "arm",
            "kl",
            "min_correlation",
            "return_period_distance",
            "spectrum_rmse",
            "failed_rollouts",
        ],
        arms.iter()
            .map(|(name, e)| {
                vec![
                    (*name).into(),
                    e.kl.into(),
                    e.min_correlation().into(),
                    e.return_period_distance.into(),
                    e.spectrum_rmse.into(),
                    e.failed_rollouts.into(),
                ]
            })
            .collect(),
    )?;
    let mut header = vec!["t"];
    header.extend(arms.iter().map(|(n, _)| *n));
    let first = arms[0].1;
    out.table(
        "correlation.csv",
        &header,
        (0..first.correlation_times.len())
            .map(|i| {
                let mut row = vec![first.correlation_times[i].into()];
                row.extend(arms.iter().map(|(_, e)| Cell::Real(e.correlation[i])));
                row
            })
            .collect(),
    )?;
    let mut header = vec!["threshold", "truth"];
    header.extend(arms.iter().map(|(n, _)| *n));
    let lookup = |curve: &[(f64, f64)], th: f64| curve.iter().find(|(t, _)| *t == th).map(|(_, p)| *p);
    out.table(
        "return_period.csv",
        &header,
        first
            .truth_return_periods
            .iter()
            .map(|&(th, p)| {
                let mut row = vec![th.into(), p.into()];
                row.extend(arms.iter().map(|(_, e)| Cell::from(lookup(&e.return_periods, th))));
                row
            })
            .collect(),
    )
}

fn ks_data(cfg: &RunConfig, ks: &KsExperimentConfig) -> Result<KsData, CliError> {
    let full = ks_ground_truth(ks, cfg.paths.dataset.as_deref())?;
    Ok(split_ks_data(ks, &full)?)
}

fn ks_train(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let ks = &cfg.ks;
    let data = ks_data(cfg, ks)?;
    let mut evals = Vec::new();
    for (name, windows) in [("mp", ks.n_windows), ("vanilla", 1)] {
        let r = train_ks_arm(ks, &data, windows, None)?;
        out.history(&format!("history_{name}.csv"), &r.history)?;
        out.checkpoint(
            &format!("checkpoint_{name}.json"),
            &Checkpoint::new(Some(ks.model.clone()), r.theta.clone(), r.steps, r.mu, r.rng_word_pos),
        )?;
        evals.push((name, evaluate_ks_model(ks, &data, &r.theta)?));
    }
    let arms: Vec<(&str, &KsEvaluation)> = evals.iter().map(|(n, e)| (*n, e)).collect();
    ks_tables(out, &arms)
}

fn ks_eval(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let path = cfg.paths.checkpoint.as_deref().expect("validated");
    let ckpt = load_checkpoint(path)?;
    let spec = ckpt.mlp_spec.clone().ok_or_else(|| CliError::Format {
        path: path.display().to_string(),
        message: "checkpoint holds no network".into(),
    })?;
    let ks = KsExperimentConfig {
        model: spec,
        ..cfg.ks.clone()
    };
    let data = ks_data(cfg, &ks)?;
    let e = evaluate_ks_model(&ks, &data, &ckpt.param_values)?;
    ks_tables(out, &[("model", &e)])
}

fn landscape(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let slices = forcing_landscape(&cfg.landscape)?;
    out.table(
        "landscape_summary.csv",
        &["slice", "index_a", "index_b", "mp_minima", "vanilla_minima"],
        slices
            .iter()
            .enumerate()
            .map(|(k, s)| {
                vec![
                    k.into(),
                    s.index_a.into(),
                    s.index_b.into(),
                    s.mp.strict_minima.into(),
                    s.vanilla.strict_minima.into(),
                ]
            })
            .collect(),
    )?;
    for (k, s) in slices.iter().enumerate() {
        let mut rows = Vec::new();
        for (i, &a) in s.mp.offsets_a.iter().enumerate() {
            for (j, &b) in s.mp.offsets_b.iter().enumerate() {
                rows.push(vec![
                    a.into(),
                    b.into(),
                    s.mp.values[(i, j)].into(),
                    s.vanilla.values[(i, j)].into(),
                ]);
            }
        }
        out.table(
            &format!("landscape_slice_{k}.csv"),
            &["offset_a", "offset_b", "mp", "vanilla"],
            rows,
        )?;
    }
    Ok(())
}

fn lss_check(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let l = &cfg.lss;
    let sys = LorenzLss::standard(l.rho);
    let steps = (l.horizon / l.dt).round() as usize;
    let transient = (l.transient / l.dt).round() as usize;
    let reference = reference_trajectory(&sys, &l.q0, l.dt, steps, transient)?;
    let problem = LssProblem::new(reference, l.alpha_sq, sys)?;
    let sol = lss_gradient(&problem, &MeanComponent::new(2, 1), None)?;
    let base = LorenzParams {
        rho: l.rho,
        ..LorenzParams::default()
    };
    let (fd, se) = lorenz_ensemble_fd(base, &l.ensemble)?;
    let g = sol.gradient[0];
    out.table(
        "lss_gradient.csv",
        &[
            "parameter",
            "lss_gradient",
            "ensemble_fd_gradient",
            "relative_difference",
        ],
        vec![vec![
            "rho".into(),
            g.into(),
            fd.into(),
            ((g - fd).abs() / fd.abs()).into(),
        ]],
    )?;
    let cost = cost_report(steps, 3);
    out.table(
        "lss_summary.csv",
        &[
            "kkt_residual",
            "fd_standard_error",
            "num_steps",
            "dof",
            "lss_cost",
            "mp_cost",
        ],
        vec![vec![
            sol.kkt_residual.into(),
            se.into(),
            steps.into(),
            3usize.into(),
            Cell::Text(cost.lss.to_string()),
            Cell::Text(cost.mp.to_string()),
        ]],
    )
}

fn method_name(m: Method) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn convergence(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let c = &cfg.convergence;
    let problem = LinearDecay {
        lambda: c.lambda,
        q0: c.q0,
        t_end: c.t_end,
    };
    let mut errors = Vec::new();
    let mut orders = Vec::new();
    for &m in &c.methods {
        let dts = c.dts.clone().unwrap_or_else(|| default_dts(m));
        for &dt in &dts {
            errors.push(vec![
                Cell::Text(method_name(m)),
                dt.into(),
                problem.final_error(m, dt)?.into(),
            ]);
        }
        orders.push(vec![
            Cell::Text(method_name(m)),
            convergence_order(m, &problem, &dts)?.into(),
        ]);
    }
    out.table("convergence.csv", &["method", "dt", "error"], errors)?;
    out.table("orders.csv", &["method", "order"], orders)
}
