use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mpnode_cli::config::{parse_config_unvalidated, read_text, validate, Experiment, RunConfig};
use mpnode_cli::run::configure_workers;
use mpnode_cli::{run, CliError};

#[derive(Parser)]
#[command(name = "mpnode", version, about = "Multistep-penalty neural ODE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainExperiment {
    LorenzRho,
    LorenzForcing,
    KsTrain,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Ground-truth trajectory file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the Kuramoto–Sivashinsky ground truth.
    GenData(Common),
    /// Train a controller or a neural ODE.
    Train {
        /// Experiment used when no config file is given.
        #[arg(long, value_enum)]
        experiment: Option<TrainExperiment>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained network checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Loss-landscape slices of the forcing problem.
    Landscape(Common),
    /// Shadowing gradient against ensemble finite differences.
    LssCheck(Common),
    /// Measured integrator orders.
    Convergence(Common),
}

fn resolve(
    default: Experiment,
    allowed: &[Experiment],
    common: &Common,
    checkpoint: Option<&PathBuf>,
) -> Result<RunConfig, CliError> {
    let text = match &common.config {
        Some(p) => read_text(p)?,
        None => format!("experiment = \"{}\"\n", default.name()),
    };
    let mut cfg = parse_config_unvalidated(&text)?;
    if !allowed.contains(&cfg.experiment) {
        return Err(CliError::validation(
            "experiment",
            format!("`{}` cannot run under this subcommand", cfg.experiment.name()),
        ));
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.ks.seed = s;
        cfg.landscape.seed = s;
        cfg.lss.ensemble.seed = s;
    }
    if let Some(o) = &common.output {
        cfg.paths.output = o.clone();
    }
    if let Some(d) = &common.dataset {
        cfg.paths.dataset = Some(d.clone());
    }
    if let Some(c) = checkpoint {
        cfg.paths.checkpoint = Some(c.clone());
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    use Experiment::*;
    let cfg = match &cli.command {
        Command::GenData(c) => resolve(GenData, &[GenData], c, None)?,
        Command::Train { experiment, common } => {
            let default = match experiment {
                Some(TrainExperiment::LorenzForcing) => LorenzForcing,
                Some(TrainExperiment::KsTrain) => KsTrain,
                _ => LorenzRho,
            };
            resolve(default, &[LorenzRho, LorenzForcing, KsTrain], common, None)?
        }
        Command::Eval { checkpoint, common } => resolve(KsEval, &[KsEval], common, checkpoint.as_ref())?,
        Command::Landscape(c) => resolve(Landscape, &[Landscape], c, None)?,
        Command::LssCheck(c) => resolve(LssCheck, &[LssCheck], c, None)?,
        Command::Convergence(c) => resolve(Convergence, &[Convergence], c, None)?,
    };
    let workers = configure_workers(cfg.workers);
    eprintln!(
        "running {} with {workers} worker(s) into {}",
        cfg.experiment.name(),
        cfg.paths.output.display()
    );
    let summary = run(&cfg)?;
    for a in &summary.artifacts {
        println!("{}", a.display());
    }
    eprintln!("done in {:.1} s", summary.wall_time);
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
