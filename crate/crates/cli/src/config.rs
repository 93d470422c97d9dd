use std::path::{Path, PathBuf};

use mpnode::lss::{EnsembleFdConfig, DEFAULT_ALPHA_SQ};
use mpnode::mp::{AdamConfig, PenaltySchedule, Trigger};
use mpnode::ode::Method;
use mpnode::systems::{ControlExperimentConfig, KsConfig, KsExperimentConfig, LandscapeConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    LorenzRho,
    LorenzForcing,
    KsTrain,
    KsEval,
    Landscape,
    LssCheck,
    GenData,
    Convergence,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::LorenzRho => "lorenz_rho",
            Self::LorenzForcing => "lorenz_forcing",
            Self::KsTrain => "ks_train",
            Self::KsEval => "ks_eval",
            Self::Landscape => "landscape",
            Self::LssCheck => "lss_check",
            Self::GenData => "gen_data",
            Self::Convergence => "convergence",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Value::String(s.to_string()).try_into().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub output: PathBuf,
    /// Ground-truth trajectory file; generated on the fly when absent.
    pub dataset: Option<PathBuf>,
    /// Checkpoint evaluated by `ks_eval`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    /// Write the trajectory as little-endian floats instead of CSV.
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LssCheckConfig {
    pub rho: f64,
    pub alpha_sq: f64,
    pub horizon: f64,
    pub dt: f64,
    pub transient: f64,
    pub q0: [f64; 3],
    pub ensemble: EnsembleFdConfig,
}

impl Default for LssCheckConfig {
    fn default() -> Self {
        Self {
            rho: 28.0,
            alpha_sq: DEFAULT_ALPHA_SQ,
            horizon: 50.0,
            dt: 0.01,
            transient: 20.0,
            q0: [1.0, 1.0, 1.0],
            ensemble: EnsembleFdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub lambda: f64,
    pub q0: f64,
    pub t_end: f64,
    pub methods: Vec<Method>,
    /// Shared step sizes; each method uses its own default ladder when absent.
    pub dts: Option<Vec<f64>>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            q0: 1.0,
            t_end: 1.0,
            methods: vec![Method::Euler, Method::Rk4, Method::Tsit5],
            dts: None,
        }
    }
}

/// Fully resolved run description. Every section is present after loading;
/// unspecified keys take the experiment's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub workers: Option<usize>,
    pub paths: Paths,
    pub control: ControlExperimentConfig,
    pub ks: KsExperimentConfig,
    pub landscape: LandscapeConfig,
    pub lss: LssCheckConfig,
    pub data: GenDataConfig,
    pub convergence: ConvergenceConfig,
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let control = match experiment {
            Experiment::LorenzForcing => ControlExperimentConfig::lorenz_forcing(),
            _ => ControlExperimentConfig::lorenz_rho(),
        };
        Self {
            experiment,
            seed: 0,
            workers: None,
            paths: Paths {
                output: PathBuf::from(format!("runs/{}", experiment.name())),
                dataset: None,
                checkpoint: None,
            },
            control,
            ks: KsExperimentConfig::default(),
            landscape: LandscapeConfig::default(),
            lss: LssCheckConfig::default(),
            data: GenDataConfig { binary: false },
            convergence: ConvergenceConfig::default(),
        }
    }

    /// Copies the run seed into every seeded component.
    fn propagate_seed(&mut self, user: &Table) {
        let set = |path: &[&str]| !has_key(user, path);
        if set(&["ks", "seed"]) {
            self.ks.seed = self.seed;
        }
        if set(&["landscape", "seed"]) {
            self.landscape.seed = self.seed;
        }
        if set(&["lss", "ensemble", "seed"]) {
            self.lss.ensemble.seed = self.seed;
        }
    }
}

fn has_key(t: &Table, path: &[&str]) -> bool {
    match path {
        [] => true,
        [k] => t.contains_key(*k),
        [k, rest @ ..] => t.get(*k).and_then(Value::as_table).is_some_and(|s| has_key(s, rest)),
    }
}

/// Overlays `user` onto `base`. Tables merge key by key, except tagged
/// tables whose `kind` changes, which replace the default wholesale.
fn merge(base: &mut Table, user: &Table) {
    for (k, v) in user {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(u)) if b.get("kind") == u.get("kind") || u.get("kind").is_none() => {
                merge(b, u)
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('=') || rest.starts_with('.'))
        })
        .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses configuration text, fills defaults and validates the result.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg = parse_config_unvalidated(text)?;
    validate(&cfg)?;
    Ok(cfg)
}

/// [`parse_config`] without the field checks, so that command-line
/// overrides can be applied before validating.
pub fn parse_config_unvalidated(text: &str) -> Result<RunConfig, CliError> {
    let user: Table = toml::from_str(text).map_err(|e| CliError::Parse {
        line: e.span().map(|s| line_of_offset(text, s.start)),
        key: None,
        message: e.message().to_string(),
    })?;
    let exp_name = user
        .get("experiment")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Parse {
            line: None,
            key: Some("experiment".into()),
            message: "missing or non-string `experiment`".into(),
        })?;
    let experiment = Experiment::parse(exp_name).ok_or_else(|| CliError::Parse {
        line: line_of_key(text, "experiment"),
        key: Some("experiment".into()),
        message: format!("unknown experiment `{exp_name}`"),
    })?;
    let defaults = RunConfig::defaults(experiment);
    let mut merged = match Value::try_from(&defaults) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("defaults serialize to a table"),
    };
    merge(&mut merged, &user);
    let mut cfg: RunConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| {
        let message = e.message().to_string();
        let key = message
            .split_once("unknown field `")
            .and_then(|(_, r)| r.split_once('`'))
            .map(|(k, _)| k.to_string());
        CliError::Parse {
            line: key.as_deref().and_then(|k| line_of_key(text, k)),
            key,
            message,
        }
    })?;
    cfg.propagate_seed(&user);
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    parse_config(&read_text(path)?)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn positive(field: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::validation(
            field,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

fn at_least(field: &str, x: usize, min: usize) -> Result<(), CliError> {
    if x >= min {
        Ok(())
    } else {
        Err(CliError::validation(field, format!("must be at least {min}, got {x}")))
    }
}

fn check_schedule(prefix: &str, s: &PenaltySchedule) -> Result<(), CliError> {
    positive(&format!("{prefix}.mu_min"), s.mu_min)?;
    if !(s.growth_factor >= 1.0) {
        return Err(CliError::validation(
            &format!("{prefix}.growth_factor"),
            "must be at least 1",
        ));
    }
    if !(s.mu_max >= s.mu_min) {
        return Err(CliError::validation(
            &format!("{prefix}.mu_max"),
            "must be at least mu_min",
        ));
    }
    match s.trigger {
        Trigger::EveryKSteps { k } => at_least(&format!("{prefix}.trigger.k"), k, 1),
        Trigger::Plateau { window, rel_tol } => {
            at_least(&format!("{prefix}.trigger.window"), window, 1)?;
            positive(&format!("{prefix}.trigger.rel_tol"), rel_tol)
        }
    }
}

fn check_optimizer(prefix: &str, o: &AdamConfig) -> Result<(), CliError> {
    positive(&format!("{prefix}.lr"), o.lr)?;
    for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
        if !(0.0..1.0).contains(&b) {
            return Err(CliError::validation(&format!("{prefix}.{name}"), "must lie in [0, 1)"));
        }
    }
    positive(&format!("{prefix}.eps"), o.eps)?;
    if let Some(c) = o.grad_clip {
        positive(&format!("{prefix}.grad_clip"), c)?;
    }
    Ok(())
}

fn check_ks(prefix: &str, k: &KsConfig) -> Result<(), CliError> {
    positive(&format!("{prefix}.domain_length"), k.domain_length)?;
    positive(&format!("{prefix}.dt_solver"), k.dt_solver)?;
    positive(&format!("{prefix}.dt_sample"), k.dt_sample)?;
    if k.grid_points < 8 || !k.grid_points.is_power_of_two() {
        return Err(CliError::validation(
            &format!("{prefix}.grid_points"),
            "must be a power of two, at least 8",
        ));
    }
    let ratio = k.dt_sample / k.dt_solver;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
        return Err(CliError::validation(
            &format!("{prefix}.dt_sample"),
            "must be an integer multiple of dt_solver",
        ));
    }
    Ok(())
}

fn check_control(prefix: &str, c: &ControlExperimentConfig) -> Result<(), CliError> {
    positive(&format!("{prefix}.lorenz.sigma"), c.lorenz.sigma)?;
    positive(&format!("{prefix}.lorenz.beta"), c.lorenz.beta)?;
    if !(c.spinup >= 0.0) {
        return Err(CliError::validation(
            &format!("{prefix}.spinup"),
            "must be non-negative",
        ));
    }
    if !(c.horizon.1 > c.horizon.0) {
        return Err(CliError::validation(
            &format!("{prefix}.horizon"),
            "end must exceed start",
        ));
    }
    at_least(&format!("{prefix}.n_steps"), c.n_steps, 1)?;
    at_least(&format!("{prefix}.n_windows"), c.n_windows, 1)?;
    if c.n_windows > c.n_steps {
        return Err(CliError::validation(
            &format!("{prefix}.n_windows"),
            "cannot exceed n_steps",
        ));
    }
    check_schedule(&format!("{prefix}.schedule"), &c.schedule)?;
    check_optimizer(&format!("{prefix}.optimizer"), &c.optimizer)
}

/// Field-level checks; errors name the offending key.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(w) = cfg.workers {
        at_least("workers", w, 1)?;
    }
    check_control("control", &cfg.control)?;

    let ks = &cfg.ks;
    check_ks("ks.ks", &ks.ks)?;
    positive("ks.integrator.dt", ks.integrator.dt)?;
    at_least("ks.samples", ks.samples, 2)?;
    if !(ks.transient >= 0.0) {
        return Err(CliError::validation("ks.transient", "must be non-negative"));
    }
    if !(ks.train_fraction > 0.0 && ks.train_fraction < 1.0) {
        return Err(CliError::validation("ks.train_fraction", "must lie in (0, 1)"));
    }
    at_least("ks.piece_len", ks.piece_len, 2)?;
    at_least("ks.n_windows", ks.n_windows, 1)?;
    if ks.n_windows >= ks.piece_len {
        return Err(CliError::validation("ks.n_windows", "must be smaller than piece_len"));
    }
    if ks.model.state_dim() != ks.ks.grid_points {
        return Err(CliError::validation(
            "ks.model.layer_widths",
            "input and output width must equal ks.ks.grid_points",
        ));
    }
    ks.model
        .validate()
        .map_err(|e| CliError::validation("ks.model", e.to_string()))?;
    at_least("ks.batch_size", ks.batch_size, 1)?;
    check_schedule("ks.schedule", &ks.schedule)?;
    check_optimizer("ks.optimizer", &ks.optimizer)?;
    at_least("ks.eval.rollouts", ks.eval.rollouts, 1)?;
    at_least("ks.eval.forecasts", ks.eval.forecasts, 1)?;
    at_least("ks.eval.thresholds", ks.eval.thresholds, 1)?;
    positive("ks.eval.rollout_time", ks.eval.rollout_time)?;
    positive("ks.eval.forecast_time", ks.eval.forecast_time)?;

    let l = &cfg.landscape;
    check_control("landscape.experiment", &l.experiment)?;
    at_least("landscape.slices", l.slices, 1)?;
    at_least("landscape.points", l.points, 3)?;
    positive("landscape.half_width", l.half_width)?;
    if l.mu.is_some_and(|m| !(m >= 0.0)) {
        return Err(CliError::validation("landscape.mu", "must be non-negative"));
    }

    let s = &cfg.lss;
    positive("lss.alpha_sq", s.alpha_sq)?;
    positive("lss.horizon", s.horizon)?;
    positive("lss.dt", s.dt)?;
    if !(s.transient >= 0.0) {
        return Err(CliError::validation("lss.transient", "must be non-negative"));
    }
    at_least("lss.ensemble.members", s.ensemble.members, 1)?;
    positive("lss.ensemble.delta", s.ensemble.delta)?;
    positive("lss.ensemble.averaging_time", s.ensemble.averaging_time)?;
    positive("lss.ensemble.dt", s.ensemble.dt)?;

    let c = &cfg.convergence;
    positive("convergence.lambda", c.lambda)?;
    positive("convergence.t_end", c.t_end)?;
    at_least("convergence.methods", c.methods.len(), 1)?;
    if let Some(d) = &c.dts {
        at_least("convergence.dts", d.len(), 4)?;
        for &dt in d {
            positive("convergence.dts", dt)?;
        }
    }

    for (field, p) in [
        ("paths.dataset", &cfg.paths.dataset),
        ("paths.checkpoint", &cfg.paths.checkpoint),
    ] {
        if let Some(p) = p {
            if !p.exists() {
                return Err(CliError::validation(field, format!("{} does not exist", p.display())));
            }
        }
    }
    if cfg.experiment == Experiment::KsEval && cfg.paths.checkpoint.is_none() {
        return Err(CliError::validation("paths.checkpoint", "ks_eval needs a checkpoint"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_lorenz_config_fills_defaults() {
        let cfg = parse_config("experiment = \"lorenz_rho\"\n").unwrap();
        assert_eq!(cfg.control.lorenz.sigma, 10.0);
        assert!((cfg.control.lorenz.beta - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(cfg.control.horizon, (0.0, 20.0));
        assert_eq!(cfg.control.schedule.mu_min, 1e-5);
        assert_eq!(cfg.control.schedule.trigger, Trigger::EveryKSteps { k: 170 });
    }

    #[test]
    fn nested_keys_override_defaults() {
        let cfg = parse_config(
            "experiment = \"lorenz_forcing\"\nseed = 7\n[control]\nmax_steps = 5\n[control.optimizer]\nlr = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.control.max_steps, 5);
        assert_eq!(cfg.control.optimizer.lr, 0.5);
        assert_eq!(cfg.control.n_windows, 20);
        assert_eq!(cfg.ks.seed, 7);
        assert_eq!(cfg.landscape.seed, 7);
    }

    #[test]
    fn tagged_sections_can_switch_variant() {
        let cfg = parse_config(
            "experiment = \"lorenz_rho\"\n[control.schedule.trigger]\nkind = \"plateau\"\nwindow = 5\nrel_tol = 0.01\n",
        )
        .unwrap();
        assert_eq!(
            cfg.control.schedule.trigger,
            Trigger::Plateau {
                window: 5,
                rel_tol: 0.01
            }
        );
    }

    #[test]
    fn negative_dt_names_the_field() {
        let err = parse_config("experiment = \"ks_train\"\n[ks.integrator]\ndt = -0.25\n").unwrap_err();
        match err {
            CliError::Validation { field, .. } => assert_eq!(field, "ks.integrator.dt"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_key_is_a_parse_error_naming_it() {
        let err = parse_config("experiment = \"lorenz_rho\"\n[control.optimizer]\nlearning_rte = 0.1\n").unwrap_err();
        match err {
            CliError::Parse { key, line, .. } => {
                assert_eq!(key.as_deref(), Some("learning_rte"));
                assert_eq!(line, Some(3));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_text_reports_a_line() {
        let err = parse_config("experiment = \"lorenz_rho\"\nseed = = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: Some(2), .. }), "{err}");
        assert!(matches!(parse_config("seed = 1\n"), Err(CliError::Parse { .. })));
        assert!(matches!(
            parse_config("experiment = \"nope\"\n"),
            Err(CliError::Parse { .. })
        ));
    }

    #[test]
    fn eval_requires_checkpoint() {
        assert!(matches!(
            parse_config("experiment = \"ks_eval\"\n"),
            Err(CliError::Validation { field, .. }) if field == "paths.checkpoint"
        ));
    }
}
