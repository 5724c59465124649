//! The four experiment subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sparse_syk::ensemble::{
    self, population_dynamics, EfficiencySummary, EnsembleResult, EnsembleSpec, LevelSet, Observable,
    RatioAveraging, RunOptions,
};
use sparse_syk::spectra::{locate_p2, log_grid, sff_from_ensemble, GapRatioCurve, SffAveraging};
use sparse_syk::syk::DisorderSeed;

use crate::config::{render_list, Config, ConfigError};
use crate::output::{num, opt, p_tag, write_csv};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] sparse_syk::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Sidecar(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Sidecar(_) => 2,
            CliError::Core(sparse_syk::Error::Argument(_)) => 2,
            CliError::Core(sparse_syk::Error::NoCrossing(_)) => 3,
            _ => 1,
        }
    }
}

pub struct Context {
    pub out: PathBuf,
    pub workers: usize,
    pub resume: bool,
}

/// What a command produced.
pub struct Outcome {
    pub outputs: Vec<String>,
    pub results: Value,
    pub no_crossing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GapRatio,
    Sff,
    Charge,
    Efficiency,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GapRatio => "gap-ratio",
            Command::Sff => "sff",
            Command::Charge => "charge",
            Command::Efficiency => "efficiency",
        }
    }

    /// Fills in defaults and checks every value before any work starts.
    pub fn plan(self, config: &mut Config) -> Result<Plan, CliError> {
        let plan = match self {
            Command::GapRatio => plan_gap_ratio(config)?,
            Command::Sff => plan_sff(config)?,
            Command::Charge => plan_charge(config)?,
            Command::Efficiency => plan_efficiency(config)?,
        };
        config.finish()?;
        for job in &plan.jobs {
            job.spec.validate()?;
        }
        Ok(plan)
    }
}

pub struct Job {
    pub name: String,
    pub spec: EnsembleSpec,
}

pub struct Plan {
    command: Command,
    pub master_seed: u64,
    jobs: Vec<Job>,
    extra: Extra,
}

enum Extra {
    None,
    Populations { realization: u64, times: Vec<f64> },
    Efficiency { averaging: RatioAveraging },
}

struct Common {
    n_sites: usize,
    j: f64,
    omega0: f64,
    n_dis: usize,
    seed: u64,
}

impl Common {
    fn spec(&self, observable: Observable) -> EnsembleSpec {
        EnsembleSpec {
            n_sites: self.n_sites,
            j_scale: self.j,
            omega0: self.omega0,
            n_dis: self.n_dis,
            master_seed: self.seed,
            observable,
        }
    }
}

fn common(config: &mut Config, n_sites: usize, n_dis: impl Fn(usize) -> Option<usize>) -> Result<Common, CliError> {
    config.set_default("n_sites", n_sites);
    config.set_default("j", 1.0);
    config.set_default("omega0", 1.0);
    config.set_default("seed", 1);
    let n_sites: usize = config.require("n_sites")?;
    if let Some(default) = n_dis(n_sites) {
        config.set_default("n_dis", default);
    }
    let c = Common {
        n_sites,
        j: config.require("j")?,
        omega0: config.require("omega0")?,
        n_dis: config.require("n_dis")?,
        seed: config.require("seed")?,
    };
    positive(c.j, "j")?;
    positive(c.omega0, "omega0")?;
    if c.n_dis == 0 {
        return Err(ConfigError::value("n_dis", "must be at least 1").into());
    }
    Ok(c)
}

fn positive(x: f64, key: &str) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::value(key, format!("must be positive, got {x}")).into())
    }
}

fn sparsities(config: &Config, key: &str) -> Result<Vec<f64>, CliError> {
    let ps: Vec<f64> = config.list(key)?.unwrap_or_default();
    if ps.is_empty() {
        return Err(ConfigError::value(key, "empty list").into());
    }
    for &p in &ps {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ConfigError::value(key, format!("{p} outside (0, 1]")).into());
        }
    }
    Ok(ps)
}

fn ascending(values: &[f64], key: &str, allow_zero: bool) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(ConfigError::value(key, "empty grid").into());
    }
    for &v in values {
        if !v.is_finite() || v < 0.0 || (v == 0.0 && !allow_zero) {
            return Err(ConfigError::value(key, format!("invalid grid value {v}")).into());
        }
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::value(key, "grid must be strictly ascending").into());
    }
    Ok(())
}

/// An explicit list under `key`, or `points` values from `lo` to `hi`.
fn grid(
    config: &mut Config,
    key: &str,
    range: (&str, f64, &str, f64, &str, usize),
    log: bool,
) -> Result<Vec<f64>, CliError> {
    let (lo_key, lo, hi_key, hi, n_key, n) = range;
    if config.contains(key) {
        for k in [lo_key, hi_key, n_key] {
            if config.contains(k) {
                return Err(ConfigError::value(k, format!("conflicts with `{key}`")).into());
            }
        }
        let values: Vec<f64> = config.list(key)?.unwrap_or_default();
        ascending(&values, key, !log)?;
        return Ok(values);
    }
    config.set_default(lo_key, lo);
    config.set_default(hi_key, hi);
    config.set_default(n_key, n);
    let lo: f64 = config.require(lo_key)?;
    let hi: f64 = config.require(hi_key)?;
    let n: usize = config.require(n_key)?;
    if n < 2 {
        return Err(ConfigError::value(n_key, "need at least 2 points").into());
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo && lo >= 0.0) || (log && lo <= 0.0) {
        return Err(ConfigError::value(hi_key, format!("invalid range {lo}..{hi}")).into());
    }
    let step = |k: usize| k as f64 / (n - 1) as f64;
    let values: Vec<f64> = (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else if log {
                lo * (hi / lo).powf(step(k))
            } else {
                lo + (hi - lo) * step(k)
            }
        })
        .collect();
    ascending(&values, key, !log)?;
    Ok(values)
}

fn plan_gap_ratio(config: &mut Config) -> Result<Plan, CliError> {
    let c = common(config, 6, |_| Some(1000))?;
    if c.n_dis < 100 {
        return Err(ConfigError::value("n_dis", "a p₂ scan needs at least 100 realizations").into());
    }
    let p_grid = if config.contains("p_grid") {
        for k in ["p_min", "per_decade"] {
            if config.contains(k) {
                return Err(ConfigError::value(k, "conflicts with `p_grid`").into());
            }
        }
        let grid = sparsities(config, "p_grid")?;
        if grid[0] != 1.0 {
            return Err(ConfigError::value("p_grid", "must start at 1").into());
        }
        if grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::value("p_grid", "must be strictly descending").into());
        }
        grid
    } else {
        config.set_default("p_min", 0.001);
        config.set_default("per_decade", 20);
        let p_min: f64 = config.require("p_min")?;
        let per_decade: usize = config.require("per_decade")?;
        if !(p_min > 0.0 && p_min < 1.0) {
            return Err(ConfigError::value("p_min", "must lie in (0, 1)").into());
        }
        if per_decade == 0 {
            return Err(ConfigError::value("per_decade", "must be at least 1").into());
        }
        log_grid(p_min, per_decade)
    };
    Ok(Plan {
        command: Command::GapRatio,
        master_seed: c.seed,
        jobs: vec![Job {
            name: "gap_ratio".into(),
            spec: c.spec(Observable::GapRatio { p_grid }),
        }],
        extra: Extra::None,
    })
}

fn plan_sff(config: &mut Config) -> Result<Plan, CliError> {
    let c = common(config, 8, |_| Some(500))?;
    config.set_default("sparsity", 1.0);
    config.set_default("beta", 0.0);
    config.set_default("levels", "half_filling");
    config.set_default("averaging", "ratio_of_averages");
    let ps = sparsities(config, "sparsity")?;
    let beta: f64 = config.require("beta")?;
    if !beta.is_finite() {
        return Err(ConfigError::value("beta", "must be finite").into());
    }
    let levels = match config.require::<String>("levels")?.as_str() {
        "half_filling" => LevelSet::HalfFilling,
        "full" => LevelSet::Full,
        other => return Err(ConfigError::value("levels", format!("expected half_filling or full, got {other}")).into()),
    };
    let averaging = match config.require::<String>("averaging")?.as_str() {
        "ratio_of_averages" => SffAveraging::RatioOfAverages,
        "average_of_ratios" => SffAveraging::AverageOfRatios,
        other => {
            return Err(ConfigError::value(
                "averaging",
                format!("expected ratio_of_averages or average_of_ratios, got {other}"),
            )
            .into())
        }
    };
    let times = grid(config, "times", ("t_min", 0.1, "t_max", 1e5, "t_points", 61), true)?;
    let jobs = ps
        .iter()
        .map(|&p| Job {
            name: format!("sff_{}", p_tag(p)),
            spec: c.spec(Observable::FormFactor {
                sparsity: p,
                beta,
                times: times.clone(),
                levels,
                averaging,
            }),
        })
        .collect();
    Ok(Plan {
        command: Command::Sff,
        master_seed: c.seed,
        jobs,
        extra: Extra::None,
    })
}

fn plan_charge(config: &mut Config) -> Result<Plan, CliError> {
    let c = common(config, 8, |_| Some(1000))?;
    config.set_default("sparsity", 1.0);
    config.set_default("subset", c.n_sites);
    config.set_default("population_realization", 0);
    let ps = sparsities(config, "sparsity")?;
    let subset: usize = config.require("subset")?;
    let realization: u64 = config.require("population_realization")?;
    let taus = grid(config, "taus", ("tau_min", 0.0, "tau_max", 20.0, "tau_points", 81), false)?;
    let jobs = ps
        .iter()
        .map(|&p| Job {
            name: format!("stored_energy_{}", p_tag(p)),
            spec: c.spec(Observable::StoredEnergy {
                sparsity: p,
                taus: taus.clone(),
                subset,
            }),
        })
        .collect();
    Ok(Plan {
        command: Command::Charge,
        master_seed: c.seed,
        jobs,
        extra: Extra::Populations {
            realization,
            times: taus,
        },
    })
}

/// Realization counts used for the efficiency figure.
fn efficiency_n_dis(n_sites: usize) -> Option<usize> {
    match n_sites {
        6 => Some(1000),
        8 => Some(500),
        10 => Some(150),
        _ => None,
    }
}

fn plan_efficiency(config: &mut Config) -> Result<Plan, CliError> {
    let c = common(config, 6, efficiency_n_dis)?;
    config.set_default(
        "sparsity",
        render_list(&[1.0, 0.5, 0.3, 0.2, 0.1, 0.07, 0.05, 0.03, 0.02, 0.01]),
    );
    config.set_default("averaging", "average_of_ratios");
    let ps = sparsities(config, "sparsity")?;
    let averaging = match config.require::<String>("averaging")?.as_str() {
        "average_of_ratios" => RatioAveraging::AverageOfRatios,
        "ratio_of_averages" => RatioAveraging::RatioOfAverages,
        other => {
            return Err(ConfigError::value(
                "averaging",
                format!("expected average_of_ratios or ratio_of_averages, got {other}"),
            )
            .into())
        }
    };
    let taus = if config.contains("tau_c") {
        for k in ["taus", "tau_min", "tau_max", "tau_points"] {
            if config.contains(k) {
                return Err(ConfigError::value(k, "conflicts with `tau_c`").into());
            }
        }
        let tau: f64 = config.require("tau_c")?;
        ascending(&[tau], "tau_c", true)?;
        vec![tau]
    } else {
        grid(config, "taus", ("tau_min", 0.25, "tau_max", 15.0, "tau_points", 60), false)?
    };
    if c.n_sites % 2 != 0 {
        return Err(ConfigError::value("n_sites", "half-battery quantities need an even number of sites").into());
    }
    let jobs = ps
        .iter()
        .map(|&p| Job {
            name: format!("efficiency_{}", p_tag(p)),
            spec: c.spec(Observable::Efficiency {
                sparsity: p,
                taus: taus.clone(),
            }),
        })
        .collect();
    Ok(Plan {
        command: Command::Efficiency,
        master_seed: c.seed,
        jobs,
        extra: Extra::Efficiency { averaging },
    })
}

fn run_job(job: &Job, ctx: &Context) -> Result<EnsembleResult, CliError> {
    let dir = ctx.out.join("checkpoints");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.jsonl", job.name));
    let options = RunOptions {
        workers: ctx.workers,
        checkpoint: Some(path.clone()),
        ..RunOptions::default()
    };
    let result = if ctx.resume && path.exists() {
        ensemble::resume(&path, Some(&job.spec), &options)?
    } else {
        ensemble::run(&job.spec, &options)?
    };
    Ok(result)
}

fn csv(ctx: &Context, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    write_csv(&ctx.out.join(name), header, rows)?;
    Ok(name.to_string())
}

fn exclusions(result: &EnsembleResult) -> Value {
    json!(result.exclusions)
}

impl Plan {
    pub fn command(&self) -> Command {
        self.command
    }

    pub fn execute(&self, ctx: &Context) -> Result<Outcome, CliError> {
        fs::create_dir_all(&ctx.out)?;
        match self.command {
            Command::GapRatio => self.gap_ratio(ctx),
            Command::Sff => self.sff(ctx),
            Command::Charge => self.charge(ctx),
            Command::Efficiency => self.efficiency(ctx),
        }
    }

    fn gap_ratio(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let result = run_job(&self.jobs[0], ctx)?;
        let curve = GapRatioCurve::from_ensemble(&result)?;
        let rows: Vec<Vec<String>> = curve
            .points
            .iter()
            .map(|pt| vec![num(pt.p), opt(pt.r_mean), opt(pt.r_stderr), pt.n_eff.to_string()])
            .collect();
        let mut outputs = vec![csv(ctx, "gap_ratio.csv", &["p", "r_mean", "r_stderr", "n_dis"], &rows)?];
        let r_full = curve.points[0].r_mean;
        let (report, no_crossing) = match locate_p2(curve) {
            Ok(est) => (
                json!({
                    "p2": est.p2,
                    "p2_low": est.interval.0,
                    "p2_high": est.interval.1,
                    "threshold": est.threshold,
                    "r_full": r_full,
                }),
                false,
            ),
            Err(sparse_syk::Error::NoCrossing(_)) => (
                json!({
                    "p2": null,
                    "message": "r(p) never drops below 99% of r(1) on this grid",
                    "r_full": r_full,
                }),
                true,
            ),
            Err(e) => return Err(e.into()),
        };
        fs::write(ctx.out.join("p2.json"), serde_json::to_string_pretty(&report).expect("json") + "\n")?;
        outputs.push("p2.json".into());
        Ok(Outcome {
            outputs,
            results: json!({ "p2": report, "exclusions": exclusions(&result) }),
            no_crossing,
        })
    }

    fn sff(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let mut outputs = Vec::new();
        let mut results = serde_json::Map::new();
        for job in &self.jobs {
            let result = run_job(job, ctx)?;
            let curve = sff_from_ensemble(&result)?;
            let rows: Vec<Vec<String>> = curve
                .times
                .iter()
                .zip(&curve.values)
                .map(|(&t, &v)| vec![num(t), num(v)])
                .collect();
            outputs.push(csv(ctx, &format!("{}.csv", job.name), &["t", "sff_value"], &rows)?);
            results.insert(job.name.clone(), json!({ "exclusions": exclusions(&result) }));
        }
        Ok(Outcome {
            outputs,
            results: Value::Object(results),
            no_crossing: false,
        })
    }

    fn charge(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let Extra::Populations { realization, times } = &self.extra else {
            unreachable!("charge plan carries population settings")
        };
        let mut outputs = Vec::new();
        let mut results = serde_json::Map::new();
        for job in &self.jobs {
            let Observable::StoredEnergy { sparsity, taus, .. } = &job.spec.observable else {
                unreachable!("charge jobs measure stored energy")
            };
            let result = run_job(job, ctx)?;
            let rows: Vec<Vec<String>> = taus
                .iter()
                .zip(&result.points)
                .map(|(&tau, pt)| vec![num(tau), opt(pt.mean), opt(pt.stderr)])
                .collect();
            outputs.push(csv(ctx, &format!("{}.csv", job.name), &["tau_c", "E_mean", "E_stderr"], &rows)?);

            let seed = DisorderSeed::new(self.master_seed, *realization);
            let records = population_dynamics(job.spec.n_sites, job.spec.j_scale, *sparsity, seed, times)?;
            let mut rows = Vec::new();
            for record in &records {
                let pops = &record.populations;
                for (k, w) in pops.shifted_levels().iter().zip(&pops.weights) {
                    rows.push(vec![num(record.time), k.to_string(), num(*w)]);
                }
            }
            outputs.push(csv(ctx, &format!("populations_{}.csv", p_tag(*sparsity)), &["t", "k", "p_k"], &rows)?);
            results.insert(job.name.clone(), json!({ "exclusions": exclusions(&result) }));
        }
        Ok(Outcome {
            outputs,
            results: Value::Object(results),
            no_crossing: false,
        })
    }

    fn efficiency(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let Extra::Efficiency { averaging } = self.extra else {
            unreachable!("efficiency plan carries its averaging mode")
        };
        let mut rows = Vec::new();
        let mut summaries = Vec::new();
        for job in &self.jobs {
            let result = run_job(job, ctx)?;
            let s = EfficiencySummary::from_result(&result, averaging)?;
            rows.push(vec![num(s.sparsity), opt(s.e_mean), opt(s.e_stderr), s.n_excluded.to_string()]);
            summaries.push(json!({
                "p": s.sparsity,
                "tau_star": s.tau_star,
                "n_eff": s.n_eff,
                "stored_mean": s.stored_mean,
                "ergotropy_mean": s.ergotropy_mean,
                "exclusions": exclusions(&result),
            }));
        }
        let outputs = vec![csv(ctx, "efficiency.csv", &["p", "e_mean", "e_stderr", "n_excluded"], &rows)?];
        Ok(Outcome {
            outputs,
            results: json!({ "averaging": averaging, "points": summaries }),
            no_crossing: false,
        })
    }
}

/// Reads either a `key = value` file or a previous run's sidecar.
pub fn load_config(path: &Path, command: Command) -> Result<Config, CliError> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let sidecar: crate::output::Sidecar = serde_json::from_str(&text)
            .map_err(|e| CliError::Sidecar(format!("{}: not a valid sidecar: {e}", path.display())))?;
        if sidecar.command != command.name() {
            return Err(CliError::Sidecar(format!(
                "sidecar was written by `{}`, not `{}`",
                sidecar.command,
                command.name()
            )));
        }
        Ok(Config::from_entries(sidecar.config))
    } else {
        Ok(Config::parse(&text)?)
    }
}
