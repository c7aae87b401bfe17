//! Command-line front end.
//!
//! Exit status: 0 success, 1 verification failure, 2 usage or input error,
//! 3 model-assumption violation.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::continuous;
use crate::discrete;
use crate::error::{Error, Result};
use crate::geometry::{Regime, State};
use crate::sampling::SamplingSpec;
use crate::system::{builtin_system, load_system_file, SystemModel, BUILTIN_NAMES};
use crate::trajectory::{fmt6, Trajectory};
use crate::verification::{self, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ioc", version, about = "Inverse optimal control toolkit for control-affine systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the built-in systems.
    ListSystems,
    /// Print the optimal control u(x).
    Control(PointArgs),
    /// Print the synthesized state weight Q(x).
    Q(PointArgs),
    /// Simulate the optimal closed loop and write the trajectory.
    Simulate(SimulateArgs),
    /// Run the verification suite and write a JSON report.
    Verify(VerifyArgs),
    /// Estimate the drift constant and print the admissible discount bound.
    GammaBound(BoundArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SystemSource {
    /// Built-in system name.
    #[arg(long)]
    pub system: Option<String>,
    /// Path to a system config JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Replace the discount factor.
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Replace R(x) by the constant r * I.
    #[arg(long = "r", allow_hyphen_values = true)]
    pub r: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Numbers(pub Vec<f64>);

impl FromStr for Numbers {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("`{t}` is not a finite number"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Numbers)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub overrides: Overrides,
    /// State, e.g. `--x 1,2`.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Numbers,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Initial state.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Numbers,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Integration step (continuous systems only, required there).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// `lo,hi` for every coordinate or `lo1,hi1,...,lon,hin`.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounds: Option<Numbers>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Continuous rollout step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Rollout length in steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    run(&cli, out, err)
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_model_assumption() {
        EXIT_MODEL
    } else if matches!(e, Error::Divergence { .. }) {
        EXIT_VERIFY_FAILED
    } else {
        EXIT_USAGE
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn load(source: &SystemSource, overrides: &Overrides) -> Result<SystemModel> {
    let mut sys = match (&source.system, &source.config) {
        (Some(name), None) => builtin_system(name)?,
        (None, Some(path)) => load_system_file(path)?,
        _ => return Err(usage("exactly one of --system or --config is required")),
    };
    if let Some(r) = overrides.r {
        sys = sys.with_constant_control_weight(r)?;
    }
    if let Some(gamma) = overrides.gamma {
        sys = sys.with_gamma(gamma)?;
    }
    Ok(sys)
}

fn state(sys: &SystemModel, v: &Numbers, flag: &str) -> Result<State> {
    if v.0.len() != sys.n() {
        return Err(usage(format!(
            "{flag} has {} entries, system `{}` has n = {}",
            v.0.len(),
            sys.name(),
            sys.n()
        )));
    }
    Ok(State::from_vec(v.0.clone()))
}

fn sampling_spec(sys: &SystemModel, args: &SamplingArgs, count: usize) -> Result<SamplingSpec> {
    let n = sys.n();
    let bounds = match &args.bounds {
        None => vec![(-10.0, 10.0); n],
        Some(Numbers(v)) if v.len() == 2 => vec![(v[0], v[1]); n],
        Some(Numbers(v)) if v.len() == 2 * n => v.chunks(2).map(|c| (c[0], c[1])).collect(),
        Some(Numbers(v)) => {
            return Err(usage(format!(
                "--box needs 2 or {} numbers, got {}",
                2 * n,
                v.len()
            )))
        }
    };
    SamplingSpec::new(bounds, count, args.seed.unwrap_or(0))
}

fn list_fmt(v: &[f64]) -> String {
    if v.len() == 1 {
        fmt6(v[0])
    } else {
        let parts: Vec<_> = v.iter().map(|x| fmt6(*x)).collect();
        format!("[{}]", parts.join(", "))
    }
}

fn open_out(path: &Option<PathBuf>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::ListSystems => {
            for name in BUILTIN_NAMES {
                let sys = builtin_system(name)?;
                writeln!(
                    out,
                    "{name}\t{}\tn={}\tm={}\tgamma={}",
                    sys.regime(),
                    sys.n(),
                    sys.m(),
                    sys.gamma()
                )?;
            }
            Ok(EXIT_OK)
        }
        Command::Control(args) => {
            let sys = load(&args.source, &args.overrides)?;
            let x = state(&sys, &args.x, "--x")?;
            let u = verification::analytic_control(&sys, &x)?;
            let u: Vec<f64> = u.iter().copied().collect();
            if args.format == Some(Format::Json) {
                writeln!(out, "{}", json!({"system": sys.name(), "x": args.x.0, "u": u}))?;
            } else {
                writeln!(out, "u = {}", list_fmt(&u))?;
            }
            Ok(EXIT_OK)
        }
        Command::Q(args) => {
            let sys = load(&args.source, &args.overrides)?;
            let x = state(&sys, &args.x, "--x")?;
            let q = verification::synthesized_q(&sys, &x)?;
            if args.format == Some(Format::Json) {
                writeln!(out, "{}", json!({"system": sys.name(), "x": args.x.0, "q": q}))?;
            } else {
                writeln!(out, "Q = {}", fmt6(q))?;
            }
            Ok(EXIT_OK)
        }
        Command::Simulate(args) => {
            let sys = load(&args.source, &args.overrides)?;
            let x0 = state(&sys, &args.x0, "--x0")?;
            let steps = args.steps.ok_or_else(|| usage("--steps is required"))?;
            let traj = match sys.regime() {
                Regime::Discrete => {
                    if args.dt.is_some() {
                        return Err(usage("--dt applies to continuous systems only"));
                    }
                    discrete::simulate(&sys, &x0, steps)?
                }
                Regime::Continuous => {
                    let dt = args
                        .dt
                        .ok_or_else(|| usage("--dt is required for continuous systems"))?;
                    continuous::integrate_closed_loop(&sys, &x0, dt, steps)?
                }
            };
            open_out(&args.out, out, |w| write_trajectory(&traj, args.format, w))?;
            Ok(EXIT_OK)
        }
        Command::Verify(args) => {
            if args.format == Some(Format::Csv) {
                return Err(usage("verify writes JSON reports only"));
            }
            let sys = load(&args.source, &args.overrides)?;
            let spec = sampling_spec(&sys, &args.sampling, args.samples)?;
            let mut options = SuiteOptions::new(spec);
            if let Some(dt) = args.dt {
                options.dt = dt;
            }
            if let Some(steps) = args.steps {
                options.discrete_steps = steps;
                options.continuous_steps = steps;
            }
            let reports = verification::run_suite(&sys, &options)?;
            let all_pass = reports.iter().all(|r| !r.is_failure());
            for r in &reports {
                writeln!(
                    err,
                    "{:<28} {:<12} worst={} tol={}",
                    r.check,
                    r.verdict(),
                    fmt6(r.worst_value),
                    fmt6(r.tolerance)
                )?;
            }
            let doc = json!({"system": sys.name(), "pass": all_pass, "reports": reports});
            open_out(&args.out, out, |w| {
                serde_json::to_writer_pretty(&mut *w, &doc)?;
                writeln!(w)?;
                Ok(())
            })?;
            Ok(if all_pass { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Command::GammaBound(args) => {
            let sys = load(&args.source, &args.overrides)?;
            let spec = sampling_spec(&sys, &args.sampling, args.samples)?;
            let lip = verification::estimate_lipschitz(&sys, &spec)?;
            let (relation, bound) = match sys.regime() {
                Regime::Discrete => ("<=", discrete::max_discount(&lip)),
                Regime::Continuous => (">=", continuous::min_discount(&lip)),
            };
            if args.format == Some(Format::Json) {
                let doc = json!({
                    "system": sys.name(),
                    "regime": sys.regime(),
                    "lipschitz": lip,
                    "gamma_relation": relation,
                    "gamma_bound": bound,
                });
                writeln!(out, "{doc}")?;
            } else {
                writeln!(out, "L_hat = {} ({} samples)", fmt6(lip.l_hat), lip.samples)?;
                writeln!(out, "gamma {relation} {}", fmt6(bound))?;
                writeln!(
                    err,
                    "note: L_hat is a sampled lower bound on L; the bound is necessary-only evidence"
                )?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn write_trajectory(traj: &Trajectory, format: Format, w: &mut dyn Write) -> Result<()> {
    match format {
        Format::Csv => traj.write_csv(w),
        Format::Json => {
            serde_json::to_writer(&mut *w, traj)?;
            writeln!(w)?;
            Ok(())
        }
    }
}

/// Convenience used by the binary.
pub fn main_with_env() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    run_from(std::env::args_os(), &mut out, &mut err)
}
