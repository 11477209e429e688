//! Command-line front end for erdispatch scenarios.
//!
//! Exit codes: 0 success, 1 simulation or solver error, 2 usage or configuration error.
//! Errors are printed to stderr as a single JSON object.

pub mod output;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use erdispatch_core::config::load_scenario;
use erdispatch_core::oracle::DispatchMode;
use erdispatch_core::{
    run, solve_grid_connected, solve_isolated, validate, verify_kkt, ConfigError, ConvergenceTolerances,
    DispatchSolution, OperatingMode, OracleError, ScenarioConfig, ScenarioError, SimulationTrace, TraceSummary,
    ValidationReport,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use sweep::{parse_sweep_values, run_sweep, SweepParam, SweepRow, SweepValue};

/// Largest per-generator gap tolerated by `run --oracle-check` (MW).
pub const ORACLE_POWER_TOL: f64 = 1e-2;

#[derive(Debug, Parser)]
#[command(name = "erdispatch", version, about = "Distributed economic dispatch simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write trace.csv and summary.json.
    Run(RunArgs),
    /// Print the centralized optimum for the scenario's system.
    Oracle(OracleArgs),
    /// Validate the scenario against the protocol assumptions.
    Check(CheckArgs),
    /// Run one scenario per parameter value and compare convergence.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Scenario file.
    #[arg(value_name = "CONFIG")]
    pub path: Option<PathBuf>,
    #[arg(long = "config", value_name = "PATH", conflicts_with = "path")]
    pub flag: Option<PathBuf>,
}

impl ConfigArg {
    fn resolve(&self) -> Result<&Path, CliError> {
        self.path
            .as_deref()
            .or(self.flag.as_deref())
            .ok_or_else(|| CliError::Usage("a scenario file is required (CONFIG or --config)".into()))
    }

    fn load(&self) -> Result<ScenarioConfig, CliError> {
        Ok(load_scenario(self.resolve()?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Console output of the reporting commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Compare the final dispatch with the centralized optimum.
    #[arg(long)]
    pub oracle_check: bool,
    /// Accepted for compatibility; runs are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMode {
    Grid,
    Isolated,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_enum, default_value_t = OracleMode::Grid)]
    pub mode: OracleMode,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    pub format: Report,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    pub format: Report,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values; sigma takes `reciprocal` or `power:SCALE:EXPONENT`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    pub format: Report,
}

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Invalid(ValidationReport),
    Simulation(ScenarioError),
    Oracle(OracleError),
    Io(anyhow::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(r) => CliError::Invalid(r),
            other => CliError::Simulation(other),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::Simulation(_) | CliError::Oracle(_) | CliError::Io(_) => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => json!({ "error": "usage", "message": m }),
            CliError::Config(ConfigError::NotFound(path)) => {
                json!({ "error": "config not found", "message": format!("config not found: {path}"), "path": path })
            }
            CliError::Config(e) => json!({ "error": "config", "message": e.to_string() }),
            CliError::Invalid(r) => json!({
                "error": "validation",
                "message": ScenarioError::Invalid(r.clone()).to_string(),
                "report": r,
            }),
            CliError::Simulation(e) => {
                let mut v = json!({ "error": "simulation", "message": e.to_string() });
                if let ScenarioError::NonFinite { round } = e {
                    v["round"] = json!(round);
                }
                v
            }
            CliError::Oracle(e) => {
                let mut v = json!({ "error": "oracle", "message": e.to_string() });
                if let OracleError::NoRoot {
                    total_demand,
                    net_at_lower,
                    net_at_upper,
                } = e
                {
                    v["explanation"] = json!(format!(
                        "isolated operation needs total demand strictly between the net output at the lower \
                         limits ({net_at_lower:.3} MW) and at the upper limits ({net_at_upper:.3} MW); \
                         demand is {total_demand:.3} MW"
                    ));
                }
                v
            }
            CliError::Io(e) => json!({ "error": "io", "message": format!("{e:#}") }),
        }
    }
}

/// Oracle comparison written into `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub mode: OperatingMode,
    pub lambda_star: f64,
    pub p_star: Vec<f64>,
    pub p_mg_star: f64,
    pub max_power_error: f64,
    pub max_lambda_error: f64,
    pub p_mg_error: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub summary: TraceSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
}

pub fn oracle_for_mode(sys: &erdispatch_core::SystemParams, mode: OperatingMode) -> Result<DispatchSolution, OracleError> {
    match mode {
        OperatingMode::GridConnected => Ok(solve_grid_connected(sys)),
        OperatingMode::Isolated => solve_isolated(sys),
    }
}

/// Compares the last round of `trace` with the optimum of the system in force at that round.
pub fn oracle_check(cfg: &ScenarioConfig, trace: &SimulationTrace) -> Result<OracleCheck, OracleError> {
    let last = trace.last();
    let sys = cfg.system_at(last.round);
    let sol = oracle_for_mode(&sys, last.er.mode)?;
    let max_power_error = last
        .agents
        .iter()
        .zip(&sol.p_star)
        .map(|(a, p)| (a.power - p).abs())
        .fold(0.0, f64::max);
    let max_lambda_error = last
        .agents
        .iter()
        .map(|a| (a.lambda - sol.lambda_star).abs())
        .fold(0.0, f64::max);
    Ok(OracleCheck {
        mode: last.er.mode,
        lambda_star: sol.lambda_star,
        p_star: sol.p_star.clone(),
        p_mg_star: sol.p_mg_star,
        max_power_error,
        max_lambda_error,
        p_mg_error: (last.er.p_mg - sol.p_mg_star).abs(),
        threshold: ORACLE_POWER_TOL,
        passed: max_power_error <= ORACLE_POWER_TOL,
    })
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Check(args) => cmd_check(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let trace = run(&cfg)?;
    let summary = RunSummary {
        summary: trace.summary(&ConvergenceTolerances::default()),
        oracle: if args.oracle_check {
            Some(oracle_check(&cfg, &trace).map_err(CliError::Oracle)?)
        } else {
            None
        },
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    match args.format {
        Format::Csv => {
            output::write_trace_csv(&trace, &args.out.join("trace.csv"))?;
            output::write_trace_long_csv(&trace, &args.out.join("trace_long.csv"))?;
        }
        Format::Json => output::write_json(&trace, &args.out.join("trace.json"))?,
    }
    output::write_json(&summary, &args.out.join("summary.json"))?;

    if !args.quiet {
        let s = &summary.summary;
        println!("rounds            {}", s.horizon);
        println!("final P_MG        {:.3} MW", s.final_p_mg);
        println!(
            "final lambda      {}",
            s.final_lambda.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>().join(" ")
        );
        match s.convergence_round {
            Some(k) => println!("converged at      round {k}"),
            None => println!("converged at      -"),
        }
        if let Some(o) = &summary.oracle {
            println!(
                "oracle check      max |P - P*| = {:.3e} MW ({})",
                o.max_power_error,
                if o.passed { "pass" } else { "FAIL" }
            );
        }
        println!("written to        {}", args.out.display());
    }
    Ok(())
}

pub fn format_solution(sol: &DispatchSolution) -> String {
    let mut s = String::new();
    let mode = match sol.mode {
        DispatchMode::GridConnected => "grid-connected",
        DispatchMode::Isolated => "isolated",
    };
    s.push_str(&format!("mode        {mode}\n"));
    s.push_str(&format!("lambda*     {:.3}\n", sol.lambda_star));
    s.push_str("bus   P* (MW)  limit\n");
    for (i, p) in sol.p_star.iter().enumerate() {
        let tag = if sol.active_upper.contains(&i) && sol.active_lower.contains(&i) {
            "fixed"
        } else if sol.active_upper.contains(&i) {
            "upper"
        } else if sol.active_lower.contains(&i) {
            "lower"
        } else {
            ""
        };
        s.push_str(&format!("{:<5} {:>8.3}  {tag}\n", i + 1, p));
    }
    s.push_str(&format!("P_MG*       {:.3}\n", sol.p_mg_star));
    s.push_str(&format!("total loss  {:.3}\n", sol.total_loss));
    s.push_str(&format!("total cost  {:.3}\n", sol.total_cost));
    s
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let (sol, isolated) = match args.mode {
        OracleMode::Grid => (solve_grid_connected(&cfg.system), false),
        OracleMode::Isolated => (solve_isolated(&cfg.system).map_err(CliError::Oracle)?, true),
    };
    let kkt = verify_kkt(&cfg.system, &sol, isolated);
    match args.format {
        Report::Json => {
            let v = json!({ "solution": sol, "kkt": kkt, "kkt_passed": kkt.passed() });
            println!("{}", serde_json::to_string_pretty(&v).context("serializing solution")?);
        }
        Report::Text => {
            print!("{}", format_solution(&sol));
            println!("KKT         {}", if kkt.passed() { "pass" } else { "FAIL" });
        }
    }
    Ok(())
}

pub fn cmd_check(args: &CheckArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let report = validate(&cfg);
    if !args.quiet {
        match args.format {
            Report::Json => println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?),
            Report::Text => print!("{report}"),
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Invalid(report))
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let values = parse_sweep_values(args.param, &args.values).map_err(CliError::Usage)?;
    let rows = run_sweep(&cfg, args.param, &values)?;
    match args.format {
        Report::Json => println!("{}", serde_json::to_string_pretty(&rows).context("serializing sweep")?),
        Report::Text => print!("{}", sweep::format_table(&rows)),
    }
    Ok(())
}
