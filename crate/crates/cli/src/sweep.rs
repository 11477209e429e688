//! Parameter sweeps over a base scenario, one thread per value.

use std::fmt::Write;
use std::thread;

use clap::ValueEnum;
use erdispatch_core::{run, validate, ConvergenceTolerances, FeedbackGain, Protocol, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Uniform price step size.
    Eps,
    /// Mismatch-consensus step size.
    Mu,
    /// Feedback-gain family of the integrated protocol.
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Step(f64),
    Gain(FeedbackGain),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Step(x) => write!(f, "{x}"),
            SweepValue::Gain(FeedbackGain::Reciprocal) => write!(f, "reciprocal"),
            SweepValue::Gain(FeedbackGain::PowerLaw { scale, exponent }) => write!(f, "power:{scale}:{exponent}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: SweepValue,
    pub lambda_settle_round: Option<usize>,
    pub p_mg_settle_round: Option<usize>,
    pub convergence_round: Option<usize>,
    pub final_p_mg: f64,
    pub final_lambda_spread: f64,
    pub max_conservation_residual: f64,
}

pub fn parse_sweep_values(param: SweepParam, raw: &[String]) -> Result<Vec<SweepValue>, String> {
    raw.iter()
        .map(|s| {
            let s = s.trim();
            match param {
                SweepParam::Eps | SweepParam::Mu => s
                    .parse::<f64>()
                    .map(SweepValue::Step)
                    .map_err(|_| format!("`{s}` is not a number")),
                SweepParam::Sigma => parse_gain(s).map(SweepValue::Gain),
            }
        })
        .collect()
}

fn parse_gain(s: &str) -> Result<FeedbackGain, String> {
    if s == "reciprocal" {
        return Ok(FeedbackGain::Reciprocal);
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["power", scale, exponent] => {
            let num = |x: &str| x.parse::<f64>().map_err(|_| format!("`{x}` is not a number"));
            Ok(FeedbackGain::PowerLaw {
                scale: num(scale)?,
                exponent: num(exponent)?,
            })
        }
        _ => Err(format!("`{s}`: expected `reciprocal` or `power:SCALE:EXPONENT`")),
    }
}

pub fn apply(base: &ScenarioConfig, param: SweepParam, value: SweepValue) -> Result<ScenarioConfig, CliError> {
    let mut cfg = base.clone();
    match (param, value) {
        (SweepParam::Eps, SweepValue::Step(x)) => cfg.protocol_cfg.eps.iter_mut().for_each(|e| *e = x),
        (SweepParam::Mu, SweepValue::Step(x)) => cfg.protocol_cfg.mu = x,
        (SweepParam::Sigma, SweepValue::Gain(g)) => {
            if cfg.protocol != Protocol::Integrated {
                return Err(CliError::Usage("sigma sweeps need the integrated protocol".into()));
            }
            cfg.protocol_cfg.sigma = g;
        }
        _ => return Err(CliError::Usage(format!("value {value} does not fit parameter {param:?}"))),
    }
    Ok(cfg)
}

/// Validates every variant first, then runs them concurrently. Rows keep the input order.
pub fn run_sweep(base: &ScenarioConfig, param: SweepParam, values: &[SweepValue]) -> Result<Vec<SweepRow>, CliError> {
    let configs = values
        .iter()
        .map(|&v| {
            let cfg = apply(base, param, v)?;
            let report = validate(&cfg);
            if report.passed() {
                Ok(cfg)
            } else {
                Err(CliError::Invalid(report))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let tol = ConvergenceTolerances::default();
    let results: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|cfg| s.spawn(move || run(cfg))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });

    results
        .into_iter()
        .zip(values)
        .map(|(res, &value)| {
            let trace = res?;
            let summary = trace.summary(&tol);
            Ok(SweepRow {
                param,
                value,
                lambda_settle_round: summary.lambda_settle_round,
                p_mg_settle_round: summary.p_mg_settle_round,
                convergence_round: summary.convergence_round,
                final_p_mg: summary.final_p_mg,
                final_lambda_spread: trace.last().lambda_spread(),
                max_conservation_residual: summary.max_conservation_residual,
            })
        })
        .collect()
}

pub fn format_table(rows: &[SweepRow]) -> String {
    let opt = |x: Option<usize>| x.map_or("-".to_string(), |k| k.to_string());
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>14} {:>14} {:>12} {:>12}",
        "value", "lambda_settle", "p_mg_settle", "converged", "final_p_mg"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>14} {:>14} {:>12} {:>12.3}",
            r.value.to_string(),
            opt(r.lambda_settle_round),
            opt(r.p_mg_settle_round),
            opt(r.convergence_round),
            r.final_p_mg
        );
    }
    s
}
