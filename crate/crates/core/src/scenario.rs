//! Scenario description, assumption validation, and the simulation driver.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::SystemParams;
use crate::engine::{ConsensusEngine, EngineError, NetworkState, OperatingMode, Protocol, ProtocolConfig};
use crate::topology::{Absorption, GridGraph, STABILITY_MARGIN};
use crate::trace::{Aggregates, RoundRecord, SimulationTrace};

/// Exogenous change applied at a round boundary. Bus indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    SetMode(OperatingMode),
    /// Forces the bus generator to zero output; load stays connected.
    Outage { bus: usize },
    Reconnect { bus: usize },
    SetPrice { price: f64 },
    SetDemand { bus: usize, demand: f64 },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Event::SetMode(OperatingMode::Isolated) => write!(f, "set_mode(0)"),
            Event::SetMode(OperatingMode::GridConnected) => write!(f, "set_mode(1)"),
            Event::Outage { bus } => write!(f, "outage({})", bus + 1),
            Event::Reconnect { bus } => write!(f, "reconnect({})", bus + 1),
            Event::SetPrice { price } => write!(f, "set_price({price})"),
            Event::SetDemand { bus, demand } => write!(f, "set_demand({}, {demand})", bus + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    /// The event applies immediately before this round is computed.
    pub round: usize,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub system: SystemParams,
    pub graph: GridGraph,
    pub protocol: Protocol,
    pub protocol_cfg: ProtocolConfig,
    pub horizon: usize,
    pub events: Vec<ScheduledEvent>,
    /// Per-ICU `lambda_i(0)`; zero when absent.
    pub initial_lambda: Option<Vec<f64>>,
    /// Starting mode for the integrated protocol.
    pub initial_mode: OperatingMode,
}

impl ScenarioConfig {
    /// Whether the microgrid may operate isolated at some point of the run.
    pub fn may_island(&self) -> bool {
        self.protocol == Protocol::Integrated
            && (self.initial_mode == OperatingMode::Isolated
                || self
                    .events
                    .iter()
                    .any(|e| e.event == Event::SetMode(OperatingMode::Isolated)))
    }

    /// System parameters in force while `round` is computed, after every event
    /// scheduled at or before it.
    pub fn system_at(&self, round: usize) -> SystemParams {
        let mut sys = self.system.clone();
        let mut events: Vec<&ScheduledEvent> = self.events.iter().filter(|e| e.round <= round).collect();
        events.sort_by_key(|e| e.round);
        for e in events {
            apply_to_system(e.event, &mut sys, &self.system);
        }
        sys
    }

    pub fn absorption(&self) -> Absorption {
        match self.protocol {
            Protocol::GridConnected => Absorption::SendToEr,
            Protocol::Integrated => Absorption::Bidirectional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Pass => "PASS",
            Severity::Warn => "WARN",
            Severity::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    /// Short identifier such as `A5` or `events`.
    pub check: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Radius of `(I - C)(I - mu L)` with the protocol's absorption matrix.
    pub spectral_radius: Option<f64>,
    pub eps_max: Vec<f64>,
    pub mu_max: Option<f64>,
}

impl ValidationReport {
    fn push(&mut self, check: &str, severity: Severity, message: impl Into<String>) {
        self.findings.push(Finding {
            check: check.to_string(),
            severity,
            message: message.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.severity != Severity::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Fail)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warn)
    }

    pub fn find(&self, check: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.check == check)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in &self.findings {
            writeln!(f, "{:<4} {:<10} {}", x.severity, x.check, x.message)?;
        }
        if let Some(r) = self.spectral_radius {
            writeln!(f, "spectral radius: {r:.9}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario failed validation: {}", summarize(.0))]
    Invalid(ValidationReport),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("non-finite state at round {round}")]
    NonFinite { round: usize },
}

fn summarize(report: &ValidationReport) -> String {
    report
        .failures()
        .map(|f| format!("{}: {}", f.check, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks a step size against its open-interval bound.
fn check_step(report: &mut ValidationReport, check: &str, name: &str, value: f64, bound: f64) {
    if value <= 0.0 || !value.is_finite() {
        report.push(check, Severity::Fail, format!("{name} = {value} must be positive"));
    } else if bound.is_infinite() {
        report.push(check, Severity::Pass, format!("{name} = {value}, unconstrained"));
    } else if value > bound {
        report.push(check, Severity::Fail, format!("{name} = {value} exceeds bound {bound:.6}"));
    } else if value == bound {
        report.push(
            check,
            Severity::Warn,
            format!("{name} = {value} sits on the bound; the interval is open"),
        );
    } else {
        report.push(check, Severity::Pass, format!("{name} = {value} < {bound:.6}"));
    }
}

pub fn validate(cfg: &ScenarioConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = cfg.graph.n_icus();

    match cfg.system.validate() {
        Ok(()) => report.push("params", Severity::Pass, "generator parameters valid"),
        Err(e) => report.push("params", Severity::Fail, e.to_string()),
    }
    if cfg.system.len() != n {
        report.push(
            "shape",
            Severity::Fail,
            format!("{} generators but {n} ICUs in the graph", cfg.system.len()),
        );
        return report;
    }
    if cfg.protocol_cfg.eps.len() != n {
        report.push(
            "shape",
            Severity::Fail,
            format!("{} step sizes for {n} ICUs", cfg.protocol_cfg.eps.len()),
        );
        return report;
    }
    if let Some(l) = &cfg.initial_lambda {
        if l.len() != n || l.iter().any(|x| !x.is_finite()) {
            report.push("init", Severity::Fail, "initial lambda must have one finite value per ICU");
        }
    }

    if cfg.graph.is_symmetric() {
        report.push("undirected", Severity::Pass, "ICU subgraph is undirected");
    } else {
        report.push("undirected", Severity::Fail, "ICU adjacency is not symmetric");
    }

    let (a_eps, a_mu) = match cfg.protocol {
        Protocol::GridConnected => {
            let tree = cfg.graph.check_spanning_tree_from_er();
            report.push(
                "A1",
                if tree { Severity::Pass } else { Severity::Fail },
                if tree {
                    "spanning tree rooted at the ER"
                } else {
                    "some ICU cannot receive the price from the ER"
                },
            );
            let paths = cfg.graph.check_paths_to_er();
            report.push(
                "A2",
                if paths { Severity::Pass } else { Severity::Fail },
                if paths {
                    "every ICU has a path to the ER"
                } else {
                    "some ICU has no path to the ER"
                },
            );
            ("A3", "A4")
        }
        Protocol::Integrated => {
            let ok = cfg.graph.check_bidirectional_er_neighbor();
            report.push(
                "A5",
                if ok { Severity::Pass } else { Severity::Fail },
                if ok {
                    "connected subgraph with a bidirectional ER neighbour"
                } else if !cfg.graph.is_weakly_connected() {
                    "ICU subgraph is not connected"
                } else {
                    "no ICU both receives from and sends to the ER"
                },
            );
            ("A6", "A7")
        }
    };

    let bounds = cfg.graph.step_size_bounds();
    for (i, (&e, &b)) in cfg.protocol_cfg.eps.iter().zip(&bounds.eps_max).enumerate() {
        check_step(&mut report, a_eps, &format!("eps[{}]", i + 1), e, b);
    }
    check_step(&mut report, a_mu, "mu", cfg.protocol_cfg.mu, bounds.mu_max);
    report.eps_max = bounds.eps_max.clone();
    report.mu_max = Some(bounds.mu_max);

    if cfg.protocol == Protocol::Integrated {
        match cfg.protocol_cfg.sigma.validate() {
            Ok(()) => report.push("A8", Severity::Pass, "feedback gain positive, vanishing, non-summable"),
            Err(e) => report.push("A8", Severity::Fail, e.to_string()),
        }
    }

    let mu = cfg.protocol_cfg.mu;
    if mu > 0.0 && mu < bounds.mu_max {
        match cfg.graph.lemma1_spectral_check(mu, cfg.absorption()) {
            Ok(s) => {
                report.spectral_radius = Some(s.radius);
                report.push(
                    "spectral",
                    if s.stable { Severity::Pass } else { Severity::Fail },
                    format!(
                        "radius {:.9} {} 1 - {STABILITY_MARGIN:e}",
                        s.radius,
                        if s.stable { "<" } else { ">=" }
                    ),
                );
            }
            Err(e) => report.push("spectral", Severity::Fail, e.to_string()),
        }
    }

    check_events(cfg, &mut report);

    if cfg.may_island() {
        let feas = cfg.system.isolated_feasibility();
        if feas.is_feasible() {
            report.push("islanding", Severity::Pass, "isolated operation is feasible");
        } else {
            report.push(
                "islanding",
                Severity::Warn,
                format!(
                    "demand {:.3} MW outside isolated net-output range [{:.3}, {:.3}] MW",
                    feas.total_demand, feas.net_at_lower, feas.net_at_upper
                ),
            );
        }
    }
    report
}

fn check_events(cfg: &ScenarioConfig, report: &mut ValidationReport) {
    let n = cfg.graph.n_icus();
    let mut ok = true;
    for e in &cfg.events {
        let problem = if e.round == 0 || e.round > cfg.horizon {
            Some(format!("round {} outside [1, {}]", e.round, cfg.horizon))
        } else {
            match e.event {
                Event::SetMode(_) if cfg.protocol == Protocol::GridConnected => {
                    Some("set_mode requires the integrated protocol".to_string())
                }
                Event::Outage { bus } | Event::Reconnect { bus } if bus >= n => {
                    Some(format!("bus {} does not exist", bus + 1))
                }
                Event::SetDemand { bus, .. } if bus >= n => Some(format!("bus {} does not exist", bus + 1)),
                Event::SetDemand { demand, .. } if !(demand >= 0.0 && demand.is_finite()) => {
                    Some(format!("demand {demand} must be finite and non-negative"))
                }
                Event::SetPrice { price } if !price.is_finite() => Some(format!("price {price} is not finite")),
                _ => None,
            }
        };
        if let Some(msg) = problem {
            ok = false;
            report.push("events", Severity::Fail, format!("{} at round {}: {msg}", e.event, e.round));
        }
    }
    if ok {
        report.push("events", Severity::Pass, format!("{} scheduled events", cfg.events.len()));
    }
}

/// Validates, then simulates.
pub fn run(cfg: &ScenarioConfig) -> Result<SimulationTrace, ScenarioError> {
    let report = validate(cfg);
    if !report.passed() {
        return Err(ScenarioError::Invalid(report));
    }
    run_unchecked(cfg)
}

/// Simulates without checking the convergence assumptions.
pub fn run_unchecked(cfg: &ScenarioConfig) -> Result<SimulationTrace, ScenarioError> {
    let engine = ConsensusEngine::new(cfg.graph.clone(), cfg.protocol, cfg.protocol_cfg.clone())?;
    let mut sys = cfg.system.clone();
    let nominal = cfg.system.clone();
    let mut state = engine.initial_state(&sys, cfg.initial_mode, cfg.initial_lambda.as_deref())?;

    let mut events = cfg.events.clone();
    events.sort_by_key(|e| e.round);
    let mut pending = events.into_iter().peekable();

    let mut records = Vec::with_capacity(cfg.horizon + 1);
    records.push(snapshot(0, &state, &sys, Vec::new()));
    for k in 1..=cfg.horizon {
        let mut applied = Vec::new();
        while let Some(e) = pending.next_if(|e| e.round == k) {
            apply_event(e.event, &mut sys, &nominal, &mut state);
            applied.push(e.event);
        }
        state = engine.step(&state, &sys, k - 1);
        if !state.is_finite() {
            return Err(ScenarioError::NonFinite { round: k });
        }
        records.push(snapshot(k, &state, &sys, applied));
    }
    Ok(SimulationTrace {
        protocol: cfg.protocol,
        records,
    })
}

fn apply_event(event: Event, sys: &mut SystemParams, nominal: &SystemParams, state: &mut NetworkState) {
    match event {
        Event::SetMode(mode) => state.er.mode = mode,
        Event::SetPrice { price } => state.er.price = price,
        _ => {}
    }
    apply_to_system(event, sys, nominal);
}

fn apply_to_system(event: Event, sys: &mut SystemParams, nominal: &SystemParams) {
    match event {
        Event::SetMode(_) => {}
        Event::Outage { bus } => {
            let g = &mut sys.generators[bus];
            g.p_min = 0.0;
            g.p_max = 0.0;
        }
        Event::Reconnect { bus } => {
            let g = &mut sys.generators[bus];
            g.p_min = nominal.generators[bus].p_min;
            g.p_max = nominal.generators[bus].p_max;
        }
        Event::SetPrice { price } => sys.price = price,
        Event::SetDemand { bus, demand } => sys.generators[bus].demand = demand,
    }
}

fn snapshot(round: usize, state: &NetworkState, sys: &SystemParams, events: Vec<Event>) -> RoundRecord {
    RoundRecord {
        round,
        agents: state.agents.clone(),
        er: state.er,
        aggregates: Aggregates::compute(&state.agents, &state.er, sys),
        events,
    }
}
