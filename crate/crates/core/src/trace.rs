//! Per-round simulation records and derived summaries.

use serde::{Deserialize, Serialize};

use crate::convergence::{first_convergence_round, ConvergenceTolerances};
use crate::dispatch::SystemParams;
use crate::engine::{AgentState, ErState, OperatingMode, Protocol};
use crate::scenario::Event;

/// Settling thresholds used by [`TraceSummary`].
pub const LAMBDA_SETTLE_TOL: f64 = 1e-3;
pub const P_MG_SETTLE_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// `sum P_i` (MW).
    pub total_generation: f64,
    /// `sum P_i + P_MG` (MW).
    pub total_supply: f64,
    /// `sum P_Di` (MW).
    pub total_demand: f64,
    /// `sum B_i P_i^2` (MW).
    pub total_loss: f64,
    /// `sum dP^_i` (MW).
    pub est_total_mismatch: f64,
    /// `sum P_Di + sum P_Li - (sum P_i + P_MG)` (MW).
    pub real_total_mismatch: f64,
}

impl Aggregates {
    pub fn compute(agents: &[AgentState], er: &ErState, sys: &SystemParams) -> Self {
        let total_generation: f64 = agents.iter().map(|a| a.power).sum();
        let total_demand = sys.total_demand();
        let total_loss: f64 = agents
            .iter()
            .zip(&sys.generators)
            .map(|(a, g)| g.line_loss(a.power))
            .sum();
        let est_total_mismatch: f64 = agents.iter().map(|a| a.mismatch_est).sum();
        let total_supply = total_generation + er.p_mg;
        Self {
            total_generation,
            total_supply,
            total_demand,
            total_loss,
            est_total_mismatch,
            real_total_mismatch: total_demand + total_loss - total_supply,
        }
    }

    /// `|est - real|` scaled by `1 + |sum dP_i|`.
    pub fn conservation_residual(&self) -> f64 {
        let bus_sum = self.real_total_mismatch + self.total_supply - self.total_generation;
        (self.est_total_mismatch - self.real_total_mismatch).abs() / (1.0 + bus_sum.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub agents: Vec<AgentState>,
    pub er: ErState,
    pub aggregates: Aggregates,
    /// Events applied immediately before this round was computed.
    pub events: Vec<Event>,
}

impl RoundRecord {
    pub fn lambda_spread(&self) -> f64 {
        let (lo, hi) = self
            .agents
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                (lo.min(a.lambda), hi.max(a.lambda))
            });
        hi - lo
    }

    pub fn max_price_error(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| (a.lambda - self.er.price).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub protocol: Protocol,
    pub records: Vec<RoundRecord>,
}

impl SimulationTrace {
    pub fn n_icus(&self) -> usize {
        self.records.first().map_or(0, |r| r.agents.len())
    }

    pub fn horizon(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &RoundRecord {
        self.records.last().expect("trace always holds round 0")
    }

    pub fn max_conservation_residual(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.aggregates.conservation_residual())
            .fold(0.0, f64::max)
    }

    /// First round from which every later price stays within `tol` of its final value.
    pub fn lambda_settle_round(&self, tol: f64) -> Option<usize> {
        let fin = &self.last().agents;
        self.settle_round(|r| {
            r.agents
                .iter()
                .zip(fin)
                .all(|(a, f)| (a.lambda - f.lambda).abs() < tol)
        })
    }

    pub fn p_mg_settle_round(&self, tol: f64) -> Option<usize> {
        let fin = self.last().er.p_mg;
        self.settle_round(|r| (r.er.p_mg - fin).abs() < tol)
    }

    fn settle_round(&self, within: impl Fn(&RoundRecord) -> bool) -> Option<usize> {
        let mut first = None;
        for r in self.records.iter().rev() {
            if !within(r) {
                break;
            }
            first = Some(r.round);
        }
        first
    }

    pub fn degenerate_projections(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| &r.agents)
            .filter(|a| a.regime.is_singular())
            .count()
    }

    pub fn summary(&self, tol: &ConvergenceTolerances) -> TraceSummary {
        let last = self.last();
        TraceSummary {
            protocol: self.protocol,
            horizon: self.horizon(),
            final_lambda: last.agents.iter().map(|a| a.lambda).collect(),
            final_power: last.agents.iter().map(|a| a.power).collect(),
            final_mismatch_est: last.agents.iter().map(|a| a.mismatch_est).collect(),
            final_p_mg: last.er.p_mg,
            final_mode: last.er.mode,
            final_total_loss: last.aggregates.total_loss,
            convergence_round: first_convergence_round(&self.records, tol),
            lambda_settle_round: self.lambda_settle_round(LAMBDA_SETTLE_TOL),
            p_mg_settle_round: self.p_mg_settle_round(P_MG_SETTLE_TOL),
            max_conservation_residual: self.max_conservation_residual(),
            degenerate_projections: self.degenerate_projections(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub protocol: Protocol,
    pub horizon: usize,
    pub final_lambda: Vec<f64>,
    pub final_power: Vec<f64>,
    pub final_mismatch_est: Vec<f64>,
    pub final_p_mg: f64,
    pub final_mode: OperatingMode,
    pub final_total_loss: f64,
    /// Last round of the first window that satisfied the convergence tolerances.
    pub convergence_round: Option<usize>,
    pub lambda_settle_round: Option<usize>,
    pub p_mg_settle_round: Option<usize>,
    pub max_conservation_residual: f64,
    /// Agent-rounds that hit the zero-denominator case of the projection.
    pub degenerate_projections: usize,
}
