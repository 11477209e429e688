//! Windowed convergence detection over recorded rounds.

use serde::{Deserialize, Serialize};

use crate::trace::RoundRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTolerances {
    /// Max `|lambda_i(k) - lambda_i(k-1)|`.
    pub lambda_step: f64,
    /// Max `|dP^_i(k)|` (MW).
    pub mismatch_est: f64,
    /// Max `|P_MG(k) - P_MG(k-1)|` (MW).
    pub p_mg_step: f64,
    /// Number of records in the window.
    pub window: usize,
}

impl Default for ConvergenceTolerances {
    fn default() -> Self {
        Self {
            lambda_step: 1e-6,
            mismatch_est: 1e-4,
            p_mg_step: 1e-4,
            window: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged,
    NotConverged {
        lambda_step: f64,
        mismatch_est: f64,
        p_mg_step: f64,
    },
    /// An event was applied inside the window.
    Disturbed { round: usize },
    InsufficientData { have: usize, need: usize },
}

impl ConvergenceStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, ConvergenceStatus::Converged)
    }
}

/// Checks the trailing `tol.window` records of `records`.
pub fn detect_convergence(records: &[RoundRecord], tol: &ConvergenceTolerances) -> ConvergenceStatus {
    let need = tol.window.max(2);
    if records.len() < need {
        return ConvergenceStatus::InsufficientData {
            have: records.len(),
            need,
        };
    }
    check_window(&records[records.len() - need..], tol)
}

fn check_window(window: &[RoundRecord], tol: &ConvergenceTolerances) -> ConvergenceStatus {
    if let Some(r) = window.iter().find(|r| !r.events.is_empty()) {
        return ConvergenceStatus::Disturbed { round: r.round };
    }
    let mut lambda_step = 0.0_f64;
    let mut p_mg_step = 0.0_f64;
    for pair in window.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        for (a, b) in prev.agents.iter().zip(&cur.agents) {
            lambda_step = lambda_step.max((b.lambda - a.lambda).abs());
        }
        p_mg_step = p_mg_step.max((cur.er.p_mg - prev.er.p_mg).abs());
    }
    let mismatch_est = window
        .iter()
        .flat_map(|r| &r.agents)
        .map(|a| a.mismatch_est.abs())
        .fold(0.0, f64::max);
    if lambda_step < tol.lambda_step && mismatch_est < tol.mismatch_est && p_mg_step < tol.p_mg_step {
        ConvergenceStatus::Converged
    } else {
        ConvergenceStatus::NotConverged {
            lambda_step,
            mismatch_est,
            p_mg_step,
        }
    }
}

/// Last round of the earliest converged window, if any.
pub fn first_convergence_round(records: &[RoundRecord], tol: &ConvergenceTolerances) -> Option<usize> {
    let need = tol.window.max(2);
    if records.len() < need {
        return None;
    }
    (need..=records.len())
        .find(|&end| check_window(&records[end - need..end], tol).is_converged())
        .map(|end| records[end - 1].round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::ProjectionRegime;
    use crate::engine::{AgentState, ErState, OperatingMode};
    use crate::scenario::Event;
    use crate::trace::Aggregates;

    fn record(round: usize, lambda: f64, p_mg: f64) -> RoundRecord {
        let agent = AgentState {
            lambda,
            power: 1.0,
            mismatch_est: 0.0,
            y: 0.0,
            p_m: 0.0,
            bus_mismatch: 0.0,
            regime: ProjectionRegime::Interior,
        };
        RoundRecord {
            round,
            agents: vec![agent; 3],
            er: ErState {
                p_mg,
                price: 1.0,
                mode: OperatingMode::GridConnected,
            },
            aggregates: Aggregates {
                total_generation: 3.0,
                total_supply: 3.0 + p_mg,
                total_demand: 3.0 + p_mg,
                total_loss: 0.0,
                est_total_mismatch: 0.0,
                real_total_mismatch: 0.0,
            },
            events: Vec::new(),
        }
    }

    #[test]
    fn constant_window_converges() {
        let recs: Vec<_> = (0..60).map(|k| record(k, 2.0, 5.0)).collect();
        let tol = ConvergenceTolerances::default();
        assert!(detect_convergence(&recs, &tol).is_converged());
        assert_eq!(first_convergence_round(&recs, &tol), Some(49));
    }

    #[test]
    fn event_in_window_blocks() {
        let mut recs: Vec<_> = (0..60).map(|k| record(k, 2.0, 5.0)).collect();
        recs[40].events.push(Event::SetMode(OperatingMode::Isolated));
        let status = detect_convergence(&recs, &ConvergenceTolerances::default());
        assert_eq!(status, ConvergenceStatus::Disturbed { round: 40 });
    }

    #[test]
    fn moving_price_not_converged() {
        let recs: Vec<_> = (0..60).map(|k| record(k, k as f64 * 1e-3, 5.0)).collect();
        let status = detect_convergence(&recs, &ConvergenceTolerances::default());
        assert!(matches!(status, ConvergenceStatus::NotConverged { .. }));
    }

    #[test]
    fn short_trace() {
        let recs: Vec<_> = (0..10).map(|k| record(k, 2.0, 5.0)).collect();
        assert_eq!(
            detect_convergence(&recs, &ConvergenceTolerances::default()),
            ConvergenceStatus::InsufficientData { have: 10, need: 50 }
        );
    }
}
