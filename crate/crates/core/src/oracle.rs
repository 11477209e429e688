//! Centralized optimum of the economic dispatch problem.
//!
//! Grid-connected: every generator sits at `Phi_i(lambda_0)` and the exchanged
//! power closes the balance. Isolated: the common penalized incremental cost
//! `lambda'` is the root of
//!
//! ```text
//! r(lambda) = sum_i [ Phi_i(lambda) - B_i Phi_i(lambda)^2 ] - sum_i P_Di
//! ```
//!
//! Clamped generators contribute their constant limits to `r`, so the clamped
//! form covers every active set without enumerating them. `r` is non-decreasing
//! when each `Phi_i` is (positive denominator, guaranteed by `alpha_i <= 0` on the
//! bracket) and `p - B p^2` is increasing on `[p_min, p_max]`, i.e.
//! `p_max < 1 / (2 B)`. The solver checks the latter before bisecting.

use serde::Serialize;
use thiserror::Error;

use crate::dispatch::SystemParams;

/// Bisection stops once the bracket on `lambda` is this narrow.
pub const LAMBDA_TOL: f64 = 1e-9;
/// Tolerance for active-set membership (MW).
pub const ACTIVE_SET_TOL: f64 = 1e-9;
/// Balance tolerance used by [`verify_kkt`] (MW).
pub const BALANCE_TOL: f64 = 1e-6;
/// Relative tolerance of the stationarity check.
pub const STATIONARITY_RTOL: f64 = 1e-6;
/// Tolerance on the clamped-generator multiplier sign checks (MW).
pub const CLAMP_SIGN_TOL: f64 = 1e-6;

const FALLBACK_BRACKET: (f64, f64) = (-1e6, 1e6);
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(
        "no isolated-mode dispatch: demand {total_demand:.3} MW lies outside the net supply \
         range [{net_at_lower:.3}, {net_at_upper:.3}] MW the generators can deliver"
    )]
    NoRoot {
        total_demand: f64,
        net_at_lower: f64,
        net_at_upper: f64,
    },
    #[error(
        "bus {bus}: p_max = {p_max} MW is not below 1/(2B) = {limit} MW, so the isolated \
         balance residual may not be monotone"
    )]
    AmbiguousRoot { bus: usize, p_max: f64, limit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    GridConnected,
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSolution {
    pub mode: DispatchMode,
    pub lambda_star: f64,
    pub p_star: Vec<f64>,
    pub p_mg_star: f64,
    pub active_upper: Vec<usize>,
    pub active_lower: Vec<usize>,
    pub total_loss: f64,
    pub total_cost: f64,
}

pub fn solve_grid_connected(sys: &SystemParams) -> DispatchSolution {
    let p_star: Vec<f64> = sys
        .generators
        .iter()
        .map(|g| g.project_power(sys.price))
        .collect();
    let total_loss = total_loss(sys, &p_star);
    let p_mg_star = sys.total_demand() + total_loss - p_star.iter().sum::<f64>();
    finish(sys, DispatchMode::GridConnected, sys.price, p_star, p_mg_star, total_loss)
}

pub fn solve_isolated(sys: &SystemParams) -> Result<DispatchSolution, OracleError> {
    for (bus, g) in sys.generators.iter().enumerate() {
        if g.loss_factor > 0.0 {
            let limit = 1.0 / (2.0 * g.loss_factor);
            if g.p_max >= limit {
                return Err(OracleError::AmbiguousRoot {
                    bus,
                    p_max: g.p_max,
                    limit,
                });
            }
        }
    }

    let demand = sys.total_demand();
    let residual = |lambda: f64| -> f64 {
        sys.generators
            .iter()
            .map(|g| g.net_output(g.project_power(lambda)))
            .sum::<f64>()
            - demand
    };

    let (mut lo, mut hi) = bracket(sys);
    let (r_lo, r_hi) = (residual(lo), residual(hi));
    if r_lo > 0.0 || r_hi < 0.0 {
        let env = sys.isolated_feasibility();
        return Err(OracleError::NoRoot {
            total_demand: env.total_demand,
            net_at_lower: env.net_at_lower,
            net_at_upper: env.net_at_upper,
        });
    }

    let lambda = if r_lo == 0.0 {
        lo
    } else if r_hi == 0.0 {
        hi
    } else {
        for _ in 0..MAX_BISECTIONS {
            if hi - lo <= LAMBDA_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if residual(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let p_star: Vec<f64> = sys
        .generators
        .iter()
        .map(|g| g.project_power(lambda))
        .collect();
    let total_loss = total_loss(sys, &p_star);
    Ok(finish(sys, DispatchMode::Isolated, lambda, p_star, 0.0, total_loss))
}

/// `[lambda_lo, lambda_hi]` where every generator is at its lower and upper
/// limit respectively. Thresholds invert `Phi` at the limits.
fn bracket(sys: &SystemParams) -> (f64, f64) {
    let threshold = |g: &crate::dispatch::GeneratorParams, p: f64| g.penalized_incremental_cost(p);
    let lo = sys
        .generators
        .iter()
        .map(|g| threshold(g, g.p_min))
        .fold(f64::INFINITY, f64::min);
    let hi = sys
        .generators
        .iter()
        .map(|g| threshold(g, g.p_max))
        .fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        // Widen slightly so rounding in the threshold cannot leave a generator unclamped.
        let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        (lo - pad, hi + pad)
    } else {
        FALLBACK_BRACKET
    }
}

fn total_loss(sys: &SystemParams, p: &[f64]) -> f64 {
    sys.generators.iter().zip(p).map(|(g, &p)| g.line_loss(p)).sum()
}

fn finish(
    sys: &SystemParams,
    mode: DispatchMode,
    lambda_star: f64,
    p_star: Vec<f64>,
    p_mg_star: f64,
    total_loss: f64,
) -> DispatchSolution {
    let (active_upper, active_lower) = active_sets(sys, &p_star);
    let mut total_cost: f64 = sys.generators.iter().zip(&p_star).map(|(g, &p)| g.cost(p)).sum();
    if mode == DispatchMode::GridConnected {
        total_cost += sys.price * p_mg_star;
    }
    DispatchSolution {
        mode,
        lambda_star,
        p_star,
        p_mg_star,
        active_upper,
        active_lower,
        total_loss,
        total_cost,
    }
}

/// Indices at the upper and lower limits (within [`ACTIVE_SET_TOL`]).
pub fn active_sets(sys: &SystemParams, p: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (i, (g, &p)) in sys.generators.iter().zip(p).enumerate() {
        if (p - g.p_max).abs() <= ACTIVE_SET_TOL {
            upper.push(i);
        }
        if (p - g.p_min).abs() <= ACTIVE_SET_TOL {
            lower.push(i);
        }
    }
    (upper, lower)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "condition", content = "bus", rename_all = "snake_case")]
pub enum KktCondition {
    WithinLimits(usize),
    Stationarity(usize),
    UpperMultiplierSign(usize),
    LowerMultiplierSign(usize),
    Balance,
    PriceMatch,
    NoExchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktCheck {
    pub condition: KktCondition,
    pub passed: bool,
    /// Size of the violation measured by the check (0 when satisfied exactly).
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub checks: Vec<KktCheck>,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &KktCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, condition: KktCondition) -> Option<&KktCheck> {
        self.checks.iter().find(|c| c.condition == condition)
    }
}

/// Audits a candidate dispatch against the first-order optimality conditions.
pub fn verify_kkt(sys: &SystemParams, sol: &DispatchSolution, isolated: bool) -> KktReport {
    let lambda = sol.lambda_star;
    let mut checks = Vec::new();
    let mut push = |condition, residual: f64, tol: f64| {
        checks.push(KktCheck {
            condition,
            passed: residual <= tol,
            residual,
        })
    };

    for (i, (g, &p)) in sys.generators.iter().zip(&sol.p_star).enumerate() {
        let outside = (g.p_min - p).max(p - g.p_max).max(0.0);
        push(KktCondition::WithinLimits(i), outside, ACTIVE_SET_TOL);

        let at_upper = (p - g.p_max).abs() <= ACTIVE_SET_TOL;
        let at_lower = (p - g.p_min).abs() <= ACTIVE_SET_TOL;
        let u = g.unconstrained_power(lambda);
        if at_upper && at_lower {
            // Fixed output: the two multipliers can absorb any stationarity gap.
        } else if at_upper {
            // nu_upper >= 0 requires the stationary point to sit at or beyond p_max.
            let gap = u.map_or(0.0, |u| (g.p_max - u).max(0.0));
            push(KktCondition::UpperMultiplierSign(i), gap, CLAMP_SIGN_TOL);
        } else if at_lower {
            let gap = u.map_or(0.0, |u| (u - g.p_min).max(0.0));
            push(KktCondition::LowerMultiplierSign(i), gap, CLAMP_SIGN_TOL);
        } else {
            let err = (lambda - g.penalized_incremental_cost(p)).abs();
            push(
                KktCondition::Stationarity(i),
                err,
                STATIONARITY_RTOL * (1.0 + lambda.abs()),
            );
        }
    }

    let loss: f64 = sys.generators.iter().zip(&sol.p_star).map(|(g, &p)| g.line_loss(p)).sum();
    let supply: f64 = sol.p_star.iter().sum::<f64>() + sol.p_mg_star;
    push(
        KktCondition::Balance,
        (supply - sys.total_demand() - loss).abs(),
        BALANCE_TOL,
    );
    if isolated {
        push(KktCondition::NoExchange, sol.p_mg_star.abs(), BALANCE_TOL);
    } else {
        push(
            KktCondition::PriceMatch,
            (lambda - sys.price).abs(),
            STATIONARITY_RTOL * (1.0 + sys.price.abs()),
        );
    }
    KktReport { checks }
}
