//! Synchronous-round consensus protocols.
//!
//! A round maps the network state at `k` to the state at `k + 1`. Every read
//! refers to round `k` and every write produces round `k + 1`, so agents update
//! simultaneously. Inside a round the order is:
//!
//! 1. price update (leader-following consensus, plus mismatch feedback for the
//!    integrated protocol),
//! 2. projection `P_i = Phi_i(lambda_i)` and the new bus mismatch,
//! 3. mismatch-consensus step producing `y_i`,
//! 4. ER step: absorb the `y_i` of its in-neighbours into the exchanged power,
//! 5. ICU step: absorb or compensate the local mismatch estimate.
//!
//! Steps 1 to 3 run on an [`Inbox`] holding only the ICU's own state, the round-`k`
//! messages of its in-neighbours, and the ER price when the ER sends to it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{ProjectionRegime, SystemParams};
use crate::topology::GridGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("step size {name} = {value} must be positive and finite")]
    NonPositiveStep { name: String, value: f64 },
    #[error("invalid feedback gain: {0}")]
    InvalidGain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Grid-connected algorithm; the ER is always connected (`g = 1`).
    #[serde(alias = "gc")]
    GridConnected,
    /// Integrated algorithm covering isolated and grid-connected operation.
    #[serde(alias = "int")]
    Integrated,
}

impl Protocol {
    pub fn short_name(self) -> &'static str {
        match self {
            Protocol::GridConnected => "gc",
            Protocol::Integrated => "int",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    Isolated,
    GridConnected,
}

impl OperatingMode {
    /// The mode flag `g`.
    pub fn g(self) -> f64 {
        match self {
            OperatingMode::Isolated => 0.0,
            OperatingMode::GridConnected => 1.0,
        }
    }

    pub fn from_flag(g: u8) -> Option<Self> {
        match g {
            0 => Some(OperatingMode::Isolated),
            1 => Some(OperatingMode::GridConnected),
            _ => None,
        }
    }
}

/// Vanishing feedback gain `sigma(k)` of the integrated protocol.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FeedbackGain {
    /// `1 / (1 + k)`.
    #[default]
    Reciprocal,
    /// `scale / (1 + k)^exponent`, `scale > 0`, `exponent` in `(0, 1]`.
    PowerLaw { scale: f64, exponent: f64 },
}

impl FeedbackGain {
    pub fn value(&self, k: usize) -> f64 {
        let t = 1.0 + k as f64;
        match *self {
            FeedbackGain::Reciprocal => 1.0 / t,
            FeedbackGain::PowerLaw { scale, exponent } => scale / t.powf(exponent),
        }
    }

    /// Positive, vanishing, non-summable: holds for both built-in families
    /// whenever the parameters are in range.
    pub fn validate(&self) -> Result<(), EngineError> {
        match *self {
            FeedbackGain::Reciprocal => Ok(()),
            FeedbackGain::PowerLaw { scale, exponent } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(EngineError::InvalidGain(format!(
                        "power-law scale {scale} must be positive"
                    )));
                }
                if !(exponent > 0.0 && exponent <= 1.0) {
                    return Err(EngineError::InvalidGain(format!(
                        "power-law exponent {exponent} must lie in (0, 1]"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Per-ICU price step sizes `eps_i`.
    pub eps: Vec<f64>,
    /// Mismatch-consensus step size `mu`.
    pub mu: f64,
    /// Only used by [`Protocol::Integrated`].
    #[serde(default)]
    pub sigma: FeedbackGain,
}

impl ProtocolConfig {
    pub fn uniform(n: usize, eps: f64, mu: f64) -> Self {
        Self {
            eps: vec![eps; n],
            mu,
            sigma: FeedbackGain::Reciprocal,
        }
    }
}

/// Per-ICU iteration variables at one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Incremental cost with penalty factor `lambda_i`.
    pub lambda: f64,
    /// Generated power `P_i` (MW).
    pub power: f64,
    /// Local estimate of the average power mismatch (MW).
    pub mismatch_est: f64,
    /// Intermediate consensus value `y_i` (MW).
    pub y: f64,
    /// Cumulative power exchanged through the ER for this bus (MW, integrated protocol).
    pub p_m: f64,
    /// Real bus mismatch `P_D + B P^2 - P` at this round (MW).
    pub bus_mismatch: f64,
    pub regime: ProjectionRegime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErState {
    /// Power imported from the distribution system (MW).
    pub p_mg: f64,
    /// Distribution-system price `lambda_0`.
    pub price: f64,
    pub mode: OperatingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub agents: Vec<AgentState>,
    pub er: ErState,
}

impl NetworkState {
    pub fn total_mismatch_estimate(&self) -> f64 {
        self.agents.iter().map(|a| a.mismatch_est).sum()
    }

    pub fn total_bus_mismatch(&self) -> f64 {
        self.agents.iter().map(|a| a.bus_mismatch).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.er.p_mg.is_finite()
            && self.agents.iter().all(|a| {
                a.lambda.is_finite()
                    && a.power.is_finite()
                    && a.mismatch_est.is_finite()
                    && a.y.is_finite()
                    && a.p_m.is_finite()
            })
    }
}

/// What ICU `j` broadcasts to its out-neighbours at round `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMessage {
    pub from: usize,
    pub weight: f64,
    pub lambda: f64,
    pub mismatch_est: f64,
}

/// Everything ICU `i` may read when computing its round-`k + 1` update.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbox {
    pub own: AgentState,
    pub neighbors: Vec<NeighborMessage>,
    /// `lambda_0`, present only when the ER currently sends the price to this ICU.
    pub er_price: Option<f64>,
}

/// Result of the ICU-local part of a round.
#[derive(Debug, Clone, Copy)]
struct LocalUpdate {
    lambda: f64,
    power: f64,
    regime: ProjectionRegime,
    bus_mismatch: f64,
    y: f64,
}

#[derive(Debug, Clone)]
pub struct ConsensusEngine {
    graph: GridGraph,
    protocol: Protocol,
    cfg: ProtocolConfig,
}

impl ConsensusEngine {
    pub fn new(graph: GridGraph, protocol: Protocol, cfg: ProtocolConfig) -> Result<Self, EngineError> {
        let n = graph.n_icus();
        if cfg.eps.len() != n {
            return Err(EngineError::LengthMismatch {
                what: "eps",
                got: cfg.eps.len(),
                expected: n,
            });
        }
        for (i, &e) in cfg.eps.iter().enumerate() {
            if !(e > 0.0 && e.is_finite()) {
                return Err(EngineError::NonPositiveStep {
                    name: format!("eps[{i}]"),
                    value: e,
                });
            }
        }
        if !(cfg.mu > 0.0 && cfg.mu.is_finite()) {
            return Err(EngineError::NonPositiveStep {
                name: "mu".into(),
                value: cfg.mu,
            });
        }
        if protocol == Protocol::Integrated {
            cfg.sigma.validate()?;
        }
        Ok(Self { graph, protocol, cfg })
    }

    pub fn graph(&self) -> &GridGraph {
        &self.graph
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    /// Round-0 state: `P_i(0) = Phi_i(lambda_i(0))`, estimates seeded with the
    /// real bus mismatches, no power exchanged yet.
    pub fn initial_state(
        &self,
        sys: &SystemParams,
        mode: OperatingMode,
        lambda0: Option<&[f64]>,
    ) -> Result<NetworkState, EngineError> {
        let n = self.graph.n_icus();
        if sys.len() != n {
            return Err(EngineError::LengthMismatch {
                what: "generators",
                got: sys.len(),
                expected: n,
            });
        }
        if let Some(l) = lambda0 {
            if l.len() != n {
                return Err(EngineError::LengthMismatch {
                    what: "initial lambda",
                    got: l.len(),
                    expected: n,
                });
            }
        }
        let agents = sys
            .generators
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let lambda = lambda0.map_or(0.0, |l| l[i]);
                let proj = g.project(lambda);
                let dp = g.bus_mismatch(proj.power);
                AgentState {
                    lambda,
                    power: proj.power,
                    mismatch_est: dp,
                    y: 0.0,
                    p_m: 0.0,
                    bus_mismatch: dp,
                    regime: proj.regime,
                }
            })
            .collect();
        let mode = match self.protocol {
            Protocol::GridConnected => OperatingMode::GridConnected,
            Protocol::Integrated => mode,
        };
        Ok(NetworkState {
            agents,
            er: ErState {
                p_mg: 0.0,
                price: sys.price,
                mode,
            },
        })
    }

    /// Messages available to ICU `i` at the start of a round.
    pub fn inbox(&self, i: usize, state: &NetworkState) -> Inbox {
        let neighbors = self
            .graph
            .in_neighbors(i)
            .map(|(j, weight)| NeighborMessage {
                from: j,
                weight,
                lambda: state.agents[j].lambda,
                mismatch_est: state.agents[j].mismatch_est,
            })
            .collect();
        let g = match self.protocol {
            Protocol::GridConnected => 1.0,
            Protocol::Integrated => state.er.mode.g(),
        };
        let er_price = (g * self.graph.er_to_icu(i) > 0.0).then_some(state.er.price);
        Inbox {
            own: state.agents[i],
            neighbors,
            er_price,
        }
    }

    /// Advances one round with the protocol this engine was built for.
    pub fn step(&self, state: &NetworkState, sys: &SystemParams, k: usize) -> NetworkState {
        match self.protocol {
            Protocol::GridConnected => self.gc_round(state, sys),
            Protocol::Integrated => self.int_round(state, sys, k),
        }
    }

    fn local_update(&self, i: usize, inbox: &Inbox, sys: &SystemParams, feedback: f64) -> LocalUpdate {
        let own = inbox.own;
        let mut price_drive: f64 = inbox
            .neighbors
            .iter()
            .map(|m| m.weight * (m.lambda - own.lambda))
            .sum();
        if let Some(price) = inbox.er_price {
            price_drive += price - own.lambda;
        }
        let lambda = own.lambda + self.cfg.eps[i] * price_drive + feedback * own.mismatch_est;

        let gen = &sys.generators[i];
        let proj = gen.project(lambda);
        let bus_mismatch = gen.bus_mismatch(proj.power);

        let mismatch_drive: f64 = inbox
            .neighbors
            .iter()
            .map(|m| m.weight * (m.mismatch_est - own.mismatch_est))
            .sum();
        let y = own.mismatch_est + self.cfg.mu * mismatch_drive + bus_mismatch - own.bus_mismatch;

        LocalUpdate {
            lambda,
            power: proj.power,
            regime: proj.regime,
            bus_mismatch,
            y,
        }
    }

    fn local_updates(&self, state: &NetworkState, sys: &SystemParams, feedback: f64) -> Vec<LocalUpdate> {
        (0..self.graph.n_icus())
            .map(|i| self.local_update(i, &self.inbox(i, state), sys, feedback))
            .collect()
    }

    /// One round of the grid-connected protocol.
    pub fn gc_round(&self, state: &NetworkState, sys: &SystemParams) -> NetworkState {
        let local = self.local_updates(state, sys, 0.0);

        // ER: accumulate the y-values it hears.
        let increment: f64 = local
            .iter()
            .enumerate()
            .map(|(i, u)| self.graph.icu_to_er(i) * u.y)
            .sum();

        let agents = local
            .iter()
            .enumerate()
            .map(|(i, u)| AgentState {
                lambda: u.lambda,
                power: u.power,
                mismatch_est: (1.0 - self.graph.icu_to_er(i)) * u.y,
                y: u.y,
                p_m: 0.0,
                bus_mismatch: u.bus_mismatch,
                regime: u.regime,
            })
            .collect();
        NetworkState {
            agents,
            er: ErState {
                p_mg: state.er.p_mg + increment,
                price: state.er.price,
                mode: OperatingMode::GridConnected,
            },
        }
    }

    /// One round of the integrated protocol; `k` is the index of the round being
    /// left and selects `sigma(k)`.
    pub fn int_round(&self, state: &NetworkState, sys: &SystemParams, k: usize) -> NetworkState {
        let g = state.er.mode.g();
        let local = self.local_updates(state, sys, self.cfg.sigma.value(k));

        // ER: per-bus exchange bookkeeping.
        let p_m_next: Vec<f64> = local
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let delta = self.graph.icu_to_er(i) * g * u.y;
                g * (state.agents[i].p_m + self.graph.er_to_icu(i) * delta)
            })
            .collect();

        // ICU: compensate the estimate by the exchange change the ER reports back.
        let agents: Vec<AgentState> = local
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let a_i0 = self.graph.er_to_icu(i);
                AgentState {
                    lambda: u.lambda,
                    power: u.power,
                    mismatch_est: u.y + a_i0 * (state.agents[i].p_m - p_m_next[i]),
                    y: u.y,
                    p_m: p_m_next[i],
                    bus_mismatch: u.bus_mismatch,
                    regime: u.regime,
                }
            })
            .collect();
        NetworkState {
            er: ErState {
                p_mg: p_m_next.iter().sum(),
                price: state.er.price,
                mode: state.er.mode,
            },
            agents,
        }
    }
}
