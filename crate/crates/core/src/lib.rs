//! Distributed economic dispatch for a microgrid connected to the distribution
//! system through an energy router (ER).
//!
//! Each bus of the microgrid hosts an intelligent control unit (ICU) that owns a
//! generator with quadratic cost and a local load. ICUs exchange state only with
//! their communication neighbours; the ER is node `0` of the communication graph
//! and the only party that talks to the distribution system.
//!
//! Two synchronous-round protocols are provided:
//!
//! * [`Protocol::GridConnected`]: leader-following consensus on the price plus an
//!   average-consensus estimate of the power mismatch that the ER absorbs into the
//!   exchanged power `P_MG`.
//! * [`Protocol::Integrated`]: the same structure with a vanishing mismatch
//!   feedback in the price update and per-bus ER power bookkeeping, which keeps the
//!   total mismatch estimate exact across isolated/grid-connected mode switches.
//!
//! The centralized [`oracle`] computes the optimum each protocol should reach, and
//! [`topology`] validates the structural assumptions both protocols rely on.
//!
//! Indices are zero-based throughout the API. Scenario files use the one-based
//! bus numbering of power-system tables; the conversion happens in [`config`].

pub mod config;
pub mod convergence;
pub mod dispatch;
pub mod engine;
pub mod oracle;
pub mod scenario;
pub mod topology;
pub mod trace;

pub use config::{load_scenario, parse_scenario, ConfigError};
pub use convergence::{detect_convergence, ConvergenceStatus, ConvergenceTolerances};
pub use dispatch::{GeneratorParams, ParamError, Projection, ProjectionRegime, SystemParams};
pub use engine::{
    AgentState, ConsensusEngine, EngineError, ErState, FeedbackGain, NetworkState, OperatingMode,
    Protocol, ProtocolConfig,
};
pub use oracle::{
    solve_grid_connected, solve_isolated, verify_kkt, DispatchSolution, KktReport, OracleError,
};
pub use scenario::{
    run, run_unchecked, validate, Event, Finding, ScenarioConfig, ScenarioError, ScheduledEvent, Severity,
    ValidationReport,
};
pub use topology::{Absorption, DerivedMatrices, GridGraph, SpectralReport, StepSizeBounds, TopologyError};
pub use trace::{Aggregates, RoundRecord, SimulationTrace, TraceSummary};
