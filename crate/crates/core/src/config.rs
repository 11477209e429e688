//! TOML scenario files.
//!
//! ```toml
//! horizon = 600
//!
//! [system]
//! price = 85.0
//! generators = [
//!     { alpha = -396.6, beta = 7.8, gamma = -1.0, p_min = 50, p_max = 150, loss_b = 0.0002, demand = 50 },
//!     { demand = 200 },   # load-only bus
//! ]
//!
//! [graph]
//! edges = ["1 -- 2 : 1", "2 -> 1 : 0.5"]
//! er_to = [1]
//! er_from = [1]
//!
//! [protocol]
//! kind = "gc"             # or "int"
//! eps = 0.1               # or one value per bus
//! mu = 0.1
//! sigma = { family = "reciprocal" }   # or { family = "power", scale = 1, exponent = 0.8 }
//!
//! [[events]]
//! round = 200
//! kind = "outage"
//! args = { bus = 2 }
//!
//! [init]
//! lambda = 0.0            # or one value per bus
//! g = 1
//! ```
//!
//! Buses are numbered from 1 in the file. `i -- j` sets both `a_ij` and `a_ji`;
//! `i -> j` means ICU `i` sends to ICU `j` and sets `a_ji`. The weight suffix is
//! optional and defaults to 1. Event kinds and their `args`:
//! `set_mode {g}`, `outage {bus}`, `reconnect {bus}`, `set_price {price}`,
//! `set_demand {bus, demand}`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;

use crate::dispatch::{GeneratorParams, ParamError, SystemParams};
use crate::engine::{FeedbackGain, OperatingMode, Protocol, ProtocolConfig};
use crate::scenario::{Event, ScenarioConfig, ScheduledEvent};
use crate::topology::{GridGraph, TopologyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("bad edge `{edge}`: {reason}")]
    Edge { edge: String, reason: String },
    #[error("bus index {index} in {field} outside 1..={n}")]
    BusIndex { field: String, index: usize, n: usize },
    #[error("{field} has {got} values, expected 1 or {n}")]
    VectorLength { field: &'static str, got: usize, n: usize },
    #[error("event #{index}: {reason}")]
    Event { index: usize, reason: String },
    #[error("invalid value: {0}")]
    Value(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    horizon: usize,
    system: RawSystem,
    graph: RawGraph,
    protocol: RawProtocol,
    #[serde(default)]
    events: Vec<RawEvent>,
    #[serde(default)]
    init: RawInit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    price: f64,
    generators: Vec<RawGenerator>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    #[serde(default)]
    alpha: f64,
    #[serde(default = "one")]
    beta: f64,
    #[serde(default)]
    gamma: f64,
    #[serde(default)]
    p_min: f64,
    #[serde(default)]
    p_max: f64,
    #[serde(default)]
    loss_b: f64,
    #[serde(default)]
    demand: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    #[serde(default)]
    edges: Vec<String>,
    #[serde(default)]
    er_to: Vec<usize>,
    #[serde(default)]
    er_from: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, field: &'static str, n: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            ScalarOrList::Scalar(x) => Ok(vec![*x; n]),
            ScalarOrList::List(v) if v.len() == n => Ok(v.clone()),
            ScalarOrList::List(v) if v.len() == 1 => Ok(vec![v[0]; n]),
            ScalarOrList::List(v) => Err(ConfigError::VectorLength { field, got: v.len(), n }),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawProtocolKind {
    Gc,
    Int,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    kind: RawProtocolKind,
    eps: ScalarOrList,
    mu: f64,
    #[serde(default)]
    sigma: Option<RawSigma>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
enum RawSigma {
    Reciprocal,
    Power {
        #[serde(default = "one")]
        scale: f64,
        exponent: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    round: usize,
    kind: String,
    #[serde(default)]
    args: RawEventArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEventArgs {
    g: Option<u8>,
    bus: Option<usize>,
    price: Option<f64>,
    demand: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    lambda: Option<ScalarOrList>,
    g: Option<u8>,
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::NotFound(path.display().to_string())
        } else {
            ConfigError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawScenario = toml::from_str(text)?;
    let n = raw.system.generators.len();

    let generators = raw
        .system
        .generators
        .iter()
        .map(|g| GeneratorParams {
            alpha: g.alpha,
            beta: g.beta,
            gamma: g.gamma,
            loss_factor: g.loss_b,
            p_min: g.p_min,
            p_max: g.p_max,
            demand: g.demand,
        })
        .collect();
    let system = SystemParams::new(generators, raw.system.price)?;

    let graph = build_graph(&raw.graph, n)?;

    let protocol = match raw.protocol.kind {
        RawProtocolKind::Gc => Protocol::GridConnected,
        RawProtocolKind::Int => Protocol::Integrated,
    };
    let sigma = match raw.protocol.sigma {
        None | Some(RawSigma::Reciprocal) => FeedbackGain::Reciprocal,
        Some(RawSigma::Power { scale, exponent }) => FeedbackGain::PowerLaw { scale, exponent },
    };
    let protocol_cfg = ProtocolConfig {
        eps: raw.protocol.eps.expand("protocol.eps", n)?,
        mu: raw.protocol.mu,
        sigma,
    };

    let events = raw
        .events
        .iter()
        .enumerate()
        .map(|(index, e)| {
            parse_event(e, n)
                .map(|event| ScheduledEvent { round: e.round, event })
                .map_err(|reason| ConfigError::Event { index, reason })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let initial_lambda = raw
        .init
        .lambda
        .as_ref()
        .map(|l| l.expand("init.lambda", n))
        .transpose()?;
    let initial_mode = match raw.init.g {
        None => OperatingMode::GridConnected,
        Some(g) => OperatingMode::from_flag(g)
            .ok_or_else(|| ConfigError::Value(format!("init.g = {g} must be 0 or 1")))?,
    };

    Ok(ScenarioConfig {
        system,
        graph,
        protocol,
        protocol_cfg,
        horizon: raw.horizon,
        events,
        initial_lambda,
        initial_mode,
    })
}

fn bus(field: &str, index: usize, n: usize) -> Result<usize, ConfigError> {
    if index == 0 || index > n {
        return Err(ConfigError::BusIndex {
            field: field.to_string(),
            index,
            n,
        });
    }
    Ok(index - 1)
}

fn build_graph(raw: &RawGraph, n: usize) -> Result<GridGraph, ConfigError> {
    let mut adj = DMatrix::zeros(n, n);
    for text in &raw.edges {
        let (from, to, w, undirected) = parse_edge(text, n)?;
        if undirected {
            adj[(from, to)] = w;
            adj[(to, from)] = w;
        } else {
            adj[(to, from)] = w;
        }
    }
    let mut er_to = vec![0.0; n];
    for &i in &raw.er_to {
        er_to[bus("graph.er_to", i, n)?] = 1.0;
    }
    let mut er_from = vec![0.0; n];
    for &i in &raw.er_from {
        er_from[bus("graph.er_from", i, n)?] = 1.0;
    }
    Ok(GridGraph::new(adj, er_to, er_from)?)
}

/// Parses `i -- j : w` or `i -> j : w` into zero-based `(i, j, w, undirected)`.
fn parse_edge(text: &str, n: usize) -> Result<(usize, usize, f64, bool), ConfigError> {
    let err = |reason: &str| ConfigError::Edge {
        edge: text.to_string(),
        reason: reason.to_string(),
    };
    let (pair, weight) = match text.split_once(':') {
        Some((p, w)) => (
            p,
            w.trim().parse::<f64>().map_err(|_| err("weight is not a number"))?,
        ),
        None => (text, 1.0),
    };
    let (lhs, rhs, undirected) = if let Some((a, b)) = pair.split_once("--") {
        (a, b, true)
    } else if let Some((a, b)) = pair.split_once("->") {
        (a, b, false)
    } else {
        return Err(err("expected `i -- j` or `i -> j`"));
    };
    let parse_idx = |s: &str| -> Result<usize, ConfigError> {
        let i = s.trim().parse::<usize>().map_err(|_| err("bus is not an integer"))?;
        bus("graph.edges", i, n)
    };
    let (i, j) = (parse_idx(lhs)?, parse_idx(rhs)?);
    if i == j {
        return Err(err("self-loop"));
    }
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(err("weight must be positive"));
    }
    Ok((i, j, weight, undirected))
}

fn parse_event(e: &RawEvent, n: usize) -> Result<Event, String> {
    let a = &e.args;
    let need_bus = || -> Result<usize, String> {
        let b = a.bus.ok_or("missing args.bus")?;
        if b == 0 || b > n {
            return Err(format!("bus {b} outside 1..={n}"));
        }
        Ok(b - 1)
    };
    match e.kind.as_str() {
        "set_mode" => {
            let g = a.g.ok_or("missing args.g")?;
            OperatingMode::from_flag(g)
                .map(Event::SetMode)
                .ok_or_else(|| format!("g = {g} must be 0 or 1"))
        }
        "outage" => Ok(Event::Outage { bus: need_bus()? }),
        "reconnect" => Ok(Event::Reconnect { bus: need_bus()? }),
        "set_price" => Ok(Event::SetPrice {
            price: a.price.ok_or("missing args.price")?,
        }),
        "set_demand" => Ok(Event::SetDemand {
            bus: need_bus()?,
            demand: a.demand.ok_or("missing args.demand")?,
        }),
        other => Err(format!("unknown event kind `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        horizon = 10
        [system]
        price = 5.0
        generators = [
            { alpha = 0, beta = 1, p_min = 0, p_max = 10, demand = 8 },
            { demand = 2 },
        ]
        [graph]
        edges = ["1 -- 2"]
        er_to = [1]
        er_from = [1, 2]
        [protocol]
        kind = "gc"
        eps = 0.3
        mu = 0.2
    "#;

    #[test]
    fn parses_minimal() {
        let cfg = parse_scenario(MINIMAL).unwrap();
        assert_eq!(cfg.horizon, 10);
        assert_eq!(cfg.system.len(), 2);
        assert_eq!(cfg.system.generators[1].p_max, 0.0);
        assert_eq!(cfg.system.generators[1].beta, 1.0);
        assert_eq!(cfg.graph.weight(0, 1), 1.0);
        assert_eq!(cfg.graph.weight(1, 0), 1.0);
        assert_eq!(cfg.graph.er_to_icu_links(), &[1.0, 0.0]);
        assert_eq!(cfg.graph.icu_to_er_links(), &[1.0, 1.0]);
        assert_eq!(cfg.protocol_cfg.eps, vec![0.3, 0.3]);
        assert_eq!(cfg.protocol, Protocol::GridConnected);
        assert_eq!(cfg.initial_mode, OperatingMode::GridConnected);
        assert!(cfg.initial_lambda.is_none());
    }

    #[test]
    fn directed_edge_sets_receiver_row() {
        let text = MINIMAL.replace("\"1 -- 2\"", "\"1 -> 2 : 0.5\"");
        let cfg = parse_scenario(&text).unwrap();
        assert_eq!(cfg.graph.weight(1, 0), 0.5);
        assert_eq!(cfg.graph.weight(0, 1), 0.0);
    }

    #[test]
    fn events_and_init() {
        let text = format!(
            "{MINIMAL}\n[[events]]\nround = 3\nkind = \"set_demand\"\nargs = {{ bus = 2, demand = 4.5 }}\n\
             [[events]]\nround = 4\nkind = \"set_price\"\nargs = {{ price = 7 }}\n\
             [init]\nlambda = [1.0, 2.0]\ng = 0\n"
        );
        let cfg = parse_scenario(&text).unwrap();
        assert_eq!(
            cfg.events,
            vec![
                ScheduledEvent {
                    round: 3,
                    event: Event::SetDemand { bus: 1, demand: 4.5 }
                },
                ScheduledEvent {
                    round: 4,
                    event: Event::SetPrice { price: 7.0 }
                },
            ]
        );
        assert_eq!(cfg.initial_lambda, Some(vec![1.0, 2.0]));
        assert_eq!(cfg.initial_mode, OperatingMode::Isolated);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_scenario(&MINIMAL.replace("1 -- 2", "1 -- 3")),
            Err(ConfigError::BusIndex { .. })
        ));
        assert!(matches!(
            parse_scenario(&MINIMAL.replace("1 -- 2", "1 == 2")),
            Err(ConfigError::Edge { .. })
        ));
        assert!(matches!(
            parse_scenario(&MINIMAL.replace("eps = 0.3", "eps = [0.1, 0.2, 0.3]")),
            Err(ConfigError::VectorLength { .. })
        ));
        assert!(matches!(
            parse_scenario(&MINIMAL.replace("beta = 1", "beta = -1")),
            Err(ConfigError::Params(_))
        ));
        let bad_event = format!("{MINIMAL}\n[[events]]\nround = 3\nkind = \"explode\"\n");
        assert!(matches!(parse_scenario(&bad_event), Err(ConfigError::Event { .. })));
        assert!(matches!(parse_scenario("horizon = "), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn missing_file() {
        let err = load_scenario("/nonexistent/scenario.toml").unwrap_err();
        assert!(err.to_string().starts_with("config not found"));
    }
}
