mod common;

use common::{pinned_graph, random_connected_adjacency, random_generator, scenario, test_system};
use erdispatch_core::scenario::run_unchecked;
use erdispatch_core::{
    detect_convergence, run, solve_grid_connected, solve_isolated, validate, ConvergenceTolerances, Event,
    FeedbackGain, GeneratorParams, GridGraph, OperatingMode, Protocol, ProtocolConfig, ScenarioConfig,
    ScenarioError, ScheduledEvent, Severity, SystemParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pinned(protocol: Protocol, horizon: usize) -> ScenarioConfig {
    ScenarioConfig {
        system: test_system(),
        graph: pinned_graph(),
        protocol,
        protocol_cfg: ProtocolConfig::uniform(6, 0.1, 0.1),
        horizon,
        events: Vec::new(),
        initial_lambda: None,
        initial_mode: OperatingMode::GridConnected,
    }
}

fn random_events(rng: &mut ChaCha8Rng, n: usize, horizon: usize, protocol: Protocol) -> Vec<ScheduledEvent> {
    (0..6)
        .map(|_| {
            let round = rng.random_range(1..=horizon);
            let bus = rng.random_range(0..n);
            let event = match rng.random_range(0..5) {
                0 => Event::Outage { bus },
                1 => Event::Reconnect { bus },
                2 => Event::SetPrice {
                    price: rng.random_range(10.0..90.0),
                },
                3 => Event::SetDemand {
                    bus,
                    demand: rng.random_range(0.0..80.0),
                },
                _ if protocol == Protocol::Integrated => Event::SetMode(if rng.random_bool(0.5) {
                    OperatingMode::Isolated
                } else {
                    OperatingMode::GridConnected
                }),
                _ => Event::SetPrice {
                    price: rng.random_range(10.0..90.0),
                },
            };
            ScheduledEvent { round, event }
        })
        .collect()
}

fn random_scenario(rng: &mut ChaCha8Rng, protocol: Protocol) -> ScenarioConfig {
    let n = rng.random_range(1..10);
    let edges = random_connected_adjacency(rng, n, 0.3);
    let er_to: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
    let er_from: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
    let graph = GridGraph::from_undirected_edges(n, &edges, &er_to, &er_from).unwrap();
    let system = SystemParams::new((0..n).map(|_| random_generator(rng)).collect(), 50.0).unwrap();
    let bounds = graph.step_size_bounds();
    let horizon = 300;
    ScenarioConfig {
        protocol_cfg: ProtocolConfig {
            eps: bounds.eps_max.iter().map(|b| rng.random_range(0.05..0.95) * b.min(1.0)).collect(),
            mu: rng.random_range(0.05..0.95) * bounds.mu_max.min(1.0),
            sigma: FeedbackGain::PowerLaw {
                scale: rng.random_range(0.1..2.0),
                exponent: rng.random_range(0.3..1.0),
            },
        },
        events: random_events(rng, n, horizon, protocol),
        initial_lambda: Some((0..n).map(|_| rng.random_range(0.0..100.0)).collect()),
        initial_mode: if protocol == Protocol::Integrated && rng.random_bool(0.5) {
            OperatingMode::Isolated
        } else {
            OperatingMode::GridConnected
        },
        system,
        graph,
        protocol,
        horizon,
    }
}

/// Recomputes the conservation residual from per-agent fields only.
fn audit_residual(cfg: &ScenarioConfig, trace: &erdispatch_core::SimulationTrace) -> f64 {
    let mut worst = 0.0_f64;
    for rec in &trace.records {
        let bus_sum: f64 = rec.agents.iter().map(|a| a.bus_mismatch).sum();
        let est: f64 = rec.agents.iter().map(|a| a.mismatch_est).sum();
        let r = (est + rec.er.p_mg - bus_sum).abs() / (1.0 + bus_sum.abs());
        worst = worst.max(r);
        assert_eq!(rec.agents.len(), cfg.graph.n_icus());
    }
    worst
}

#[test]
fn gc_conservation_on_random_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..150 {
        let cfg = random_scenario(&mut rng, Protocol::GridConnected);
        let trace = run_unchecked(&cfg).unwrap();
        let audit = audit_residual(&cfg, &trace);
        assert!(audit <= 1e-9, "case {case}: audited residual {audit}");
        assert!(trace.max_conservation_residual() <= 1e-9, "case {case}");
    }
}

#[test]
fn int_conservation_across_mode_switches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let cfg = random_scenario(&mut rng, Protocol::Integrated);
        let trace = run_unchecked(&cfg).unwrap();
        assert!(audit_residual(&cfg, &trace) <= 1e-9, "case {case}");
        for rec in &trace.records {
            let sum_pm: f64 = rec.agents.iter().map(|a| a.p_m).sum();
            assert!((rec.er.p_mg - sum_pm).abs() <= 1e-12 * (1.0 + sum_pm.abs()));
            for (i, a) in rec.agents.iter().enumerate() {
                let pair = cfg.graph.er_to_icu(i) * cfg.graph.icu_to_er(i);
                if pair == 0.0 || rec.er.mode == OperatingMode::Isolated {
                    assert_eq!(a.p_m, 0.0, "case {case} round {} bus {i}", rec.round);
                }
            }
            if rec.er.mode == OperatingMode::Isolated {
                assert_eq!(rec.er.p_mg, 0.0);
            }
        }
    }
}

#[test]
fn gc_price_error_contracts_geometrically() {
    let trace = run(&pinned(Protocol::GridConnected, 400)).unwrap();
    let err = |k: usize| trace.records[k].max_price_error();
    for k in [50, 100, 200] {
        let ratio = err(k + 100) / err(k);
        assert!(ratio < 0.5, "ratio at {k}: {ratio}");
    }
}

#[test]
fn gc_reaches_grid_optimum() {
    let trace = run(&pinned(Protocol::GridConnected, 600)).unwrap();
    let sol = solve_grid_connected(&test_system());
    let last = trace.last();
    for (a, p) in last.agents.iter().zip(&sol.p_star) {
        assert!((a.power - p).abs() < 1e-3);
        assert!((a.lambda - 85.0).abs() < 1e-6);
    }
    assert!((last.er.p_mg - sol.p_mg_star).abs() < 1e-3);
}

#[test]
fn detect_convergence_on_reference_run() {
    let cfg = scenario("microgrid6_sweep.cfg");
    let mut short = cfg.clone();
    short.horizon = 600;
    let trace = run(&short).unwrap();
    let tol = ConvergenceTolerances::default();
    let status = detect_convergence(&trace.records, &tol);
    assert!(status.is_converged(), "{status:?}");
    let summary = trace.summary(&tol);
    let k = summary.convergence_round.unwrap();
    let rec = &trace.records[k];
    let sol = solve_grid_connected(&cfg.system);
    for (a, p) in rec.agents.iter().zip(&sol.p_star) {
        assert!((a.power - p).abs() < 1e-2, "round {k}");
    }
    assert!((rec.er.p_mg - sol.p_mg_star).abs() < 1e-2);
}

#[test]
fn int_grid_connected_reaches_grid_optimum() {
    let trace = run(&pinned(Protocol::Integrated, 3000)).unwrap();
    let sol = solve_grid_connected(&test_system());
    let last = trace.last();
    for (a, p) in last.agents.iter().zip(&sol.p_star) {
        assert!((a.lambda - 85.0).abs() < 1e-3, "lambda {}", a.lambda);
        assert!((a.power - p).abs() < 1e-2);
    }
    assert!((last.er.p_mg - sol.p_mg_star).abs() < 5e-2);
}

#[test]
fn int_isolated_prices_agree_and_match_oracle() {
    let mut cfg = pinned(Protocol::Integrated, 2000);
    cfg.initial_mode = OperatingMode::Isolated;
    cfg.initial_lambda = Some(vec![60.0, 70.0, 80.0, 90.0, 100.0, 110.0]);
    let trace = run(&cfg).unwrap();
    let spread0 = trace.records[0].lambda_spread();
    let spread = trace.records[2000].lambda_spread();
    assert!(spread < 1e-3 * spread0, "spread {spread} vs {spread0}");

    let sol = solve_isolated(&cfg.system).unwrap();
    let tol = ConvergenceTolerances {
        lambda_step: 1e-4,
        mismatch_est: 1e-2,
        p_mg_step: 1e-4,
        window: 50,
    };
    assert!(detect_convergence(&trace.records, &tol).is_converged());
    let last = trace.last();
    for (a, p) in last.agents.iter().zip(&sol.p_star) {
        assert!((a.lambda - sol.lambda_star).abs() < 1e-2, "lambda {}", a.lambda);
        assert!((a.power - p).abs() < 0.1, "power {} vs {p}", a.power);
    }
    assert_eq!(last.er.p_mg, 0.0);
}

#[test]
fn int_isolated_symmetric_pair_stays_symmetric() {
    let g = GeneratorParams {
        alpha: 0.0,
        beta: 1.0,
        gamma: 0.0,
        loss_factor: 0.0,
        p_min: 0.0,
        p_max: 100.0,
        demand: 20.0,
    };
    let cfg = ScenarioConfig {
        system: SystemParams::new(vec![g, g], 0.0).unwrap(),
        graph: GridGraph::from_undirected_edges(2, &[(0, 1, 1.0)], &[0, 1], &[0, 1]).unwrap(),
        protocol: Protocol::Integrated,
        protocol_cfg: ProtocolConfig::uniform(2, 0.3, 0.3),
        horizon: 3000,
        events: Vec::new(),
        initial_lambda: Some(vec![5.0, 5.0]),
        initial_mode: OperatingMode::Isolated,
    };
    let trace = run(&cfg).unwrap();
    for rec in &trace.records {
        assert_eq!(rec.agents[0].lambda, rec.agents[1].lambda);
    }
    let last = trace.last();
    assert!((last.agents[0].power - 20.0).abs() < 1e-2, "{}", last.agents[0].power);
    assert!(last.aggregates.real_total_mismatch.abs() < 1e-2);
}

#[test]
fn outage_regime_targets() {
    let cfg = scenario("microgrid6_gc.cfg");
    let trace = run(&cfg).unwrap();
    let mut tripped = cfg.system.clone();
    tripped.generators[3].p_min = 0.0;
    tripped.generators[3].p_max = 0.0;
    let during = solve_grid_connected(&tripped);
    let after = solve_grid_connected(&cfg.system);
    // the outage window is shorter than the settling time; require a shrinking, small gap
    let gap = |k: usize| (trace.records[k].er.p_mg - during.p_mg_star).abs();
    assert!(gap(349) < 0.1 && gap(349) < gap(300), "{} {}", gap(300), gap(349));
    assert_eq!(trace.records[349].agents[3].power, 0.0);
    assert!((trace.records[600].er.p_mg - after.p_mg_star).abs() < 1e-2);
    assert_eq!(trace.records[200].events, vec![Event::Outage { bus: 3 }]);
}

#[test]
fn runs_are_deterministic() {
    for name in ["microgrid6_gc.cfg", "microgrid6_int.cfg"] {
        let cfg = scenario(name);
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }
}

#[test]
fn zero_horizon_has_only_round_zero() {
    let trace = run(&pinned(Protocol::GridConnected, 0)).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.records[0].round, 0);
    let a = trace.records[0].agents[1];
    assert_eq!(a.mismatch_est, a.bus_mismatch);
    assert_eq!(trace.records[0].er.p_mg, 0.0);
}

#[test]
fn record_rounds_are_contiguous() {
    let trace = run(&scenario("microgrid6_int.cfg")).unwrap();
    assert_eq!(trace.records.len(), 1201);
    for (k, rec) in trace.records.iter().enumerate() {
        assert_eq!(rec.round, k);
    }
    assert_eq!(trace.records[250].events, vec![Event::SetMode(OperatingMode::Isolated)]);
    assert_eq!(trace.records[250].er.mode, OperatingMode::Isolated);
    assert_eq!(trace.records[249].er.mode, OperatingMode::GridConnected);
}

#[test]
fn validation_of_pinned_scenarios() {
    for name in ["microgrid6_gc.cfg", "microgrid6_int.cfg", "microgrid6_sweep.cfg"] {
        let report = validate(&scenario(name));
        assert!(report.passed(), "{name}: {report}");
        assert_eq!(report.warnings().count(), 0, "{name}: {report}");
        assert!(report.spectral_radius.unwrap() < 1.0);
    }
}

#[test]
fn validation_names_violated_assumptions() {
    let mut cfg = pinned(Protocol::GridConnected, 10);
    cfg.protocol_cfg.mu = 0.5;
    let report = validate(&cfg);
    assert_eq!(report.find("A4").unwrap().severity, Severity::Fail);
    assert!(matches!(run(&cfg), Err(ScenarioError::Invalid(_))));

    let mut cfg = pinned(Protocol::Integrated, 10);
    cfg.protocol_cfg.mu = 0.5;
    assert_eq!(validate(&cfg).find("A7").unwrap().severity, Severity::Fail);

    let mut cfg = pinned(Protocol::Integrated, 10);
    let edges: Vec<(usize, usize, f64)> = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]
        .iter()
        .map(|&(i, j)| (i, j, 1.0))
        .collect();
    cfg.graph = GridGraph::from_undirected_edges(6, &edges, &[0, 2], &[1]).unwrap();
    let report = validate(&cfg);
    assert_eq!(report.find("A5").unwrap().severity, Severity::Fail);

    let mut cfg = pinned(Protocol::GridConnected, 10);
    cfg.graph = GridGraph::from_undirected_edges(6, &edges, &[], &[0]).unwrap();
    assert_eq!(validate(&cfg).find("A1").unwrap().severity, Severity::Fail);

    let mut cfg = pinned(Protocol::GridConnected, 10);
    cfg.events.push(ScheduledEvent {
        round: 5,
        event: Event::SetMode(OperatingMode::Isolated),
    });
    assert_eq!(validate(&cfg).find("events").unwrap().severity, Severity::Fail);

    let mut cfg = pinned(Protocol::GridConnected, 10);
    cfg.events.push(ScheduledEvent {
        round: 11,
        event: Event::Outage { bus: 0 },
    });
    assert!(!validate(&cfg).passed());
}

#[test]
fn step_on_the_bound_is_a_warning() {
    let mut cfg = pinned(Protocol::GridConnected, 10);
    let bounds = cfg.graph.step_size_bounds();
    cfg.protocol_cfg.eps[0] = bounds.eps_max[0];
    let report = validate(&cfg);
    assert!(report.passed());
    assert!(report.warnings().any(|f| f.check == "A3"));
}

#[test]
fn islanding_infeasibility_is_a_warning() {
    let mut cfg = pinned(Protocol::Integrated, 10);
    cfg.system.generators[5].demand = 5000.0;
    cfg.events.push(ScheduledEvent {
        round: 3,
        event: Event::SetMode(OperatingMode::Isolated),
    });
    let report = validate(&cfg);
    assert!(report.passed());
    assert_eq!(report.find("islanding").unwrap().severity, Severity::Warn);
}

#[test]
fn divergent_run_names_the_round() {
    // steps far outside their bounds blow the price iteration up
    let mut cfg = pinned(Protocol::GridConnected, 5000);
    cfg.protocol_cfg = ProtocolConfig::uniform(6, 5.0, 0.1);
    match run_unchecked(&cfg) {
        Err(ScenarioError::NonFinite { round }) => {
            assert!(round > 1 && round <= 5000);
            assert!(ScenarioError::NonFinite { round }.to_string().contains(&round.to_string()));
        }
        other => panic!("expected divergence, got {:?}", other.map(|t| t.horizon())),
    }
}
