//! Fixtures and independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use erdispatch_core::config::load_scenario;
use erdispatch_core::{GeneratorParams, GridGraph, ScenarioConfig, SystemParams};
use rand::Rng;

pub const PRICE: f64 = 85.0;

/// Table rows `(alpha, beta, gamma, p_min, p_max, B)` of the five-generator test fleet.
pub const FLEET: [(f64, f64, f64, f64, f64, f64); 5] = [
    (-7830.11, 93.81, -326572.0, 50.0, 200.0, 0.00021),
    (-4658.77, 56.24, -192750.0, 20.0, 70.0, 0.00017),
    (-5337.61, 64.52, -220578.0, 0.0, 100.0, 0.00016),
    (-6047.20, 73.75, -247705.0, 0.0, 150.0, 0.00020),
    (-5468.96, 67.48, -221390.0, 45.0, 180.0, 0.00019),
];

/// Bus loads; bus 6 carries no generator.
pub const DEMAND: [f64; 6] = [50.0, 150.0, 0.0, 150.0, 0.0, 200.0];

pub fn test_system() -> SystemParams {
    let mut gens: Vec<GeneratorParams> = FLEET
        .iter()
        .zip(DEMAND)
        .map(|(&(alpha, beta, gamma, p_min, p_max, b), demand)| GeneratorParams {
            alpha,
            beta,
            gamma,
            loss_factor: b,
            p_min,
            p_max,
            demand,
        })
        .collect();
    gens.push(GeneratorParams::load_only(DEMAND[5]));
    SystemParams::new(gens, PRICE).unwrap()
}

/// Ring 1..6 with chords 3-6 and 1-5; ER sends to 1, 3, 5 and hears from 1 (zero-based here).
pub fn pinned_graph() -> GridGraph {
    let edges: Vec<(usize, usize, f64)> = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (2, 5), (0, 4)]
        .iter()
        .map(|&(i, j)| (i, j, 1.0))
        .collect();
    GridGraph::from_undirected_edges(6, &edges, &[0, 2, 4], &[0]).unwrap()
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn scenario(name: &str) -> ScenarioConfig {
    load_scenario(scenario_path(name)).unwrap()
}

/// Random connected undirected graph on `n` nodes: a random spanning tree plus extra edges.
pub fn random_connected_adjacency<R: Rng>(rng: &mut R, n: usize, extra: f64) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.push((i, j, rng.random_range(0.2..2.0)));
    }
    for i in 0..n {
        for j in 0..i {
            if !edges.iter().any(|&(a, b, _)| (a, b) == (i, j)) && rng.random_bool(extra) {
                edges.push((i, j, rng.random_range(0.2..2.0)));
            }
        }
    }
    edges
}

pub fn random_generator<R: Rng>(rng: &mut R) -> GeneratorParams {
    let p_min = rng.random_range(0.0..30.0);
    GeneratorParams {
        alpha: rng.random_range(-200.0..0.0),
        beta: rng.random_range(0.5..5.0),
        gamma: rng.random_range(-100.0..0.0),
        loss_factor: rng.random_range(0.0..5e-4),
        p_min,
        p_max: p_min + rng.random_range(0.0..80.0),
        demand: rng.random_range(0.0..60.0),
    }
}

/// Random instance whose total load lies strictly inside the isolated supply envelope.
pub fn random_isolated_system<R: Rng>(rng: &mut R, n: usize, max_width: f64) -> SystemParams {
    let mut gens: Vec<GeneratorParams> = (0..n)
        .map(|_| {
            let p_min = rng.random_range(0.0..20.0);
            GeneratorParams {
                alpha: rng.random_range(-30.0..0.0),
                beta: rng.random_range(1.0..2.0),
                gamma: 0.0,
                loss_factor: rng.random_range(0.0..1e-3),
                p_min,
                p_max: p_min + rng.random_range(0.5..max_width),
                demand: 0.0,
            }
        })
        .collect();
    let lo: f64 = gens.iter().map(|g| g.net_output(g.p_min)).sum();
    let hi: f64 = gens.iter().map(|g| g.net_output(g.p_max)).sum();
    let total = lo + rng.random_range(0.05..0.95) * (hi - lo);
    let split = rng.random_range(0.0..1.0);
    gens[0].demand = total * split;
    gens[n - 1].demand += total * (1.0 - split);
    SystemParams::new(gens, 0.0).unwrap()
}

/// Inverse of `p -> p - B p^2` on the branch `p < 1/(2B)`.
fn net_inverse(b: f64, r: f64) -> Option<f64> {
    if b == 0.0 {
        return Some(r);
    }
    let disc = 1.0 - 4.0 * b * r;
    (disc >= 0.0).then(|| (1.0 - disc.sqrt()) / (2.0 * b))
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|k| lo + k as f64 * step).collect();
    if hi - v[n] > 1e-12 {
        v.push(hi);
    }
    v
}

/// Exhaustive minimum-cost balanced dispatch. Each generator in turn closes the balance
/// exactly while the others walk a uniform grid; a single fixed closer cannot reach the
/// optimum when it sits on one of its own limits.
pub fn brute_force_isolated(sys: &SystemParams, step: f64) -> Option<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for closer in 0..sys.generators.len() {
        if let Some((cost, p)) = search_with_closer(sys, step, closer) {
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, p));
            }
        }
    }
    best.map(|(_, p)| p)
}

fn search_with_closer(sys: &SystemParams, step: f64, closer: usize) -> Option<(f64, Vec<f64>)> {
    let gens = &sys.generators;
    let n = gens.len();
    let last = &gens[closer];
    let demand = sys.total_demand();
    let others: Vec<usize> = (0..n).filter(|&i| i != closer).collect();
    let grids: Vec<Vec<f64>> = others.iter().map(|&i| grid(gens[i].p_min, gens[i].p_max, step)).collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; n - 1];
    loop {
        let mut p = vec![0.0; n];
        for ((&i, &k), g) in others.iter().zip(&idx).zip(&grids) {
            p[i] = g[k];
        }
        let net: f64 = others.iter().map(|&i| p[i] - gens[i].loss_factor * p[i] * p[i]).sum();
        if let Some(p_last) = net_inverse(last.loss_factor, demand - net) {
            if p_last >= last.p_min - 1e-12 && p_last <= last.p_max + 1e-12 {
                p[closer] = p_last.clamp(last.p_min, last.p_max);
                let cost: f64 = p.iter().zip(gens).map(|(&x, g)| g.cost(x)).sum();
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, p));
                }
            }
        }
        let mut d = 0;
        loop {
            if d == n - 1 {
                return best;
            }
            idx[d] += 1;
            if idx[d] < grids[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}
