//! Shared inputs for the benchmarks.

use std::path::PathBuf;

use erdispatch_core::{config::load_scenario, ScenarioConfig};

/// Path of a scenario shipped in the workspace `scenarios/` directory.
pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load(name: &str) -> ScenarioConfig {
    load_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}
