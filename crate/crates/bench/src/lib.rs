//! Shared fixtures for the benchmarks.

use safeloco_core::cbf::CbfConfig;
use safeloco_core::env::{Env, EnvConfig};
use safeloco_core::trainer::NetConfig;
use safeloco_core::world::Scenario;
use safeloco_core::RunConfig;

/// Network widths of the desk-scale runs in `configs/desk.json`.
pub fn desk_net() -> NetConfig {
    RunConfig::from_json(include_str!("../../../configs/desk.json"))
        .expect("desk config is valid")
        .train
        .net
}

/// An environment reset on `scenario` at the hardest curriculum level.
pub fn ready_env(scenario: &str, seed: u64) -> Env {
    let sc = Scenario::builtin(scenario).expect("built-in scenario");
    let mut env = Env::new(EnvConfig::default(), CbfConfig::default()).expect("default config is valid");
    env.reset(&sc, seed, 2).expect("reset");
    env
}
