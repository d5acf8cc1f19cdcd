#![allow(dead_code)]

use std::path::PathBuf;

use bpguard_core::exec::Execution;
use bpguard_core::rrt::{BpGraph, Planner};
use bpguard_core::sdp::BarrierSolver;
use bpguard_gateway::config::{load_config, ScenarioConfig};

pub fn reference_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.json")
}

pub fn reference_config() -> ScenarioConfig {
    load_config(&reference_path()).expect("shipped scenario loads")
}

/// The reference scenario cut down to a single `a1`–`a2` tree.
pub fn two_task() -> (ScenarioConfig, BpGraph) {
    let mut cfg = reference_config();
    cfg.anchor_edges = vec![("a1".into(), "a2".into())];
    let limits = cfg.limits();
    let pcfg = cfg.planner();
    let solver = BarrierSolver::default();
    let planner = Planner {
        model: &cfg.robot,
        regions: &cfg.regions,
        limits: &limits,
        cfg: &pcfg,
        backend: &solver,
        exec: Execution::default(),
    };
    let g = planner
        .build_graph("a1", "a2", cfg.seeds.plan)
        .expect("a1-a2 tree");
    (cfg, g)
}
