//! Planning and graph-wide certification driven by a scenario config.

use bpguard_core::certify::{certify, CertContext, CertError, CertReport};
use bpguard_core::exec::Execution;
use bpguard_core::executive::{AnchorFsm, ExecError, Executive};
use bpguard_core::ldi::LdiError;
use bpguard_core::regions::{ConstraintSet, Region};
use bpguard_core::rrt::{edge_admissible, BpGraph, Planner, RrtError, ScenarioGraph};
use bpguard_core::sdp::BarrierSolver;
use bpguard_core::synth::{lmi_residuals, SynthError};
use serde::Serialize;
use thiserror::Error;

use crate::config::ScenarioConfig;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Rrt(#[from] RrtError),
    #[error("the anchor layout needs exactly three tasks, got {0}")]
    TaskCount(usize),
    #[error("vertex {vertex}: {message}")]
    Vertex { vertex: usize, message: String },
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Builds the full anchor layout for the configured three tasks.
pub fn build(cfg: &ScenarioConfig, seed: u64, exec: Execution) -> Result<ScenarioGraph, PlanError> {
    let tasks: [&str; 3] = match cfg.tasks.as_slice() {
        [a, b, c] => [a.as_str(), b.as_str(), c.as_str()],
        other => return Err(PlanError::TaskCount(other.len())),
    };
    let limits = cfg.limits();
    let pcfg = cfg.planner();
    let solver = BarrierSolver::default();
    let planner = Planner {
        model: &cfg.robot,
        regions: &cfg.regions,
        limits: &limits,
        cfg: &pcfg,
        backend: &solver,
        exec,
    };
    Ok(planner.build_scenario(tasks, seed)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCertification {
    pub vertex: usize,
    pub report: CertReport,
    /// Smallest eigenvalue over the pair's assembled LMIs.
    pub min_lmi_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeCheck {
    pub from: usize,
    pub to: usize,
    pub admissible: bool,
    pub forward: (f64, f64),
    pub backward: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphCertification {
    pub samples: usize,
    pub seed: u64,
    pub pairs: Vec<PairCertification>,
    pub edges: Vec<EdgeCheck>,
}

impl GraphCertification {
    pub fn passed(&self) -> bool {
        self.pairs.iter().all(|p| p.report.passed()) && self.edges.iter().all(|e| e.admissible)
    }
}

fn vertex_err(vertex: usize) -> impl Fn(String) -> PlanError {
    move |message| PlanError::Vertex { vertex, message }
}

fn regions_by_id<'a>(
    cfg: &'a ScenarioConfig,
    ids: &[String],
    vertex: usize,
) -> Result<Vec<&'a Region>, PlanError> {
    ids.iter()
        .map(|id| {
            cfg.region(id)
                .ok_or_else(|| vertex_err(vertex)(format!("unknown region {id}")))
        })
        .collect()
}

/// Recertifies one pair against the regions recorded for it.
pub fn certify_vertex(
    cfg: &ScenarioConfig,
    g: &BpGraph,
    vertex: usize,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<PairCertification, PlanError> {
    let bp = &g.vertices[vertex];
    let meta = &g.meta[vertex];
    let limits = cfg.limits();
    let pcfg = cfg.planner();
    let solver = BarrierSolver::default();
    let planner = Planner {
        model: &cfg.robot,
        regions: &cfg.regions,
        limits: &limits,
        cfg: &pcfg,
        backend: &solver,
        exec,
    };
    let err = vertex_err(vertex);
    let ldi = planner
        .fit_ldi(&bp.q_e)
        .map_err(|e: LdiError| err(e.to_string()))?;
    let obstacles = regions_by_id(cfg, &meta.obstacles, vertex)?;
    let contain = match &meta.contain {
        Some(id) => Some(
            cfg.region(id)
                .ok_or_else(|| err(format!("unknown region {id}")))?,
        ),
        None => None,
    };
    let ctx = CertContext {
        model: &cfg.robot,
        state_box: &ldi.state_box,
        contain,
        obstacles: &obstacles,
        limits: &limits,
        branch: pcfg.branch,
    };
    let report = certify(bp, &ctx, samples, seed, exec)?;
    let plant = cfg
        .robot
        .linearize(&bp.q_e)
        .map_err(|e| err(e.to_string()))?;
    let cs = ConstraintSet::build(&bp.x_e, &obstacles, &limits).map_err(|e| err(e.to_string()))?;
    let residuals =
        lmi_residuals(bp, &plant, &ldi, &cs).map_err(|e: SynthError| err(e.to_string()))?;
    let min_lmi_eigenvalue = residuals
        .iter()
        .map(|r| r.min_eig)
        .fold(f64::INFINITY, f64::min);
    Ok(PairCertification {
        vertex,
        report,
        min_lmi_eigenvalue,
    })
}

/// Certifies every pair and rechecks every stored edge.
pub fn certify_graph(
    cfg: &ScenarioConfig,
    g: &BpGraph,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<GraphCertification, PlanError> {
    let pairs = (0..g.vertices.len())
        .map(|v| certify_vertex(cfg, g, v, samples, seed, exec))
        .collect::<Result<Vec<_>, _>>()?;
    let edges = g
        .edges
        .iter()
        .map(|e| {
            let a = edge_admissible(&g.vertices[e.from], &g.vertices[e.to], cfg.synthesis.eps0);
            EdgeCheck {
                from: e.from,
                to: e.to,
                admissible: a.admissible,
                forward: a.forward,
                backward: a.backward,
            }
        })
        .collect();
    Ok(GraphCertification {
        samples,
        seed,
        pairs,
        edges,
    })
}

/// Runtime executive over a built graph.
pub fn executive<'a>(cfg: &'a ScenarioConfig, g: &'a BpGraph) -> Result<Executive<'a>, PlanError> {
    let fsm = AnchorFsm::from_edges(&cfg.anchor_edges, &cfg.executive.start)?;
    for node in fsm.nodes() {
        g.anchor(node)?;
    }
    Ok(Executive {
        model: &cfg.robot,
        graph: g,
        fsm,
        candidates: cfg.candidates(),
        u_bounds: cfg.limits().u_bounds,
        cfg: cfg.exec_config(),
    })
}
