//! BP-RRT: trees of barrier pairs whose edges are mutually safe transitions.
//!
//! A tree is rooted at the goal pair and grown towards the start. Each new
//! equilibrium lies on the `ε₁` level set (zero-velocity lift) of its nearest
//! vertex and gets a fresh pair without region containment. The tree closes
//! when the start equilibrium is within `ε₁` of the newest vertex and the
//! closing edge is admissible too.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::{debug, info};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmError, ElbowBranch, RobotModel, SINGULARITY_THRESHOLD};
use crate::certify::{certify, CertContext, CERTIFY_DEFAULT_SEED};
use crate::exec::Execution;
use crate::ldi::{fit_norm_bound, sample_domain, LdiError, LdiModel, StateBox};
use crate::regions::{ConstraintSet, Limits, Region, RegionError, RegionKind};
use crate::sdp::SdpBackend;
use crate::synth::{synthesize, AlphaPolicy, BarrierPair, SynthError, SynthOptions};

/// Relative slack demanded of the generalized-eigenvalue conditions.
const ADMISSIBLE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RrtError {
    #[error("graph has no vertices")]
    EmptyGraph,
    #[error("random configuration coincides with the vertex equilibrium")]
    DegenerateDirection,
    #[error("no connection from {from} to {to} within {attempts} synthesis attempts")]
    MaxIterations {
        from: String,
        to: String,
        attempts: usize,
    },
    #[error("anchor {0} could not be synthesized: {1}")]
    Infeasible(String, String),
    #[error("no path from {0} to {1}")]
    Disconnected(String, String),
    #[error("unknown anchor or region {0}")]
    Unknown(String),
    #[error("invalid planner setting: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// `‖[q_to − q_from; 0]‖` in the metric of `from`.
    pub eps1: f64,
    /// `‖[q_from − q_to; 0]‖` in the metric of `to`.
    pub eps2: f64,
    pub admissible: bool,
}

/// Planner-side information about a vertex.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VertexMeta {
    /// Region whose containment LMIs were imposed.
    pub contain: Option<String>,
    /// Regions the pair was certified to avoid.
    pub obstacles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BpGraph {
    pub vertices: Vec<BarrierPair>,
    pub meta: Vec<VertexMeta>,
    pub edges: Vec<Edge>,
    pub anchors: BTreeMap<String, usize>,
    pub rng_seed: u64,
}

impl BpGraph {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Default::default()
        }
    }

    pub fn add_vertex(&mut self, mut bp: BarrierPair, meta: VertexMeta) -> usize {
        let id = self.vertices.len();
        bp.id = id;
        self.vertices.push(bp);
        self.meta.push(meta);
        id
    }

    pub fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.from == v {
                    Some(e.to)
                } else if e.to == v {
                    Some(e.from)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges
            .iter()
            .any(|e| (e.from == a && e.to == b) || (e.from == b && e.to == a))
    }

    pub fn anchor(&self, label: &str) -> Result<usize, RrtError> {
        self.anchors
            .get(label)
            .copied()
            .ok_or_else(|| RrtError::Unknown(label.to_string()))
    }

    /// Label of a vertex, if it is an anchor.
    pub fn anchor_label(&self, v: usize) -> Option<&str> {
        self.anchors
            .iter()
            .find(|(_, id)| **id == v)
            .map(|(l, _)| l.as_str())
    }

    /// Breadth-first path by edge count. Paths are computed from the endpoint
    /// with the smaller vertex id, so reversing the arguments reverses the
    /// result.
    pub fn path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if from >= self.vertices.len() || to >= self.vertices.len() {
            return None;
        }
        if from > to {
            return self.path(to, from).map(|mut p| {
                p.reverse();
                p
            });
        }
        let mut prev = vec![usize::MAX; self.vertices.len()];
        let mut seen = vec![false; self.vertices.len()];
        let adjacency: Vec<BTreeSet<usize>> = (0..self.vertices.len())
            .map(|v| self.neighbors(v))
            .collect();
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(v) = queue.pop_front() {
            if v == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for &n in &adjacency[v] {
                if !seen[n] {
                    seen[n] = true;
                    prev[n] = v;
                    queue.push_back(n);
                }
            }
        }
        None
    }
}

/// Shortest vertex sequence between two anchors.
pub fn extract_sequence(
    g: &BpGraph,
    from_anchor: &str,
    to_anchor: &str,
) -> Result<Vec<usize>, RrtError> {
    let a = g.anchor(from_anchor)?;
    let b = g.anchor(to_anchor)?;
    g.path(a, b)
        .ok_or_else(|| RrtError::Disconnected(from_anchor.to_string(), to_anchor.to_string()))
}

fn lift(q: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    DVector::from_fn(2 * n, |i, _| if i < n { q[i] } else { 0.0 })
}

/// Vertex minimizing the zero-velocity barrier norm to `q_rand`; ties go to
/// the lowest id.
pub fn nearest_bp(q_rand: &DVector<f64>, g: &BpGraph) -> Result<(usize, f64), RrtError> {
    nearest_among(q_rand, g, 0..g.vertices.len())
}

fn nearest_among(
    q_rand: &DVector<f64>,
    g: &BpGraph,
    ids: impl IntoIterator<Item = usize>,
) -> Result<(usize, f64), RrtError> {
    let mut best: Option<(usize, f64)> = None;
    for id in ids {
        let nu = g.vertices[id].config_norm(q_rand);
        if best.is_none_or(|(_, b)| nu < b) {
            best = Some((id, nu));
        }
    }
    best.ok_or(RrtError::EmptyGraph)
}

/// Moves `q_rand` along the ray from `v`'s equilibrium onto the `ε₁` level set.
pub fn project_to_surface(
    q_rand: &DVector<f64>,
    v: &BarrierPair,
    eps1: f64,
) -> Result<DVector<f64>, RrtError> {
    let nu = v.config_norm(q_rand);
    if nu <= 1e-9 {
        return Err(RrtError::DegenerateDirection);
    }
    Ok(&v.q_e + (q_rand - &v.q_e) * (eps1 / nu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    pub eps1: f64,
    pub eps2: f64,
    /// `λ_max(Q₁⁻¹Q₂)` and its allowed bound.
    pub forward: (f64, f64),
    /// `λ_max(Q₂⁻¹Q₁)` and its allowed bound.
    pub backward: (f64, f64),
}

/// Largest generalized eigenvalue of `b` relative to `a`.
pub fn max_generalized_eigenvalue(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let l = a
        .clone()
        .cholesky()
        .expect("reference matrix is positive definite")
        .l();
    let li = l.try_inverse().expect("cholesky factor is invertible");
    let m = &li * b * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    m.symmetric_eigenvalues().max()
}

/// Mutual containment of residue sets in zero sub-level sets, checked as
/// `Q₂ ⪯ ((1−ε₁)²/ε₀²) Q₁` and `Q₁ ⪯ ((1−ε₂)²/ε₀²) Q₂`.
pub fn edge_admissible(v1: &BarrierPair, v2: &BarrierPair, eps0: f64) -> Admissibility {
    let eps1 = v1.norm(&lift(&(&v2.q_e - &v1.q_e)));
    let eps2 = v2.norm(&lift(&(&v1.q_e - &v2.q_e)));
    let k1 = (1.0 - eps1).powi(2) / (eps0 * eps0);
    let k2 = (1.0 - eps2).powi(2) / (eps0 * eps0);
    let f = max_generalized_eigenvalue(&v1.q, &v2.q);
    let b = max_generalized_eigenvalue(&v2.q, &v1.q);
    let tol = 1.0 - ADMISSIBLE_SLACK;
    let admissible = eps1 < 1.0 && eps2 < 1.0 && f <= k1 * tol && b <= k2 * tol;
    Admissibility {
        admissible,
        eps1,
        eps2,
        forward: (f, k1),
        backward: (b, k2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub eps0: f64,
    pub eps1: f64,
    pub alpha: AlphaPolicy,
    /// Synthesis attempts per anchor pair.
    pub max_iters: usize,
    /// Probability of sampling the start equilibrium instead of a random one.
    pub goal_bias: f64,
    pub ldi_samples: usize,
    pub ldi_margin: f64,
    pub ldi_seed: u64,
    pub contain_per_edge: usize,
    /// Samples used to certify each new pair during planning.
    pub cert_samples: usize,
    pub branch: ElbowBranch,
    /// Treat task regions other than the two endpoints as obstacles.
    pub avoid_other_tasks: bool,
    /// Impose the convex half of the transition condition inside synthesis.
    pub transition_lmi: bool,
    pub sample_attempts: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            eps0: 0.15,
            eps1: 0.80,
            alpha: AlphaPolicy::default(),
            max_iters: 500,
            goal_bias: 0.2,
            ldi_samples: 2000,
            ldi_margin: 0.1,
            ldi_seed: 17,
            contain_per_edge: 5,
            cert_samples: 2000,
            branch: ElbowBranch::Down,
            avoid_other_tasks: false,
            transition_lmi: false,
            sample_attempts: 10_000,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), RrtError> {
        if !(self.eps0 > 0.0 && self.eps1 > 0.0 && self.eps0 < 1.0 - self.eps1) {
            return Err(RrtError::InvalidConfig(format!(
                "need 0 < eps0 < 1 - eps1, got eps0 = {}, eps1 = {}",
                self.eps0, self.eps1
            )));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(RrtError::InvalidConfig(
                "goal_bias must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to synthesize and certify pairs for one scenario.
pub struct Planner<'a> {
    pub model: &'a RobotModel,
    pub regions: &'a [Region],
    pub limits: &'a Limits,
    pub cfg: &'a PlannerConfig,
    pub backend: &'a dyn SdpBackend,
    pub exec: Execution,
}

/// One end of a tree: a region (its anchor pair is created on demand) or an
/// existing vertex.
#[derive(Debug, Clone)]
pub enum Endpoint {
    Region(String),
    Vertex(usize),
}

impl Planner<'_> {
    pub fn region(&self, id: &str) -> Result<&Region, RrtError> {
        self.regions
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| RrtError::Unknown(id.to_string()))
    }

    pub fn state_box(&self, q_e: &DVector<f64>) -> Result<StateBox, LdiError> {
        StateBox::new(
            q_e.clone(),
            self.limits.dq_bounds.clone(),
            self.limits.qd_bounds.clone(),
        )
    }

    /// Deterministic LDI at `q_e`; the same unit samples are used at every
    /// equilibrium.
    pub fn fit_ldi(&self, q_e: &DVector<f64>) -> Result<LdiModel, LdiError> {
        let b = self.state_box(q_e)?;
        let samples = sample_domain(&b, self.cfg.ldi_samples, self.cfg.ldi_seed);
        fit_norm_bound(self.model, &b, &samples, self.cfg.ldi_margin, self.exec)
    }

    /// Obstacles for a tree between the given endpoint regions.
    pub fn obstacles_for(&self, endpoints: &[&str]) -> Vec<&Region> {
        self.regions
            .iter()
            .filter(|r| match r.kind {
                RegionKind::Obstacle | RegionKind::Base => true,
                RegionKind::Task => {
                    self.cfg.avoid_other_tasks && !endpoints.contains(&r.id.as_str())
                }
            })
            .collect()
    }

    /// Equilibria must keep the whole LDI box away from singularities and
    /// put the end effector outside every obstacle.
    pub fn equilibrium_ok(&self, q: &DVector<f64>, obstacles: &[&Region]) -> bool {
        if self.model.n() != 2 {
            return false;
        }
        let l = &self.model.link_lengths;
        let dq = self.limits.dq_bounds[1];
        let margin = SINGULARITY_THRESHOLD / (l[0] * l[1]);
        let lo = q[1] - dq;
        let hi = q[1] + dq;
        let sin_ok = |a: f64| {
            a.sin()
                * if self.cfg.branch == ElbowBranch::Down {
                    1.0
                } else {
                    -1.0
                }
                > margin
        };
        if !(sin_ok(lo) && sin_ok(hi) && sin_ok(q[1])) || (hi - lo) >= std::f64::consts::PI {
            return false;
        }
        let x = self.model.forward_kinematics(q);
        obstacles.iter().all(|r| !r.contains(&x))
    }

    /// Synthesizes and certifies a pair at `q_e`.
    pub fn pair_at(
        &self,
        q_e: &DVector<f64>,
        contain: Option<&Region>,
        obstacles: &[&Region],
        shape_bound: Option<nalgebra::DMatrix<f64>>,
    ) -> Result<(BarrierPair, VertexMeta), String> {
        let plant = self
            .model
            .linearize(q_e)
            .map_err(|e: ArmError| e.to_string())?;
        let ldi = self.fit_ldi(q_e).map_err(|e| e.to_string())?;
        let x_e = self.model.forward_kinematics(q_e);
        let cs = ConstraintSet::build(&x_e, obstacles, self.limits)
            .map_err(|e: RegionError| e.to_string())?;
        let mut per_edge = self.cfg.contain_per_edge;
        loop {
            let opts = SynthOptions {
                eps0: self.cfg.eps0,
                alpha: self.cfg.alpha,
                contain_per_edge: per_edge,
                branch: self.cfg.branch,
                shape_bound: shape_bound.clone(),
            };
            let mut bp = synthesize(self.model, &plant, &ldi, contain, &cs, &opts, self.backend)
                .map_err(|e: SynthError| e.to_string())?;
            let ctx = CertContext {
                model: self.model,
                state_box: &ldi.state_box,
                contain,
                obstacles,
                limits: self.limits,
                branch: self.cfg.branch,
            };
            let report = certify(
                &bp,
                &ctx,
                self.cfg.cert_samples,
                CERTIFY_DEFAULT_SEED,
                self.exec,
            )
            .map_err(|e| e.to_string())?;
            if report.passed() {
                bp.cert = Some(report);
                let meta = VertexMeta {
                    contain: contain.map(|r| r.id.clone()),
                    obstacles: obstacles.iter().map(|r| r.id.clone()).collect(),
                };
                return Ok((bp, meta));
            }
            // containment is imposed on sampled edge points only; densify once
            let only_containment = report.torque_ok
                && report.exclusion_ok
                && report.velocity_ok
                && report.workspace_ok
                && report.decrease_ok;
            if only_containment && per_edge < crate::certify::CONTAIN_CHECK_PER_EDGE {
                per_edge = crate::certify::CONTAIN_CHECK_PER_EDGE;
                continue;
            }
            return Err(format!(
                "certification failed with {} violations",
                report.violation_count
            ));
        }
    }

    /// Anchor pair for a task region, centered at the IK of its centroid.
    pub fn anchor_pair(
        &self,
        region: &Region,
        obstacles: &[&Region],
    ) -> Result<(BarrierPair, VertexMeta), RrtError> {
        let q = self
            .model
            .inverse_kinematics(&region.center(), self.cfg.branch)
            .map_err(|e| RrtError::Infeasible(region.id.clone(), e.to_string()))?;
        self.pair_at(&q, Some(region), obstacles, None)
            .map_err(|e| RrtError::Infeasible(region.id.clone(), e))
    }

    fn random_configuration(
        &self,
        rng: &mut ChaCha8Rng,
        obstacles: &[&Region],
    ) -> Option<DVector<f64>> {
        let pi = std::f64::consts::PI;
        for _ in 0..self.cfg.sample_attempts {
            let q1 = rng.random_range(-pi..pi);
            let q2 = rng.random_range(0.0..pi);
            let q2 = if self.cfg.branch == ElbowBranch::Down {
                q2
            } else {
                -q2
            };
            let q = DVector::from_vec(vec![q1, q2]);
            if self.equilibrium_ok(&q, obstacles) {
                return Some(q);
            }
        }
        None
    }

    /// Grows a tree from `goal` until it reaches `start`. Returns the vertex
    /// ids of the connecting sequence, start first.
    pub fn connect(
        &self,
        g: &mut BpGraph,
        start: usize,
        goal: usize,
        obstacles: &[&Region],
        seed: u64,
    ) -> Result<Vec<usize>, RrtError> {
        let name = |v: usize| {
            g.anchor_label(v)
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{v}"))
        };
        let (start_name, goal_name) = (name(start), name(goal));
        let q_start = g.vertices[start].q_e.clone();
        let mut tree = vec![goal];
        let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let close =
            |g: &mut BpGraph, v: usize, parent: &BTreeMap<usize, usize>| -> Option<Vec<usize>> {
                if g.vertices[v].config_norm(&q_start) > self.cfg.eps1 {
                    return None;
                }
                let adm = edge_admissible(&g.vertices[v], &g.vertices[start], self.cfg.eps0);
                if !adm.admissible {
                    return None;
                }
                if !g.has_edge(v, start) {
                    g.edges.push(Edge {
                        from: v,
                        to: start,
                        eps1: adm.eps1,
                        eps2: adm.eps2,
                        admissible: true,
                    });
                }
                let mut seq = vec![start, v];
                let mut cur = v;
                while let Some(p) = parent.get(&cur) {
                    seq.push(*p);
                    cur = *p;
                }
                Some(seq)
            };

        if let Some(seq) = close(g, goal, &parent) {
            return Ok(seq);
        }
        let mut attempts = 0;
        let mut iterations = 0;
        while attempts < self.cfg.max_iters && iterations < 50 * self.cfg.max_iters {
            iterations += 1;
            let q_rand = if rng.random::<f64>() < self.cfg.goal_bias {
                q_start.clone()
            } else {
                match self.random_configuration(&mut rng, obstacles) {
                    Some(q) => q,
                    None => continue,
                }
            };
            let (near, _) = nearest_among(&q_rand, g, tree.iter().copied())?;
            let q_new = match project_to_surface(&q_rand, &g.vertices[near], self.cfg.eps1) {
                Ok(q) => q,
                Err(_) => continue,
            };
            if !self.equilibrium_ok(&q_new, obstacles) {
                continue;
            }
            attempts += 1;
            let bound = self.cfg.transition_lmi.then(|| {
                let k = (1.0 - self.cfg.eps1).powi(2) / (self.cfg.eps0 * self.cfg.eps0);
                &g.vertices[near].q * (k * (1.0 - 10.0 * ADMISSIBLE_SLACK))
            });
            let (bp, meta) = match self.pair_at(&q_new, None, obstacles, bound) {
                Ok(v) => v,
                Err(e) => {
                    debug!("pair at {:?} rejected: {e}", q_new.as_slice());
                    continue;
                }
            };
            let adm = edge_admissible(&g.vertices[near], &bp, self.cfg.eps0);
            if !adm.admissible {
                debug!("edge from {near} rejected: {:?}", adm);
                continue;
            }
            let id = g.add_vertex(bp, meta);
            g.edges.push(Edge {
                from: near,
                to: id,
                eps1: adm.eps1,
                eps2: adm.eps2,
                admissible: true,
            });
            parent.insert(id, near);
            tree.push(id);
            if let Some(seq) = close(g, id, &parent) {
                info!(
                    "connected {start_name} -> {goal_name}: {} pairs after {attempts} syntheses",
                    seq.len()
                );
                return Ok(seq);
            }
        }
        Err(RrtError::MaxIterations {
            from: start_name,
            to: goal_name,
            attempts,
        })
    }

    /// Anchor vertex for a task region, created on first use.
    pub fn ensure_anchor(&self, g: &mut BpGraph, region_id: &str) -> Result<usize, RrtError> {
        if let Some(v) = g.anchors.get(region_id) {
            return Ok(*v);
        }
        let region = self.region(region_id)?;
        let obstacles = self.obstacles_for(&[region_id]);
        let (bp, meta) = self.anchor_pair(region, &obstacles)?;
        let id = g.add_vertex(bp, meta);
        g.anchors.insert(region_id.to_string(), id);
        Ok(id)
    }

    /// Tree between two task regions, as a fresh graph.
    pub fn build_graph(&self, a0: &str, af: &str, seed: u64) -> Result<BpGraph, RrtError> {
        self.cfg.validate()?;
        let mut g = BpGraph::new(seed);
        let goal = self.ensure_anchor(&mut g, af)?;
        let start = self.ensure_anchor(&mut g, a0)?;
        let obstacles = self.obstacles_for(&[a0, af]);
        self.connect(&mut g, start, goal, &obstacles, seed)?;
        Ok(g)
    }

    /// Full anchor layout for three task regions: sequences
    /// `a₂–a₃`, `a₃–a₁`, `a₁–a₂` first, whose middle vertices become
    /// `c₁`, `c₂`, `c₃`, then `c₁–c₂`, `c₂–c₃`, `c₃–c₁`.
    pub fn build_scenario(&self, tasks: [&str; 3], seed: u64) -> Result<ScenarioGraph, RrtError> {
        self.cfg.validate()?;
        let mut g = BpGraph::new(seed);
        for t in tasks {
            self.ensure_anchor(&mut g, t)?;
        }
        let [a1, a2, a3] = tasks;
        let firsts = [(a2, a3, "c1"), (a3, a1, "c2"), (a1, a2, "c3")];
        let mut sequences = BTreeMap::new();
        for (k, (from, to, c)) in firsts.iter().enumerate() {
            let obstacles = self.obstacles_for(&[from, to]);
            let (s, f) = (g.anchor(from)?, g.anchor(to)?);
            let seq = self.connect(&mut g, s, f, &obstacles, seed.wrapping_add(k as u64 + 1))?;
            let mid = seq[seq.len() / 2];
            g.anchors.insert(c.to_string(), mid);
            sequences.insert((from.to_string(), to.to_string()), seq);
        }
        let seconds = [("c1", "c2"), ("c2", "c3"), ("c3", "c1")];
        for (k, (from, to)) in seconds.iter().enumerate() {
            // no endpoint is a task here, so with `avoid_other_tasks` set the
            // midway trees keep clear of every task region
            let obstacles = self.obstacles_for(&[]);
            let (s, f) = (g.anchor(from)?, g.anchor(to)?);
            let seq = self.connect(&mut g, s, f, &obstacles, seed.wrapping_add(k as u64 + 11))?;
            sequences.insert((from.to_string(), to.to_string()), seq);
        }
        Ok(ScenarioGraph {
            graph: g,
            sequences,
        })
    }
}

/// A scenario graph with the sequences produced while building it.
#[derive(Debug, Clone)]
pub struct ScenarioGraph {
    pub graph: BpGraph,
    pub sequences: BTreeMap<(String, String), Vec<usize>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, Vector2};

    fn pair(q: [f64; 2], diag: [f64; 4]) -> BarrierPair {
        BarrierPair::new(
            0,
            DVector::from_vec(q.to_vec()),
            Vector2::zeros(),
            DMatrix::from_diagonal(&DVector::from_vec(diag.to_vec())),
            DMatrix::zeros(2, 4),
            0.15,
            1.0,
            1.0,
        )
    }

    fn graph_of(pairs: Vec<BarrierPair>) -> BpGraph {
        let mut g = BpGraph::new(0);
        for p in pairs {
            g.add_vertex(p, VertexMeta::default());
        }
        g
    }

    #[test]
    fn nearest_examples() {
        let g = graph_of(vec![pair([0.0, 1.0], [0.04, 0.04, 1.0, 1.0])]);
        assert_eq!(
            nearest_bp(&DVector::from_vec(vec![3.0, 3.0]), &g)
                .unwrap()
                .0,
            0
        );
        let g = graph_of(vec![
            pair([0.0, 1.0], [0.04, 0.04, 1.0, 1.0]),
            pair([0.5, 1.0], [0.01, 0.01, 1.0, 1.0]),
        ]);
        let (v, nu) = nearest_bp(&DVector::from_vec(vec![0.5, 1.0]), &g).unwrap();
        assert_eq!((v, nu), (1, 0.0));
        // brute force over vertices
        let q = DVector::from_vec(vec![0.3, 1.1]);
        let norms: Vec<f64> = g.vertices.iter().map(|p| p.config_norm(&q)).collect();
        let expect = if norms[0] <= norms[1] { 0 } else { 1 };
        assert_eq!(nearest_bp(&q, &g).unwrap().0, expect);
        assert_eq!(nearest_bp(&q, &BpGraph::new(0)), Err(RrtError::EmptyGraph));
    }

    #[test]
    fn projection_examples() {
        let v = pair([0.0, 1.0], [0.04, 0.09, 1.0, 1.0]);
        let q_rand = DVector::from_vec(vec![0.16, 1.0]);
        assert!((v.config_norm(&q_rand) - 0.8).abs() < 1e-12);
        let q = project_to_surface(&q_rand, &v, 0.8).unwrap();
        assert!((q - &q_rand).amax() < 1e-15);
        assert_eq!(
            project_to_surface(&v.q_e.clone(), &v, 0.8),
            Err(RrtError::DegenerateDirection)
        );
        let q = project_to_surface(&DVector::from_vec(vec![-1.3, 2.2]), &v, 0.8).unwrap();
        assert!((v.config_norm(&q) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn identical_shapes() {
        let d = [0.04, 0.04, 1.0, 1.0];
        let v1 = pair([0.0, 1.0], d);
        let v2 = pair([0.16, 1.0], d);
        let a = edge_admissible(&v1, &v2, 0.15);
        assert!((a.eps1 - 0.8).abs() < 1e-12 && (a.eps2 - 0.8).abs() < 1e-12);
        assert!(a.admissible);
        assert!((a.forward.1 - 0.04 / 0.0225).abs() < 1e-12);
        assert!(!edge_admissible(&v1, &v2, 0.25).admissible);
        // colocated equilibria
        let v3 = pair([0.0, 1.0], [0.08, 0.08, 2.0, 2.0]);
        let a = edge_admissible(&v1, &v3, 0.15);
        assert_eq!((a.eps1, a.eps2), (0.0, 0.0));
        assert!((a.forward.0 - 2.0).abs() < 1e-12 && (a.backward.0 - 0.5).abs() < 1e-12);
        assert!(a.admissible);
    }

    #[test]
    fn sequences_on_a_chain() {
        let mut g = graph_of(
            (0..3)
                .map(|k| pair([0.1 * k as f64, 1.0], [0.04, 0.04, 1.0, 1.0]))
                .collect(),
        );
        g.edges.push(Edge {
            from: 0,
            to: 1,
            eps1: 0.5,
            eps2: 0.5,
            admissible: true,
        });
        g.edges.push(Edge {
            from: 2,
            to: 1,
            eps1: 0.5,
            eps2: 0.5,
            admissible: true,
        });
        g.anchors.insert("a".into(), 0);
        g.anchors.insert("b".into(), 2);
        assert_eq!(extract_sequence(&g, "a", "b").unwrap(), vec![0, 1, 2]);
        assert_eq!(extract_sequence(&g, "b", "a").unwrap(), vec![2, 1, 0]);
        assert_eq!(extract_sequence(&g, "a", "a").unwrap(), vec![0]);
        g.edges.clear();
        assert!(matches!(
            extract_sequence(&g, "a", "b"),
            Err(RrtError::Disconnected(..))
        ));
        assert!(matches!(
            extract_sequence(&g, "a", "zz"),
            Err(RrtError::Unknown(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = PlannerConfig::default();
        assert!(c.validate().is_ok());
        c.eps0 = 0.25;
        assert!(c.validate().is_err());
    }
}
