//! Runtime layer: anchor state machine, controller switching along pair
//! sequences, and replanning when the inferred target changes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::warn;
use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmError, JointState, RobotModel};
use crate::intent::{
    estimate_target, update_belief_with_threshold, BeliefState, IntentError, ACTIVITY_THRESHOLD,
    DEFAULT_BETA1, DEFAULT_SWITCH_MARGIN,
};
use crate::rrt::{extract_sequence, BpGraph, RrtError};
use crate::synth::BarrierPair;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("barrier value {barrier:.4} of pair {pair} exceeds the breach level at t = {t:.3} s")]
    SafetyBreach { t: f64, pair: usize, barrier: f64 },
    #[error("no route from {0} to {1}")]
    Disconnected(String, String),
    #[error("unknown anchor {0}")]
    UnknownAnchor(String),
    #[error(transparent)]
    Graph(#[from] RrtError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Arm(#[from] ArmError),
}

/// Undirected anchor adjacency with a current node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorFsm {
    adjacency: BTreeMap<String, BTreeSet<String>>,
    pub current: String,
}

impl AnchorFsm {
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)], current: &str) -> Result<Self, ExecError> {
        let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (a, b) in edges {
            let (a, b) = (a.as_ref().to_string(), b.as_ref().to_string());
            adjacency.entry(a.clone()).or_default().insert(b.clone());
            adjacency.entry(b).or_default().insert(a);
        }
        if !adjacency.contains_key(current) {
            return Err(ExecError::UnknownAnchor(current.to_string()));
        }
        Ok(Self {
            adjacency,
            current: current.to_string(),
        })
    }

    /// Three task anchors joined through three midway anchors.
    pub fn reference(current: &str) -> Result<Self, ExecError> {
        Self::from_edges(&reference_edges(), current)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn neighbors(&self, node: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(node)
    }

    /// Breadth-first route; neighbors are visited in label order.
    pub fn route(&self, from: &str, to: &str) -> Result<Vec<String>, ExecError> {
        for n in [from, to] {
            if !self.adjacency.contains_key(n) {
                return Err(ExecError::UnknownAnchor(n.to_string()));
            }
        }
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                let mut path = vec![to.to_string()];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur.to_string());
                }
                path.reverse();
                return Ok(path);
            }
            for n in &self.adjacency[v] {
                if seen.insert(n.as_str()) {
                    prev.insert(n.as_str(), v);
                    queue.push_back(n.as_str());
                }
            }
        }
        Err(ExecError::Disconnected(from.to_string(), to.to_string()))
    }
}

pub fn reference_edges() -> Vec<(&'static str, &'static str)> {
    vec![
        ("a2", "c1"),
        ("c1", "a3"),
        ("a3", "c2"),
        ("c2", "a1"),
        ("a1", "c3"),
        ("c3", "a2"),
        ("c1", "c2"),
        ("c2", "c3"),
        ("c3", "c1"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Barrier margin the next pair must show before switching to it.
    pub delta_switch: f64,
    /// Barrier value of the active pair that aborts an episode.
    pub breach_level: f64,
    /// Seconds between belief updates.
    pub belief_period: f64,
    pub dt: f64,
    pub w_bar: f64,
    pub beta1: f64,
    pub switch_margin: f64,
    /// Forces below this magnitude (N) do not update the belief.
    pub activity_threshold: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            delta_switch: 0.02,
            breach_level: 0.01,
            belief_period: 0.1,
            dt: 1e-3,
            w_bar: 1.0,
            beta1: DEFAULT_BETA1,
            switch_margin: DEFAULT_SWITCH_MARGIN,
            activity_threshold: ACTIVITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecState {
    pub t: f64,
    pub joint: JointState,
    pub active_sequence: Vec<usize>,
    pub active_index: usize,
    /// Positions in `active_sequence` that are anchors, with their labels.
    pub anchor_marks: Vec<(usize, String)>,
    pub target: String,
    pub belief: BeliefState,
    pub last_anchor: String,
    pub ticks: u64,
    /// Ticks on which the torque clamp was active.
    pub clamp_events: u64,
    /// Torque applied on the last tick.
    pub u: DVector<f64>,
    /// Human force applied on the last tick.
    pub w: Vector2<f64>,
}

impl ExecState {
    pub fn active_pair(&self) -> usize {
        self.active_sequence[self.active_index]
    }

    /// Final anchor of the current route.
    pub fn destination(&self) -> &str {
        &self.anchor_marks.last().expect("routes end at an anchor").1
    }
}

/// Clamped full-state feedback; the flag reports whether the clamp bound.
pub fn control(bp: &BarrierPair, s: &JointState, u_bounds: &DVector<f64>) -> (DVector<f64>, bool) {
    let raw = bp.feedback(s);
    let mut clamped = false;
    let u = DVector::from_fn(raw.len(), |i, _| {
        let v = raw[i].clamp(-u_bounds[i], u_bounds[i]);
        clamped |= v != raw[i];
        v
    });
    (u, clamped)
}

/// Graph, anchor machine and region data needed to run episodes.
pub struct Executive<'a> {
    pub model: &'a RobotModel,
    pub graph: &'a BpGraph,
    pub fsm: AnchorFsm,
    /// Task-region centers, aligned with the belief candidates.
    pub candidates: Vec<(String, Vector2<f64>)>,
    pub u_bounds: DVector<f64>,
    pub cfg: ExecConfig,
}

impl Executive<'_> {
    fn candidate_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|(id, _)| id.clone()).collect()
    }

    fn centers(&self) -> Vec<Vector2<f64>> {
        self.candidates.iter().map(|(_, c)| *c).collect()
    }

    /// Pair sequence along an anchor route, consecutive segments joined at
    /// their shared anchor vertex.
    pub fn sequence_for(
        &self,
        route: &[String],
    ) -> Result<(Vec<usize>, Vec<(usize, String)>), ExecError> {
        let first = self.graph.anchor(&route[0])?;
        let mut seq = vec![first];
        let mut marks = vec![(0, route[0].clone())];
        for pair in route.windows(2) {
            let seg = extract_sequence(self.graph, &pair[0], &pair[1])?;
            seq.extend_from_slice(&seg[1..]);
            marks.push((seq.len() - 1, pair[1].clone()));
        }
        Ok((seq, marks))
    }

    /// Episode starting at rest on `start`'s equilibrium, heading for `target`.
    pub fn start(&self, start: &str, target: &str) -> Result<ExecState, ExecError> {
        let v = self.graph.anchor(start)?;
        let joint = JointState::at_rest(self.graph.vertices[v].q_e.clone());
        self.start_from(start, target, joint)
    }

    pub fn start_from(
        &self,
        start: &str,
        target: &str,
        joint: JointState,
    ) -> Result<ExecState, ExecError> {
        let route = self.fsm.route(start, target)?;
        let (active_sequence, anchor_marks) = self.sequence_for(&route)?;
        let belief = BeliefState::uniform(self.candidate_ids(), self.cfg.beta1)?;
        let n = joint.q.len();
        Ok(ExecState {
            t: 0.0,
            joint,
            active_sequence,
            active_index: 0,
            anchor_marks,
            target: target.to_string(),
            belief,
            last_anchor: start.to_string(),
            ticks: 0,
            clamp_events: 0,
            u: DVector::zeros(n),
            w: Vector2::zeros(),
        })
    }

    /// Switches to the next pair once the state is inside its set with margin.
    pub fn maybe_advance(&self, es: &ExecState) -> ExecState {
        let mut out = es.clone();
        let next = es.active_index + 1;
        if next >= es.active_sequence.len() {
            return out;
        }
        let bp = &self.graph.vertices[es.active_sequence[next]];
        if bp.barrier(&es.joint) <= -self.cfg.delta_switch {
            out.active_index = next;
            if let Some((_, label)) = es.anchor_marks.iter().find(|(p, _)| *p == next) {
                out.last_anchor = label.clone();
            }
        }
        out
    }

    /// Reroutes towards `new_target`, joining at the next anchor on the
    /// current sequence (the active pair counts if it is an anchor).
    pub fn replan(&self, es: &ExecState, new_target: &str) -> Result<ExecState, ExecError> {
        if es.destination() == new_target {
            return Ok(es.clone());
        }
        let (join_pos, join_label) = es
            .anchor_marks
            .iter()
            .find(|(p, _)| *p >= es.active_index)
            .cloned()
            .expect("the destination is always ahead");
        let route = self.fsm.route(&join_label, new_target)?;
        let (tail, tail_marks) = self.sequence_for(&route)?;
        let mut out = es.clone();
        out.active_sequence.truncate(join_pos + 1);
        out.anchor_marks.retain(|(p, _)| *p < join_pos);
        for (p, label) in tail_marks {
            out.anchor_marks.push((p + join_pos, label));
        }
        out.active_sequence.extend_from_slice(&tail[1..]);
        out.target = new_target.to_string();
        Ok(out)
    }

    /// One control cycle: belief update on its own cadence, target estimate
    /// and replan, controller switch, feedback and one integration step.
    pub fn tick(&self, es: &ExecState, w_t: &Vector2<f64>) -> Result<ExecState, ExecError> {
        let mut es = es.clone();
        let period_ticks = (self.cfg.belief_period / self.cfg.dt).round().max(1.0) as u64;
        if es.ticks.is_multiple_of(period_ticks) {
            let x_t = self.model.forward_kinematics(&es.joint.q);
            let b = update_belief_with_threshold(
                &es.belief,
                w_t,
                &x_t,
                &self.centers(),
                self.cfg.w_bar,
                self.cfg.activity_threshold,
            )?;
            if b.updates != es.belief.updates {
                es.belief = b;
                let current = es.belief.index_of(&es.target).unwrap_or(0);
                let best = estimate_target(&es.belief, current, self.cfg.switch_margin);
                let new_target = es.belief.candidates[best].clone();
                if new_target != es.target {
                    es = self.replan(&es, &new_target)?;
                }
            }
        }
        es = self.maybe_advance(&es);
        let bp = &self.graph.vertices[es.active_pair()];
        let (u, clamped) = control(bp, &es.joint, &self.u_bounds);
        if clamped {
            es.clamp_events += 1;
            warn!("torque clamp bound at t = {:.3} s on pair {}", es.t, bp.id);
        }
        es.joint = self.model.step(&es.joint, &u, w_t, self.cfg.dt)?;
        es.u = u;
        es.w = *w_t;
        es.ticks += 1;
        es.t = es.ticks as f64 * self.cfg.dt;
        let barrier = bp.barrier(&es.joint);
        if barrier > self.cfg.breach_level {
            return Err(ExecError::SafetyBreach {
                t: es.t,
                pair: bp.id,
                barrier,
            });
        }
        Ok(es)
    }

    /// Whether the state lies in the residue set of the destination anchor.
    pub fn arrived(&self, es: &ExecState) -> bool {
        let last = *es.active_sequence.last().expect("non-empty sequence");
        if es.active_pair() != last {
            return false;
        }
        let bp = &self.graph.vertices[last];
        bp.norm(&bp.offset(&es.joint)) <= bp.eps0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn reference_routes() {
        let fsm = AnchorFsm::reference("a1").unwrap();
        assert_eq!(fsm.route("a1", "a3").unwrap(), ["a1", "c2", "a3"]);
        assert_eq!(fsm.route("c3", "a3").unwrap(), ["c3", "c1", "a3"]);
        assert_eq!(fsm.route("a2", "a2").unwrap(), ["a2"]);
        assert!(matches!(
            fsm.route("a1", "a9"),
            Err(ExecError::UnknownAnchor(_))
        ));
        for n in fsm.nodes() {
            for m in fsm.neighbors(n).unwrap() {
                assert!(fsm.neighbors(m).unwrap().contains(n));
            }
        }
        let split = AnchorFsm::from_edges(&[("a1", "c1"), ("a2", "c2")], "a1").unwrap();
        assert!(matches!(
            split.route("a1", "a2"),
            Err(ExecError::Disconnected(..))
        ));
    }

    #[test]
    fn control_examples() {
        let bp = BarrierPair::new(
            0,
            DVector::from_vec(vec![0.2, 1.5]),
            Vector2::zeros(),
            DMatrix::identity(4, 4) * 0.04,
            DMatrix::from_row_slice(2, 4, &[-100.0, 0.0, -10.0, 0.0, 0.0, -100.0, 0.0, -10.0]),
            0.15,
            1.0,
            1.0,
        );
        let ub = DVector::from_vec(vec![25.0, 25.0]);
        let (u, c) = control(&bp, &JointState::at_rest(bp.q_e.clone()), &ub);
        assert_eq!((u, c), (DVector::zeros(2), false));
        let (u, c) = control(
            &bp,
            &JointState::at_rest(DVector::from_vec(vec![0.6, 1.5])),
            &ub,
        );
        assert!(c);
        assert_eq!(u[0], -25.0);
        let mut zero = bp.clone();
        zero.k = DMatrix::zeros(2, 4);
        let s = JointState::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, -1.0]),
        );
        assert_eq!(control(&zero, &s, &ub).0, DVector::zeros(2));
    }
}
