mod common;

use bpguard_core::arm::RobotModel;
use bpguard_core::executive::{control, AnchorFsm, ExecConfig, ExecState, Executive};
use bpguard_core::rrt::{BpGraph, Edge, VertexMeta};
use bpguard_core::synth::BarrierPair;
use common::Fixture;
use nalgebra::{DMatrix, DVector, Vector2};

fn pair(q: [f64; 2]) -> BarrierPair {
    BarrierPair::new(
        0,
        DVector::from_vec(q.to_vec()),
        Vector2::zeros(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01, 0.1, 0.1])),
        DMatrix::zeros(2, 4),
        0.15,
        1.0,
        1.0,
    )
}

/// One vertex per anchor and one midpoint per anchor edge, laid out so that
/// every vertex is far from the others in the barrier norm.
fn synthetic() -> BpGraph {
    let mut g = BpGraph::new(0);
    let labels = ["a1", "a2", "a3", "c1", "c2", "c3"];
    for (k, l) in labels.iter().enumerate() {
        let id = g.add_vertex(pair([k as f64, 1.0]), VertexMeta::default());
        g.anchors.insert(l.to_string(), id);
    }
    let fsm = AnchorFsm::reference("a1").unwrap();
    for (k, l) in labels.iter().enumerate() {
        for n in fsm.neighbors(l).unwrap() {
            let j = labels.iter().position(|x| x == n).unwrap();
            if j < k {
                continue;
            }
            let mid = g.add_vertex(
                pair([0.5 * (k + j) as f64, 2.0 + g.vertices.len() as f64]),
                VertexMeta::default(),
            );
            g.edges.push(Edge {
                from: k,
                to: mid,
                eps1: 0.5,
                eps2: 0.5,
                admissible: true,
            });
            g.edges.push(Edge {
                from: mid,
                to: j,
                eps1: 0.5,
                eps2: 0.5,
                admissible: true,
            });
        }
    }
    g
}

fn executive<'a>(model: &'a RobotModel, g: &'a BpGraph) -> Executive<'a> {
    let candidates = ["a1", "a2", "a3"]
        .iter()
        .zip([150.0, 90.0, 30.0])
        .map(|(id, deg)| {
            let p = common::polar(1.0, deg);
            (id.to_string(), Vector2::new(p[0], p[1]))
        })
        .collect();
    Executive {
        model,
        graph: g,
        fsm: AnchorFsm::reference("a1").unwrap(),
        candidates,
        u_bounds: DVector::from_vec(vec![25.0, 25.0]),
        cfg: ExecConfig::default(),
    }
}

fn labels(es: &ExecState) -> Vec<&str> {
    es.anchor_marks.iter().map(|(_, l)| l.as_str()).collect()
}

#[test]
fn fsm_adjacency_is_symmetric() {
    let fsm = AnchorFsm::reference("a1").unwrap();
    let nodes: Vec<&str> = fsm.nodes().collect();
    assert_eq!(nodes, ["a1", "a2", "a3", "c1", "c2", "c3"]);
    for a in &nodes {
        for b in fsm.neighbors(a).unwrap() {
            assert!(fsm.neighbors(b).unwrap().contains(*a));
        }
    }
    assert!(AnchorFsm::reference("zz").is_err());
}

#[test]
fn start_routes_through_midway_anchors() {
    let model = RobotModel::reference();
    let g = synthetic();
    let ex = executive(&model, &g);
    let es = ex.start("a1", "a3").unwrap();
    assert_eq!(labels(&es), ["a1", "c2", "a3"]);
    assert_eq!(es.active_sequence.len(), 5);
    for (pos, label) in &es.anchor_marks {
        assert_eq!(es.active_sequence[*pos], g.anchors[label]);
    }
    assert_eq!(es.destination(), "a3");
    assert!((es.belief.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn replan_joins_at_the_next_anchor() {
    let model = RobotModel::reference();
    let g = synthetic();
    let ex = executive(&model, &g);
    let mut es = ex.start("a1", "a2").unwrap();
    assert_eq!(labels(&es), ["a1", "c3", "a2"]);
    es.active_index = 1;
    let before = es.active_pair();
    let re = ex.replan(&es, "a3").unwrap();
    assert_eq!(labels(&re), ["a1", "c3", "c1", "a3"]);
    assert_eq!(re.active_pair(), before);
    assert_eq!(re.target, "a3");
    assert_eq!(&re.active_sequence[..3], &es.active_sequence[..3]);
    for w in re.active_sequence.windows(2) {
        assert!(g.has_edge(w[0], w[1]), "{w:?}");
    }

    let same = ex.replan(&re, "a3").unwrap();
    assert_eq!(same, re);
}

#[test]
fn replan_at_an_anchor_starts_from_it() {
    let model = RobotModel::reference();
    let g = synthetic();
    let ex = executive(&model, &g);
    let es = ex.start("a1", "a2").unwrap();
    let re = ex.replan(&es, "a3").unwrap();
    assert_eq!(labels(&re), ["a1", "c2", "a3"]);
    assert_eq!(re.active_pair(), g.anchors["a1"]);
}

#[test]
fn advance_rules() {
    let model = RobotModel::reference();
    let g = synthetic();
    let ex = executive(&model, &g);
    let es = ex.start("a1", "a3").unwrap();
    assert_eq!(ex.maybe_advance(&es), es);

    let mut inside = es.clone();
    inside.joint.q = g.vertices[es.active_sequence[1]].q_e.clone();
    let next = ex.maybe_advance(&inside);
    assert_eq!(next.active_index, 1);
    assert_eq!(next.last_anchor, "a1");

    let mut at_anchor = next.clone();
    at_anchor.joint.q = g.vertices[g.anchors["c2"]].q_e.clone();
    let next = ex.maybe_advance(&at_anchor);
    assert_eq!(next.active_index, 2);
    assert_eq!(next.last_anchor, "c2");

    let mut end = es.clone();
    end.active_index = end.active_sequence.len() - 1;
    assert_eq!(ex.maybe_advance(&end), end);
}

#[test]
fn control_law() {
    let mut bp = pair([0.3, 1.2]);
    let bounds = DVector::from_vec(vec![25.0, 25.0]);
    let s = bpguard_core::arm::JointState::new(
        DVector::from_vec(vec![0.5, 1.0]),
        DVector::from_vec(vec![0.1, -0.2]),
    );
    assert_eq!(control(&bp, &s, &bounds), (DVector::zeros(2), false));
    bp.k = DMatrix::from_row_slice(2, 4, &[-10.0, 0.0, -1.0, 0.0, 0.0, -10.0, 0.0, -1.0]);
    let at_rest = bpguard_core::arm::JointState::at_rest(bp.q_e.clone());
    assert_eq!(control(&bp, &at_rest, &bounds), (DVector::zeros(2), false));
    let (u, clamped) = control(&bp, &s, &bounds);
    assert!(!clamped);
    assert!((u[0] - (-10.0 * 0.2 - 0.1)).abs() < 1e-12);
    assert!((u[1] - (-10.0 * -0.2 + 0.2)).abs() < 1e-12);
    bp.k *= 100.0;
    let (u, clamped) = control(&bp, &s, &bounds);
    assert!(clamped);
    assert!(u.iter().all(|v| v.abs() <= 25.0));
}

#[test]
fn closed_loop_on_a_planned_graph() {
    let fx = Fixture::reference();
    let g = fx.planner().build_graph("a1", "a2", 5).unwrap();
    let mut ex = executive(&fx.model, &g);
    ex.fsm = AnchorFsm::from_edges(&[("a1", "a2")], "a1").unwrap();
    ex.candidates.retain(|(id, _)| id != "a3");

    // zero force from rest at a1 reaches the residue set of a2
    let mut es = ex.start("a1", "a2").unwrap();
    let zero = Vector2::zeros();
    while !ex.arrived(&es) {
        assert!(es.t < 60.0, "no arrival within 60 s");
        let next = ex.tick(&es, &zero).unwrap();
        assert!(next.active_index < next.active_sequence.len());
        if next.active_index != es.active_index {
            assert_eq!(next.active_index, es.active_index + 1);
            assert!(g.vertices[next.active_pair()].barrier(&es.joint) <= -ex.cfg.delta_switch);
        }
        assert!(g.vertices[next.active_pair()].barrier(&next.joint) <= ex.cfg.breach_level);
        es = next;
    }
    assert_eq!(es.clamp_events, 0);

    // resting on the terminal equilibrium is a fixed point
    let mut hold = ex.start("a2", "a2").unwrap();
    let q0 = hold.joint.clone();
    for _ in 0..1000 {
        hold = ex.tick(&hold, &zero).unwrap();
    }
    assert_eq!(hold.joint, q0);
    assert!((hold.t - 1.0).abs() < 1e-12);
}
