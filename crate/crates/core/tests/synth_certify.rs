mod common;

use bpguard_core::arm::{ElbowBranch, RobotModel};
use bpguard_core::certify::{certify, CertContext, CertError, ViolationKind};
use bpguard_core::exec::Execution;
use bpguard_core::ldi::{fit_norm_bound, sample_domain, LdiModel, StateBox};
use bpguard_core::regions::{ConstraintSet, Limits, Region, RegionKind};
use bpguard_core::sdp::BarrierSolver;
use bpguard_core::synth::{
    lmi_residuals, synthesize, AlphaPolicy, BarrierPair, SynthError, SynthOptions,
    RESIDUAL_TOLERANCE,
};
use common::Fixture;
use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Problem {
    model: RobotModel,
    limits: Limits,
    ldi: LdiModel,
    contain: Region,
    obstacles: Vec<Region>,
}

impl Problem {
    fn anchor(task: &str, model: RobotModel, limits: Limits) -> Self {
        let fx = Fixture::reference();
        let contain = fx.regions.iter().find(|r| r.id == task).unwrap().clone();
        let obstacles: Vec<Region> = fx
            .regions
            .iter()
            .filter(|r| r.kind != RegionKind::Task)
            .cloned()
            .collect();
        let c = contain.center();
        let q_e = common::task_q(&model, [c.x, c.y]);
        let b = StateBox::new(q_e, limits.dq_bounds.clone(), limits.qd_bounds.clone()).unwrap();
        let ldi = fit_norm_bound(
            &model,
            &b,
            &sample_domain(&b, 2000, 17),
            0.1,
            Execution::default(),
        )
        .unwrap();
        Self {
            model,
            limits,
            ldi,
            contain,
            obstacles,
        }
    }

    fn reference(task: &str) -> Self {
        let model = RobotModel::reference();
        let limits = common::reference_limits(&model);
        Self::anchor(task, model, limits)
    }

    fn obstacle_refs(&self) -> Vec<&Region> {
        self.obstacles.iter().collect()
    }

    fn constraints(&self) -> ConstraintSet {
        let x_e = self.model.forward_kinematics(&self.ldi.state_box.q_e);
        ConstraintSet::build(&x_e, &self.obstacle_refs(), &self.limits).unwrap()
    }

    fn solve(&self, alpha: AlphaPolicy) -> Result<BarrierPair, SynthError> {
        let plant = self.model.linearize(&self.ldi.state_box.q_e).unwrap();
        let opts = SynthOptions {
            alpha,
            ..SynthOptions::default()
        };
        synthesize(
            &self.model,
            &plant,
            &self.ldi,
            Some(&self.contain),
            &self.constraints(),
            &opts,
            &BarrierSolver::default(),
        )
    }

    fn certify(
        &self,
        bp: &BarrierPair,
        n: usize,
    ) -> Result<bpguard_core::certify::CertReport, CertError> {
        let obstacles = self.obstacle_refs();
        let ctx = CertContext {
            model: &self.model,
            state_box: &self.ldi.state_box,
            contain: Some(&self.contain),
            obstacles: &obstacles,
            limits: &self.limits,
            branch: ElbowBranch::Down,
        };
        certify(bp, &ctx, n, 2024, Execution::default())
    }
}

#[test]
fn anchor_pair_certifies_with_zero_violations() {
    let p = Problem::reference("a2");
    let bp = p.solve(AlphaPolicy::default()).unwrap();
    let report = p.certify(&bp, 10_000).unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.max_torque_ratio <= 1.0 + 1e-9);
    assert!(report.min_rate_slack >= -1e-6);
    assert!(report.min_decrease_margin > 0.0);

    let plant = p.model.linearize(&bp.q_e).unwrap();
    for r in lmi_residuals(&bp, &plant, &p.ldi, &p.constraints()).unwrap() {
        assert!(
            r.min_eig >= -RESIDUAL_TOLERANCE,
            "{} has eigenvalue {}",
            r.label,
            r.min_eig
        );
    }
}

#[test]
fn boundary_torque_bound_is_exact() {
    let p = Problem::reference("a1");
    let bp = p.solve(AlphaPolicy::default()).unwrap();
    let chol = bp.q.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let v = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        if v.norm() < 1e-3 {
            continue;
        }
        let z = &chol * (&v / v.norm());
        assert!((bp.norm(&z) - 1.0).abs() < 1e-12);
        let u = &bp.k * &z;
        for i in 0..2 {
            assert!(
                u[i].abs() <= p.limits.u_bounds[i] * (1.0 + 1e-9),
                "|u{i}| = {}",
                u[i].abs()
            );
        }
    }
}

#[test]
fn inflated_gain_violates_torque() {
    let p = Problem::reference("a3");
    let mut bp = p.solve(AlphaPolicy::Fixed { value: 4.0 }).unwrap();
    bp.k *= 10.0;
    let report = p.certify(&bp, 2000).unwrap();
    assert!(!report.torque_ok);
    assert!(report
        .violations
        .iter()
        .any(|v| v.kind == ViolationKind::Torque));
}

#[test]
fn empty_sample_set() {
    let p = Problem::reference("a2");
    let bp = p.solve(AlphaPolicy::Fixed { value: 4.0 }).unwrap();
    assert_eq!(p.certify(&bp, 0).unwrap_err(), CertError::EmptySampleSet);
}

#[test]
fn tiny_torque_limit_is_infeasible() {
    let mut model = RobotModel::reference();
    model.torque_limits = vec![0.001, 0.001];
    let limits = common::reference_limits(&model);
    let p = Problem::anchor("a2", model, limits);
    assert!(matches!(
        p.solve(AlphaPolicy::default()),
        Err(SynthError::Infeasible { .. })
    ));
    // the same conclusion from the dynamics alone: 1 N through Jᵀ needs more
    // than 0.001 N·m of static torque in some direction
    let jt = p.model.jacobian(&p.ldi.state_box.q_e).transpose();
    let need = (0..32)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 32.0;
            (&jt * Vector2::new(a.cos(), a.sin())).amax()
        })
        .fold(0.0, f64::max);
    assert!(need > 0.001);
}

#[test]
fn bad_scalars_rejected() {
    let p = Problem::reference("a2");
    let plant = p.model.linearize(&p.ldi.state_box.q_e).unwrap();
    for eps0 in [0.0, 1.0, 1.5] {
        let opts = SynthOptions {
            eps0,
            ..SynthOptions::default()
        };
        let r = synthesize(
            &p.model,
            &plant,
            &p.ldi,
            None,
            &p.constraints(),
            &opts,
            &BarrierSolver::default(),
        );
        assert!(
            matches!(r, Err(SynthError::InvalidScalar(_))),
            "eps0 = {eps0}"
        );
    }
    let opts = SynthOptions {
        alpha: AlphaPolicy::Fixed { value: -1.0 },
        ..SynthOptions::default()
    };
    let r = synthesize(
        &p.model,
        &plant,
        &p.ldi,
        None,
        &p.constraints(),
        &opts,
        &BarrierSolver::default(),
    );
    assert!(matches!(r, Err(SynthError::InvalidScalar(_))));
}

#[test]
fn torque_unit_scaling() {
    let c = 1000.0;
    let base = Problem::reference("a2");
    let mut model = RobotModel::reference();
    model.point_masses.iter_mut().for_each(|m| *m *= c);
    model.torque_limits.iter_mut().for_each(|u| *u *= c);
    let mut limits = common::reference_limits(&model);
    limits.w_bar *= c;
    let scaled = Problem::anchor("a2", model, limits);

    let alpha = AlphaPolicy::Fixed { value: 4.0 };
    let a = base.solve(alpha).unwrap();
    let b = scaled.solve(alpha).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
    for (x, y) in a.q.iter().zip(b.q.iter()) {
        assert!(rel(*x, *y) < 1e-6, "Q entries {x} vs {y}");
    }
    let kmax = a.k.amax();
    for (x, y) in a.k.iter().zip(b.k.iter()) {
        assert!((c * x - y).abs() < 1e-6 * c * kmax, "K entries {x} vs {y}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut decided = 0;
    for _ in 0..10_000 {
        let z = DVector::from_fn(4, |i, _| {
            rng.random_range(-1.0..1.0) * if i < 2 { 0.25 } else { 1.2 }
        });
        let (na, nb) = (a.norm(&z), b.norm(&z));
        if (na - 1.0).abs() > 1e-6 {
            assert_eq!(na <= 1.0, nb <= 1.0);
            decided += 1;
        }
    }
    assert!(decided > 9000);
}
