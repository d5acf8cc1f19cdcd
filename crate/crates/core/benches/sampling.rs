use bpguard_core::arm::{ElbowBranch, RobotModel};
use bpguard_core::certify::{certify, CertContext};
use bpguard_core::exec::Execution;
use bpguard_core::ldi::{fit_norm_bound, sample_domain, StateBox};
use bpguard_core::regions::{ConstraintSet, Limits, Region, RegionKind};
use bpguard_core::sdp::BarrierSolver;
use bpguard_core::synth::{synthesize, SynthOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DVector, Vector2};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn limits(model: &RobotModel) -> Limits {
    Limits {
        x_bounds: DVector::from_vec(vec![0.4, 0.4]),
        qd_bounds: DVector::from_vec(vec![1.0, 1.0]),
        dq_bounds: DVector::from_vec(vec![0.2, 0.2]),
        u_bounds: DVector::from_vec(model.torque_limits.clone()),
        w_bar: 1.0,
    }
}

fn ldi_fit(c: &mut Criterion) {
    let model = RobotModel::reference();
    let q_e = model
        .inverse_kinematics(&Vector2::new(0.0, 1.0), ElbowBranch::Down)
        .unwrap();
    let b = StateBox::uniform(q_e, 0.2, 1.0).unwrap();
    let samples = sample_domain(&b, 2000, 17);
    let mut group = c.benchmark_group("ldi_fit_2000");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| fit_norm_bound(&model, &b, black_box(&samples), 0.1, exec).unwrap())
        });
    }
    group.finish();
}

fn certification(c: &mut Criterion) {
    let model = RobotModel::reference();
    let limits = limits(&model);
    let task = Region::square("a2", RegionKind::Task, [0.0, 1.0], 0.05);
    let base = Region::square("base", RegionKind::Base, [0.0, 0.0], 0.15);
    let obstacles = [&base];
    let q_e = model
        .inverse_kinematics(&task.center(), ElbowBranch::Down)
        .unwrap();
    let b = StateBox::new(
        q_e.clone(),
        limits.dq_bounds.clone(),
        limits.qd_bounds.clone(),
    )
    .unwrap();
    let ldi = fit_norm_bound(
        &model,
        &b,
        &sample_domain(&b, 2000, 17),
        0.1,
        Execution::default(),
    )
    .unwrap();
    let plant = model.linearize(&q_e).unwrap();
    let cs = ConstraintSet::build(&model.forward_kinematics(&q_e), &obstacles, &limits).unwrap();
    let bp = synthesize(
        &model,
        &plant,
        &ldi,
        Some(&task),
        &cs,
        &SynthOptions::default(),
        &BarrierSolver::default(),
    )
    .unwrap();
    let ctx = CertContext {
        model: &model,
        state_box: &b,
        contain: Some(&task),
        obstacles: &obstacles,
        limits: &limits,
        branch: ElbowBranch::Down,
    };
    let mut group = c.benchmark_group("certify_2000");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| certify(black_box(&bp), &ctx, 2000, 7, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ldi_fit, certification);
criterion_main!(benches);
