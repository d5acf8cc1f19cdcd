#![allow(dead_code)]

use bpguard_core::arm::{ElbowBranch, RobotModel};
use bpguard_core::exec::Execution;
use bpguard_core::regions::{Limits, Region, RegionKind};
use bpguard_core::rrt::{Planner, PlannerConfig};
use bpguard_core::sdp::BarrierSolver;
use nalgebra::{DVector, Vector2};

pub fn polar(r: f64, deg: f64) -> [f64; 2] {
    let a = deg.to_radians();
    [r * a.cos(), r * a.sin()]
}

/// Three task squares on the unit circle, two outer obstacles, one inner
/// obstacle and the base.
pub fn reference_regions() -> Vec<Region> {
    vec![
        Region::square("a1", RegionKind::Task, polar(1.0, 150.0), 0.05),
        Region::square("a2", RegionKind::Task, polar(1.0, 90.0), 0.05),
        Region::square("a3", RegionKind::Task, polar(1.0, 30.0), 0.05),
        Region::square("a4", RegionKind::Obstacle, polar(1.35, 120.0), 0.08),
        Region::square("a5", RegionKind::Obstacle, polar(1.35, 60.0), 0.08),
        Region::square("a6", RegionKind::Obstacle, polar(0.5, 90.0), 0.07),
        Region::square("a7", RegionKind::Base, [0.0, 0.0], 0.15),
    ]
}

pub fn reference_limits(model: &RobotModel) -> Limits {
    Limits {
        x_bounds: DVector::from_vec(vec![0.4, 0.4]),
        qd_bounds: DVector::from_vec(vec![1.0, 1.0]),
        dq_bounds: DVector::from_vec(vec![0.2, 0.2]),
        u_bounds: DVector::from_vec(model.torque_limits.clone()),
        w_bar: 1.0,
    }
}

pub fn task_q(model: &RobotModel, center: [f64; 2]) -> DVector<f64> {
    model
        .inverse_kinematics(&Vector2::new(center[0], center[1]), ElbowBranch::Down)
        .unwrap()
}

pub struct Fixture {
    pub model: RobotModel,
    pub regions: Vec<Region>,
    pub limits: Limits,
    pub cfg: PlannerConfig,
    pub solver: BarrierSolver,
}

impl Fixture {
    pub fn reference() -> Self {
        let model = RobotModel::reference();
        let limits = reference_limits(&model);
        Self {
            model,
            regions: reference_regions(),
            limits,
            cfg: PlannerConfig::default(),
            solver: BarrierSolver::default(),
        }
    }

    pub fn planner(&self) -> Planner<'_> {
        Planner {
            model: &self.model,
            regions: &self.regions,
            limits: &self.limits,
            cfg: &self.cfg,
            backend: &self.solver,
            exec: Execution::default(),
        }
    }
}
