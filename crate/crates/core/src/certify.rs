//! Sampling certificate for a synthesized barrier pair, evaluated on the
//! exact nonlinear arm rather than the LDI.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ElbowBranch, RobotModel};
use crate::exec::Execution;
use crate::ldi::StateBox;
use crate::regions::{Limits, Region};
use crate::synth::BarrierPair;

/// Force directions sampled per state.
pub const FORCE_DIRECTIONS: usize = 32;
/// Points per region edge in the containment check.
pub const CONTAIN_CHECK_PER_EDGE: usize = 25;
/// Gap between the residue level and the inner radius of the decrease annulus.
pub const ANNULUS_GAP: f64 = 0.02;
/// Seed used when a caller has no reason to pick one.
pub const CERTIFY_DEFAULT_SEED: u64 = 0x5eed;
const ARITH_TOL: f64 = 1e-9;
const RATE_TOL: f64 = 1e-6;
const MAX_LISTED: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("certification needs at least one sample")]
    EmptySampleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Torque,
    Workspace,
    Velocity,
    JointBox,
    Exclusion,
    Decrease,
    Rate,
    Containment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Amount by which the bound was exceeded.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub samples_used: usize,
    /// Largest `|u_i|` over boundary samples (N·m).
    pub max_torque_on_boundary: f64,
    /// Largest `|u_i| / ū_i` over boundary samples.
    pub max_torque_ratio: f64,
    /// Smallest `−Ḃ` over the annulus under the worst sampled force (1/s).
    pub min_decrease_margin: f64,
    /// Smallest `−Ḃ − α(‖z‖²_Q − ε₀²)`.
    pub min_rate_slack: f64,
    pub torque_ok: bool,
    pub containment_ok: bool,
    pub exclusion_ok: bool,
    pub velocity_ok: bool,
    pub workspace_ok: bool,
    pub decrease_ok: bool,
    pub violation_count: usize,
    /// The first violations found, in sample order.
    pub violations: Vec<Violation>,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

pub struct CertContext<'a> {
    pub model: &'a RobotModel,
    /// Validity box of the LDI the pair was synthesized against.
    pub state_box: &'a StateBox,
    pub contain: Option<&'a Region>,
    pub obstacles: &'a [&'a Region],
    pub limits: &'a Limits,
    pub branch: ElbowBranch,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    radius: f64,
    boundary: bool,
    dir: [f64; 4],
}

#[derive(Debug, Default)]
struct Outcome {
    torque_ratio: f64,
    torque_abs: f64,
    decrease: f64,
    rate_slack: f64,
    violations: Vec<Violation>,
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Runs the boundary, annulus and containment checks. `n_samples` points are
/// drawn on `∂E(1)` and as many again in the annulus
/// `ε₀ + 0.02 ≤ ‖z‖_Q ≤ 1`.
pub fn certify(
    bp: &BarrierPair,
    ctx: &CertContext,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<CertReport, CertError> {
    if n_samples == 0 {
        return Err(CertError::EmptySampleSet);
    }
    let dim = 2 * bp.n();
    assert_eq!(dim, 4, "certification is implemented for two-link arms");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = (bp.eps0 + ANNULUS_GAP).min(1.0);
    let mut samples = Vec::with_capacity(2 * n_samples);
    for k in 0..2 * n_samples {
        let v = unit_direction(&mut rng, dim);
        let boundary = k < n_samples;
        let radius = if boundary {
            1.0
        } else {
            inner + (1.0 - inner) * rng.random::<f64>()
        };
        samples.push(Sample {
            radius,
            boundary,
            dir: [v[0], v[1], v[2], v[3]],
        });
    }
    let chol = bp.q.clone().cholesky().expect("Q is positive definite").l();
    let outcomes = exec.map(&samples, |s| evaluate(bp, ctx, &chol, s));

    let mut report = CertReport {
        samples_used: samples.len(),
        max_torque_on_boundary: 0.0,
        max_torque_ratio: 0.0,
        min_decrease_margin: f64::INFINITY,
        min_rate_slack: f64::INFINITY,
        torque_ok: true,
        containment_ok: true,
        exclusion_ok: true,
        velocity_ok: true,
        workspace_ok: true,
        decrease_ok: true,
        violation_count: 0,
        violations: Vec::new(),
    };
    for (s, o) in samples.iter().zip(outcomes) {
        if s.boundary {
            report.max_torque_on_boundary = report.max_torque_on_boundary.max(o.torque_abs);
            report.max_torque_ratio = report.max_torque_ratio.max(o.torque_ratio);
        }
        report.min_decrease_margin = report.min_decrease_margin.min(o.decrease);
        report.min_rate_slack = report.min_rate_slack.min(o.rate_slack);
        for v in o.violations {
            report.record(v);
        }
    }
    if let Some(region) = ctx.contain {
        let q11_inv = bp
            .joint_projection()
            .try_inverse()
            .expect("joint projection of Q is positive definite");
        for p in region.edge_samples(CONTAIN_CHECK_PER_EDGE) {
            match ctx.model.inverse_kinematics(&p, ctx.branch) {
                Ok(q) => {
                    let d = q - &bp.q_e;
                    let level = d.dot(&(&q11_inv * &d));
                    if level > 1.0 + ARITH_TOL {
                        report.record(Violation {
                            kind: ViolationKind::Containment,
                            excess: level - 1.0,
                        });
                    }
                }
                Err(_) => report.record(Violation {
                    kind: ViolationKind::Containment,
                    excess: f64::INFINITY,
                }),
            }
        }
    }
    Ok(report)
}

impl CertReport {
    fn record(&mut self, v: Violation) {
        match v.kind {
            ViolationKind::Torque => self.torque_ok = false,
            ViolationKind::Containment => self.containment_ok = false,
            ViolationKind::Exclusion => self.exclusion_ok = false,
            ViolationKind::Velocity | ViolationKind::JointBox => self.velocity_ok = false,
            ViolationKind::Workspace => self.workspace_ok = false,
            ViolationKind::Decrease | ViolationKind::Rate => self.decrease_ok = false,
        }
        self.violation_count += 1;
        if self.violations.len() < MAX_LISTED {
            self.violations.push(v);
        }
    }
}

fn evaluate(
    bp: &BarrierPair,
    ctx: &CertContext,
    chol: &nalgebra::DMatrix<f64>,
    s: &Sample,
) -> Outcome {
    let n = bp.n();
    let z = chol * DVector::from_column_slice(&s.dir) * s.radius;
    let q_off = z.rows(0, n).into_owned();
    let q = &bp.q_e + &q_off;
    let qd = z.rows(n, n).into_owned();
    let lim = ctx.limits;
    let mut out = Outcome::default();
    let flag = |kind: ViolationKind, excess: f64| {
        if excess > ARITH_TOL {
            Some(Violation { kind, excess })
        } else {
            None
        }
    };
    let mut violations = Vec::new();

    let u = &bp.k * &z;
    for i in 0..n {
        out.torque_abs = out.torque_abs.max(u[i].abs());
        out.torque_ratio = out.torque_ratio.max(u[i].abs() / lim.u_bounds[i]);
        violations.extend(flag(ViolationKind::Torque, u[i].abs() - lim.u_bounds[i]));
        violations.extend(flag(
            ViolationKind::Velocity,
            qd[i].abs() - lim.qd_bounds[i],
        ));
        violations.extend(flag(
            ViolationKind::JointBox,
            q_off[i].abs() - ctx.state_box.dq_max[i],
        ));
    }

    let x = ctx.model.forward_kinematics(&q);
    let dx = x - bp.x_e;
    for i in 0..2 {
        violations.extend(flag(
            ViolationKind::Workspace,
            dx[i].abs() - lim.x_bounds[i],
        ));
    }
    let jac = ctx.model.jacobian(&q);
    let lin = jac.clone() * &q_off;
    let x_lin = bp.x_e + Vector2::new(lin[0], lin[1]);
    for r in ctx.obstacles {
        if r.contains(&x) || r.contains(&x_lin) {
            let d = r
                .distance_to_boundary(&x)
                .max(r.distance_to_boundary(&x_lin));
            violations.push(Violation {
                kind: ViolationKind::Exclusion,
                excess: d.max(ARITH_TOL * 2.0),
            });
        }
    }

    // Ḃ is affine in w for a fixed state
    let m = ctx.model.inertia(&q);
    let ch = m.cholesky().expect("inertia is positive definite");
    let c = ctx.model.coriolis(&q, &qd);
    let acc0 = ch.solve(&(&u - c * &qd));
    let g = ch.solve(&jac.transpose());
    let p = bp.q_inv() * &z;
    let p_q = p.rows(0, n);
    let p_qd = p.rows(n, n);
    let b_dot0 = 2.0 * (p_q.dot(&qd) + p_qd.dot(&acc0));
    let sens = g.transpose() * p_qd;
    let mut worst = b_dot0 + 2.0 * bp.w_bar * sens.norm();
    for k in 0..FORCE_DIRECTIONS {
        let th = 2.0 * std::f64::consts::PI * k as f64 / FORCE_DIRECTIONS as f64;
        let w = Vector2::new(th.cos(), th.sin()) * bp.w_bar;
        worst = worst.max(b_dot0 + 2.0 * sens.dot(&w));
    }
    let level = s.radius * s.radius;
    out.decrease = -worst;
    out.rate_slack = -worst - bp.alpha * (level - bp.eps0 * bp.eps0);
    if level >= (bp.eps0 + ANNULUS_GAP).powi(2) - 1e-12 {
        if worst >= 0.0 {
            violations.push(Violation {
                kind: ViolationKind::Decrease,
                excess: worst.max(f64::MIN_POSITIVE),
            });
        }
        if out.rate_slack < -RATE_TOL {
            violations.push(Violation {
                kind: ViolationKind::Rate,
                excess: -out.rate_slack,
            });
        }
    }
    out.violations = violations;
    out
}
