//! Planar point-mass manipulator: kinematics, Lagrangian terms, linearization
//! and a fixed-step RK4 integrator.
//!
//! The arm moves in a horizontal plane, so there is no gravity term. Each
//! link carries its whole mass at its distal end.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum `|det J|` (m²) accepted for equilibria and IK solutions.
pub const SINGULARITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("target at distance {distance:.6} m is outside the reachable annulus")]
    OutOfReach { distance: f64 },
    #[error("configuration is near-singular (|det J| = {det:.3e})")]
    NearSingular { det: f64 },
    #[error("integration produced a non-finite state")]
    NonFiniteState,
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("operation only supported for two-link arms")]
    Unsupported,
}

/// Elbow convention for two-link inverse kinematics. `Down` is the branch
/// with a positive elbow angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ElbowBranch {
    #[default]
    Down,
    Up,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub link_lengths: Vec<f64>,
    pub point_masses: Vec<f64>,
    pub torque_limits: Vec<f64>,
    pub base_position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// Dynamics terms at one state.
#[derive(Debug, Clone)]
pub struct LagrangianTerms {
    pub inertia: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Linearization of the arm about `(q_e, 0)`, state `[q - q_e; qd]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedPlant {
    pub q_e: DVector<f64>,
    pub x_e: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c_x: DMatrix<f64>,
}

impl LinearizedPlant {
    pub fn n(&self) -> usize {
        self.q_e.len()
    }
}

impl RobotModel {
    /// The two-link arm used in the reference scenario.
    pub fn reference() -> Self {
        Self {
            link_lengths: vec![0.75, 0.75],
            point_masses: vec![2.5, 2.5],
            torque_limits: vec![25.0, 25.0],
            base_position: [0.0, 0.0],
        }
    }

    pub fn n(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        let n = self.n();
        if n == 0 {
            return Err(ArmError::InvalidModel("no links".into()));
        }
        if self.point_masses.len() != n || self.torque_limits.len() != n {
            return Err(ArmError::InvalidModel(format!(
                "expected {n} masses and torque limits, got {} and {}",
                self.point_masses.len(),
                self.torque_limits.len()
            )));
        }
        let all_positive = self
            .link_lengths
            .iter()
            .chain(&self.point_masses)
            .chain(&self.torque_limits)
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(ArmError::InvalidModel(
                "lengths, masses and torque limits must be strictly positive".into(),
            ));
        }
        if !self.base_position.iter().all(|v| v.is_finite()) {
            return Err(ArmError::InvalidModel(
                "base position must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn base(&self) -> Vector2<f64> {
        Vector2::new(self.base_position[0], self.base_position[1])
    }

    fn absolute_angles(q: &DVector<f64>) -> Vec<f64> {
        q.iter()
            .scan(0.0, |acc, qi| {
                *acc += qi;
                Some(*acc)
            })
            .collect()
    }

    /// Position of the distal end of link `k` in world coordinates.
    pub fn link_end(&self, q: &DVector<f64>, k: usize) -> Vector2<f64> {
        let theta = Self::absolute_angles(q);
        let mut p = self.base();
        for i in 0..=k {
            p += self.link_lengths[i] * Vector2::new(theta[i].cos(), theta[i].sin());
        }
        p
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Vector2<f64> {
        self.link_end(q, self.n() - 1)
    }

    /// Jacobian of the end of link `k` (2×n, columns beyond `k` are zero).
    fn point_jacobian(&self, theta: &[f64], k: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut jac = DMatrix::zeros(2, n);
        for j in 0..=k {
            for p in j..=k {
                let l = self.link_lengths[p];
                jac[(0, j)] -= l * theta[p].sin();
                jac[(1, j)] += l * theta[p].cos();
            }
        }
        jac
    }

    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let theta = Self::absolute_angles(q);
        self.point_jacobian(&theta, self.n() - 1)
    }

    pub fn jacobian_det(&self, q: &DVector<f64>) -> f64 {
        let j = self.jacobian(q);
        if j.nrows() == j.ncols() {
            j.determinant()
        } else {
            (&j * j.transpose()).determinant().sqrt()
        }
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        if self.n() == 2 {
            return self.inertia_two_link(q[1]);
        }
        let theta = Self::absolute_angles(q);
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            let jk = self.point_jacobian(&theta, k);
            m += self.point_masses[k] * jk.transpose() * jk;
        }
        m
    }

    fn inertia_two_link(&self, q2: f64) -> DMatrix<f64> {
        let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
        let (m1, m2) = (self.point_masses[0], self.point_masses[1]);
        let c2 = q2.cos();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }

    /// ∂M/∂q_i for the general point-mass model.
    fn inertia_partial(&self, theta: &[f64], i: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut dm = DMatrix::zeros(n, n);
        for k in 0..n {
            let jk = self.point_jacobian(theta, k);
            // d/dq_i of column j of J_k: links p >= max(i, j) up to k rotate with q_i.
            let mut djk = DMatrix::zeros(2, n);
            for j in 0..=k {
                for p in i.max(j)..=k {
                    let l = self.link_lengths[p];
                    djk[(0, j)] -= l * theta[p].cos();
                    djk[(1, j)] -= l * theta[p].sin();
                }
            }
            let prod = djk.transpose() * &jk;
            dm += self.point_masses[k] * (&prod + prod.transpose());
        }
        dm
    }

    /// Coriolis/centrifugal matrix from Christoffel symbols, so that
    /// `Ṁ - 2C` is skew-symmetric.
    pub fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        if self.n() == 2 {
            let (l1, l2, m2) = (
                self.link_lengths[0],
                self.link_lengths[1],
                self.point_masses[1],
            );
            let h = -m2 * l1 * l2 * q[1].sin();
            return DMatrix::from_row_slice(
                2,
                2,
                &[h * qd[1], h * (qd[0] + qd[1]), -h * qd[0], 0.0],
            );
        }
        let n = self.n();
        let theta = Self::absolute_angles(q);
        let partials: Vec<DMatrix<f64>> = (0..n).map(|i| self.inertia_partial(&theta, i)).collect();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    let gamma =
                        0.5 * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]);
                    acc += gamma * qd[k];
                }
                c[(i, j)] = acc;
            }
        }
        c
    }

    pub fn lagrangian_terms(&self, s: &JointState) -> LagrangianTerms {
        LagrangianTerms {
            inertia: self.inertia(&s.q),
            coriolis: self.coriolis(&s.q, &s.qd),
            jacobian: self.jacobian(&s.q),
        }
    }

    /// Two-link inverse kinematics on the requested elbow branch.
    pub fn inverse_kinematics(
        &self,
        x: &Vector2<f64>,
        branch: ElbowBranch,
    ) -> Result<DVector<f64>, ArmError> {
        if self.n() != 2 {
            return Err(ArmError::Unsupported);
        }
        let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
        let r = x - self.base();
        let d2 = r.norm_squared();
        let distance = d2.sqrt();
        if distance > l1 + l2 || distance < (l1 - l2).abs() {
            return Err(ArmError::OutOfReach { distance });
        }
        let c2 = ((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let mut q2 = c2.acos();
        if branch == ElbowBranch::Up {
            q2 = -q2;
        }
        let q1 = r.y.atan2(r.x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        let q = DVector::from_vec(vec![wrap_angle(q1), q2]);
        let det = self.jacobian_det(&q);
        if det.abs() < SINGULARITY_THRESHOLD {
            return Err(ArmError::NearSingular { det });
        }
        Ok(q)
    }

    pub fn linearize(&self, q_e: &DVector<f64>) -> Result<LinearizedPlant, ArmError> {
        let n = self.n();
        let det = self.jacobian_det(q_e);
        if det.abs() < SINGULARITY_THRESHOLD {
            return Err(ArmError::NearSingular { det });
        }
        let m_inv = self
            .inertia(q_e)
            .try_inverse()
            .ok_or(ArmError::NearSingular { det })?;
        let jac = self.jacobian(q_e);
        let c0 = self.coriolis(q_e, &DVector::zeros(n));

        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).fill_with_identity();
        a.view_mut((n, n), (n, n)).copy_from(&(-&m_inv * c0));
        let mut b_u = DMatrix::zeros(2 * n, n);
        b_u.view_mut((n, 0), (n, n)).copy_from(&m_inv);
        let mut b_w = DMatrix::zeros(2 * n, 2);
        b_w.view_mut((n, 0), (n, 2))
            .copy_from(&(&m_inv * jac.transpose()));
        let mut c_x = DMatrix::zeros(2, 2 * n);
        c_x.view_mut((0, 0), (2, n)).copy_from(&jac);

        let x_e = self.forward_kinematics(q_e);
        Ok(LinearizedPlant {
            q_e: q_e.clone(),
            x_e: DVector::from_column_slice(x_e.as_slice()),
            a,
            b_u,
            b_w,
            c_x,
        })
    }

    /// Joint accelerations `M⁻¹(u + Jᵀw − C q̇)`.
    pub fn acceleration(&self, s: &JointState, u: &DVector<f64>, w: &Vector2<f64>) -> DVector<f64> {
        let m = self.inertia(&s.q);
        let c = self.coriolis(&s.q, &s.qd);
        let jac = self.jacobian(&s.q);
        let rhs = u + jac.transpose() * w - c * &s.qd;
        m.cholesky()
            .map(|ch| ch.solve(&rhs))
            .unwrap_or_else(|| DVector::from_element(self.n(), f64::NAN))
    }

    /// One RK4 step of the full nonlinear dynamics with `u` and `w` held.
    pub fn step(
        &self,
        s: &JointState,
        u: &DVector<f64>,
        w: &Vector2<f64>,
        dt: f64,
    ) -> Result<JointState, ArmError> {
        let deriv = |st: &JointState| (st.qd.clone(), self.acceleration(st, u, w));
        let offset = |k: &(DVector<f64>, DVector<f64>), h: f64| {
            JointState::new(&s.q + &k.0 * h, &s.qd + &k.1 * h)
        };
        let k1 = deriv(s);
        let k2 = deriv(&offset(&k1, 0.5 * dt));
        let k3 = deriv(&offset(&k2, 0.5 * dt));
        let k4 = deriv(&offset(&k3, dt));
        let q = &s.q + (&k1.0 + 2.0 * &k2.0 + 2.0 * &k3.0 + &k4.0) * (dt / 6.0);
        let qd = &s.qd + (&k1.1 + 2.0 * &k2.1 + 2.0 * &k3.1 + &k4.1) * (dt / 6.0);
        let next = JointState::new(q, qd);
        if next.is_finite() {
            Ok(next)
        } else {
            Err(ArmError::NonFiniteState)
        }
    }

    pub fn kinetic_energy(&self, s: &JointState) -> f64 {
        0.5 * s.qd.dot(&(self.inertia(&s.q) * &s.qd))
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn q(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn forward_kinematics_examples() {
        let m = RobotModel::reference();
        assert_abs_diff_eq!(
            m.forward_kinematics(&q(0.0, 0.0)),
            Vector2::new(1.5, 0.0),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            m.forward_kinematics(&q(FRAC_PI_2, 0.0)),
            Vector2::new(0.0, 1.5),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            m.forward_kinematics(&q(0.0, FRAC_PI_2)),
            Vector2::new(0.75, 0.75),
            epsilon = 1e-12
        );
    }

    #[test]
    fn inverse_kinematics_examples() {
        let m = RobotModel::reference();
        assert!(matches!(
            m.inverse_kinematics(&Vector2::new(1.5, 0.0), ElbowBranch::Down),
            Err(ArmError::NearSingular { .. })
        ));
        assert!(matches!(
            m.inverse_kinematics(&Vector2::new(2.0, 0.0), ElbowBranch::Down),
            Err(ArmError::OutOfReach { .. })
        ));
        let sol = m
            .inverse_kinematics(&Vector2::new(0.75, 0.75), ElbowBranch::Down)
            .unwrap();
        assert_abs_diff_eq!(sol, q(0.0, FRAC_PI_2), epsilon = 1e-12);
        let up = m
            .inverse_kinematics(&Vector2::new(0.75, 0.75), ElbowBranch::Up)
            .unwrap();
        assert!(up[1] < 0.0);
        assert_abs_diff_eq!(
            m.forward_kinematics(&up),
            Vector2::new(0.75, 0.75),
            epsilon = 1e-12
        );
    }

    #[test]
    fn inertia_at_full_extension() {
        let m = RobotModel::reference();
        assert_abs_diff_eq!(m.inertia(&q(0.0, 0.0))[(0, 0)], 7.03125, epsilon = 1e-12);
        assert!(m
            .coriolis(&q(0.3, 1.1), &q(0.0, 0.0))
            .iter()
            .all(|v| *v == 0.0));
        assert_abs_diff_eq!(m.jacobian_det(&q(0.0, 0.0)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn general_path_matches_two_link_closed_form() {
        let m = RobotModel::reference();
        let general = RobotModel {
            link_lengths: vec![0.75, 0.75, 1e-9],
            point_masses: vec![2.5, 2.5, 1e-9],
            torque_limits: vec![25.0; 3],
            base_position: [0.0, 0.0],
        };
        let q2 = q(0.4, 1.3);
        let q3 = DVector::from_vec(vec![0.4, 1.3, 0.0]);
        let qd2 = q(0.7, -0.2);
        let qd3 = DVector::from_vec(vec![0.7, -0.2, 0.0]);
        let m3 = general.inertia(&q3);
        let c3 = general.coriolis(&q3, &qd3);
        assert_abs_diff_eq!(
            m3.view((0, 0), (2, 2)).clone_owned(),
            m.inertia(&q2),
            epsilon = 1e-7
        );
        assert_abs_diff_eq!(
            c3.view((0, 0), (2, 2)).clone_owned(),
            m.coriolis(&q2, &qd2),
            epsilon = 1e-7
        );
    }

    #[test]
    fn linearize_structure_and_input_matrix() {
        let m = RobotModel::reference();
        let plant = m.linearize(&q(0.0, FRAC_PI_2)).unwrap();
        let n = 2;
        assert!(plant.a.view((0, 0), (n, n)).iter().all(|v| *v == 0.0));
        assert_eq!(
            plant.a.view((0, n), (n, n)).clone_owned(),
            DMatrix::identity(n, n)
        );
        assert!(plant.b_u.view((0, 0), (n, n)).iter().all(|v| *v == 0.0));
        assert!(plant.b_w.view((0, 0), (n, 2)).iter().all(|v| *v == 0.0));
        // Direct inverse of the 2x2 inertia as the oracle.
        let mm = m.inertia(&q(0.0, FRAC_PI_2));
        let det = mm[(0, 0)] * mm[(1, 1)] - mm[(0, 1)] * mm[(1, 0)];
        let inv = DMatrix::from_row_slice(
            2,
            2,
            &[
                mm[(1, 1)] / det,
                -mm[(0, 1)] / det,
                -mm[(1, 0)] / det,
                mm[(0, 0)] / det,
            ],
        );
        assert_abs_diff_eq!(
            plant.b_u.view((n, 0), (n, n)).clone_owned(),
            inv,
            epsilon = 1e-12
        );
        assert!(matches!(
            m.linearize(&q(0.0, 0.0)),
            Err(ArmError::NearSingular { .. })
        ));
    }

    #[test]
    fn rest_state_is_equilibrium() {
        let m = RobotModel::reference();
        let s = JointState::at_rest(q(0.2, 1.0));
        let next = m.step(&s, &q(0.0, 0.0), &Vector2::zeros(), 1e-3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn initial_acceleration_from_end_effector_force() {
        let m = RobotModel::reference();
        let s = JointState::at_rest(q(0.0, FRAC_PI_2));
        let w = Vector2::new(1.0, 0.0);
        // J at (0, pi/2): [[-0.75, -0.75], [0.75, 0]]; Jᵀw = (-0.75, -0.75).
        let jt_w = DVector::from_vec(vec![-0.75, -0.75]);
        let mm = m.inertia(&s.q);
        let expected = mm.try_inverse().unwrap() * jt_w;
        let got = m.acceleration(&s, &q(0.0, 0.0), &w);
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let m = RobotModel::reference();
        let s0 = JointState::new(q(0.3, 1.2), q(0.5, -0.4));
        let u = q(2.0, -1.0);
        let w = Vector2::zeros();
        let horizon = 0.08;
        let run = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            let mut s = s0.clone();
            for _ in 0..steps {
                s = m.step(&s, &u, &w, dt).unwrap();
            }
            s
        };
        let (a, b, c) = (run(0.008), run(0.004), run(0.002));
        let e1 = (&a.q - &b.q).norm() + (&a.qd - &b.qd).norm();
        let e2 = (&b.q - &c.q).norm() + (&b.qd - &c.qd).norm();
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn free_motion_conserves_energy() {
        let m = RobotModel::reference();
        let mut s = JointState::new(q(0.1, 1.4), q(0.8, -0.6));
        let e0 = m.kinetic_energy(&s);
        let zero = q(0.0, 0.0);
        for _ in 0..1000 {
            s = m.step(&s, &zero, &Vector2::zeros(), 1e-3).unwrap();
        }
        let drift = (m.kinetic_energy(&s) - e0).abs() / e0;
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn model_validation() {
        let mut m = RobotModel::reference();
        assert!(m.validate().is_ok());
        m.point_masses[1] = 0.0;
        assert!(m.validate().is_err());
        let mut m = RobotModel::reference();
        m.torque_limits.pop();
        assert!(m.validate().is_err());
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-7.0, -3.2, 0.0, 3.2, 10.0] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            assert_abs_diff_eq!(
                (a - w).rem_euclid(2.0 * std::f64::consts::PI).min(
                    2.0 * std::f64::consts::PI - (a - w).rem_euclid(2.0 * std::f64::consts::PI)
                ),
                0.0,
                epsilon = 1e-12
            );
        }
    }
}
