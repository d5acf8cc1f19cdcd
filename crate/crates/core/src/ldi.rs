//! Norm-bound linear differential inclusion fitted over a box of states.
//!
//! Each state-dependent term `T(q, q̇)` of the dynamics is covered by
//! `{T₀ + L·Δ·R : ‖Δ‖ ≤ 1}` where `T₀` is the exact value at the box center,
//! `L = σ·W_L` and `R = W_R`. The weights are fixed per term (inertia
//! whitening for terms that pass through `M⁻¹`, identity otherwise) and `σ`
//! is the inflated maximum of `‖W_L⁻¹ (T − T₀) W_R⁻¹‖₂` over the fitting
//! samples.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{JointState, RobotModel, SINGULARITY_THRESHOLD};
use crate::exec::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdiError {
    #[error("sample {index} is near-singular (|det J| = {det:.3e})")]
    SingularSample { index: usize, det: f64 },
    #[error("state lies outside the LDI box")]
    OutsideBox,
    #[error("no samples supplied")]
    NoSamples,
    #[error("invalid state box: {0}")]
    InvalidBox(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub q_e: DVector<f64>,
    pub dq_max: DVector<f64>,
    pub dqd_max: DVector<f64>,
}

impl StateBox {
    pub fn new(
        q_e: DVector<f64>,
        dq_max: DVector<f64>,
        dqd_max: DVector<f64>,
    ) -> Result<Self, LdiError> {
        let n = q_e.len();
        if dq_max.len() != n || dqd_max.len() != n {
            return Err(LdiError::InvalidBox("dimension mismatch".into()));
        }
        if !dq_max
            .iter()
            .chain(dqd_max.iter())
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return Err(LdiError::InvalidBox("half-widths must be positive".into()));
        }
        Ok(Self {
            q_e,
            dq_max,
            dqd_max,
        })
    }

    pub fn uniform(q_e: DVector<f64>, dq: f64, dqd: f64) -> Result<Self, LdiError> {
        let n = q_e.len();
        Self::new(
            q_e,
            DVector::from_element(n, dq),
            DVector::from_element(n, dqd),
        )
    }

    pub fn n(&self) -> usize {
        self.q_e.len()
    }

    pub fn contains(&self, s: &JointState) -> bool {
        let tol = 1.0 + 1e-12;
        (0..self.n()).all(|i| {
            (s.q[i] - self.q_e[i]).abs() <= self.dq_max[i] * tol
                && s.qd[i].abs() <= self.dqd_max[i] * tol
        })
    }

    /// Maps a point of `[-1, 1]^{2n}` into the box.
    fn at(&self, unit: &[f64]) -> JointState {
        let n = self.n();
        let q = DVector::from_fn(n, |i, _| self.q_e[i] + unit[i] * self.dq_max[i]);
        let qd = DVector::from_fn(n, |i, _| unit[n + i] * self.dqd_max[i]);
        JointState::new(q, qd)
    }
}

/// One uncertain term `nominal + (σ·left)·Δ·right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainTerm {
    pub nominal: DMatrix<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub sigma: f64,
}

impl UncertainTerm {
    /// Left uncertainty factor (`A₂`, `B₂`, `J₂`).
    pub fn factor_left(&self) -> DMatrix<f64> {
        &self.left * self.sigma
    }

    /// Right uncertainty factor (`A₃`, `B₃`, `J₃`).
    pub fn factor_right(&self) -> DMatrix<f64> {
        self.right.clone()
    }

    pub fn weighted_residual(&self, value: &DMatrix<f64>) -> f64 {
        let left_inv = self
            .left
            .clone()
            .try_inverse()
            .expect("weight is invertible");
        let right_inv = self
            .right
            .clone()
            .try_inverse()
            .expect("weight is invertible");
        spectral_norm(&(left_inv * (value - &self.nominal) * right_inv))
    }

    pub fn includes(&self, value: &DMatrix<f64>) -> bool {
        self.weighted_residual(value) <= self.sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdiModel {
    /// Covers `−M⁻¹(q)·C(q, q̇)`.
    pub drift: UncertainTerm,
    /// Covers `M⁻¹(q)`.
    pub torque_input: UncertainTerm,
    /// Covers `M⁻¹(q)·Jᵀ(q)`.
    pub force_input: UncertainTerm,
    /// Covers `J(q)`.
    pub jacobian: UncertainTerm,
    pub state_box: StateBox,
    pub margin: f64,
}

/// Exact values of the four covered terms at one state.
#[derive(Debug, Clone)]
pub struct TermValues {
    pub drift: DMatrix<f64>,
    pub torque_input: DMatrix<f64>,
    pub force_input: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
}

pub fn term_values(model: &RobotModel, s: &JointState) -> TermValues {
    let m_inv = model
        .inertia(&s.q)
        .try_inverse()
        .expect("point-mass inertia is positive definite");
    let jac = model.jacobian(&s.q);
    let c = model.coriolis(&s.q, &s.qd);
    TermValues {
        drift: -(&m_inv * c),
        force_input: &m_inv * jac.transpose(),
        torque_input: m_inv,
        jacobian: jac,
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
        .sqrt()
}

pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Seeded samples inside the box: the center first, then the `2·2n` face
/// centers, then the `2^{2n}` corners, then uniform draws. The list is
/// truncated to `count`.
pub fn sample_domain(b: &StateBox, count: usize, seed: u64) -> Vec<JointState> {
    let dim = 2 * b.n();
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(count);
    units.push(vec![0.0; dim]);
    for axis in 0..dim {
        for sign in [-1.0, 1.0] {
            let mut u = vec![0.0; dim];
            u[axis] = sign;
            units.push(u);
        }
    }
    if dim < 16 {
        for mask in 0..(1usize << dim) {
            units.push(
                (0..dim)
                    .map(|k| if mask >> k & 1 == 1 { 1.0 } else { -1.0 })
                    .collect(),
            );
        }
    }
    units.truncate(count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while units.len() < count {
        units.push((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect());
    }
    units.iter().map(|u| b.at(u)).collect()
}

/// Uniform samples only (no structured points), used for independent
/// soundness checks.
pub fn sample_uniform(b: &StateBox, count: usize, seed: u64) -> Vec<JointState> {
    let dim = 2 * b.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            b.at(&u)
        })
        .collect()
}

pub fn fit_norm_bound(
    model: &RobotModel,
    state_box: &StateBox,
    samples: &[JointState],
    margin: f64,
    exec: Execution,
) -> Result<LdiModel, LdiError> {
    if samples.is_empty() {
        return Err(LdiError::NoSamples);
    }
    for (index, s) in samples.iter().enumerate() {
        let det = model.jacobian_det(&s.q);
        if det.abs() < SINGULARITY_THRESHOLD {
            return Err(LdiError::SingularSample { index, det });
        }
    }
    let center = JointState::at_rest(state_box.q_e.clone());
    let nominal = term_values(model, &center);
    let n = model.n();
    let whitening = sqrt_spd(&nominal.torque_input);
    let eye_n = DMatrix::identity(n, n);
    let eye_2 = DMatrix::identity(2, 2);

    let unit = |nominal: &DMatrix<f64>, left: &DMatrix<f64>, right: &DMatrix<f64>| UncertainTerm {
        nominal: nominal.clone(),
        left: left.clone(),
        right: right.clone(),
        sigma: 1.0,
    };
    let mut drift = unit(&nominal.drift, &whitening, &eye_n);
    let mut torque_input = unit(&nominal.torque_input, &whitening, &whitening);
    let mut force_input = unit(&nominal.force_input, &whitening, &eye_2);
    let mut jacobian = unit(&nominal.jacobian, &eye_2, &eye_n);

    let residuals = exec.map(samples, |s| {
        let v = term_values(model, s);
        [
            drift.weighted_residual(&v.drift),
            torque_input.weighted_residual(&v.torque_input),
            force_input.weighted_residual(&v.force_input),
            jacobian.weighted_residual(&v.jacobian),
        ]
    });
    let mut worst = [0.0_f64; 4];
    for r in &residuals {
        for k in 0..4 {
            worst[k] = worst[k].max(r[k]);
        }
    }
    let inflate = 1.0 + margin;
    drift.sigma = worst[0] * inflate;
    torque_input.sigma = worst[1] * inflate;
    force_input.sigma = worst[2] * inflate;
    jacobian.sigma = worst[3] * inflate;

    Ok(LdiModel {
        drift,
        torque_input,
        force_input,
        jacobian,
        state_box: state_box.clone(),
        margin,
    })
}

pub fn inclusion_check(
    ldi: &LdiModel,
    model: &RobotModel,
    s: &JointState,
) -> Result<bool, LdiError> {
    if !ldi.state_box.contains(s) {
        return Err(LdiError::OutsideBox);
    }
    let v = term_values(model, s);
    Ok(ldi.drift.includes(&v.drift)
        && ldi.torque_input.includes(&v.torque_input)
        && ldi.force_input.includes(&v.force_input)
        && ldi.jacobian.includes(&v.jacobian))
}

/// Outcome of [`fit_and_validate`].
#[derive(Debug, Clone)]
pub struct ValidatedFit {
    pub ldi: LdiModel,
    /// Fraction of fresh samples included by the first fit.
    pub first_pass_rate: f64,
    /// Number of fresh samples that forced the refit.
    pub violators: usize,
}

/// Fits on `fit_count` structured samples, checks `check_count` fresh uniform
/// samples, and refits once with any violators added.
pub fn fit_and_validate(
    model: &RobotModel,
    state_box: &StateBox,
    fit_count: usize,
    check_count: usize,
    margin: f64,
    seed: u64,
    exec: Execution,
) -> Result<ValidatedFit, LdiError> {
    let mut samples = sample_domain(state_box, fit_count, seed);
    let ldi = fit_norm_bound(model, state_box, &samples, margin, exec)?;
    let fresh = sample_uniform(state_box, check_count, seed ^ 0x9e37_79b9_7f4a_7c15);
    let verdicts = exec.map(&fresh, |s| inclusion_check(&ldi, model, s).unwrap_or(false));
    let violating: Vec<JointState> = fresh
        .iter()
        .zip(&verdicts)
        .filter(|(_, ok)| !**ok)
        .map(|(s, _)| s.clone())
        .collect();
    let first_pass_rate = 1.0 - violating.len() as f64 / check_count.max(1) as f64;
    if violating.is_empty() {
        return Ok(ValidatedFit {
            ldi,
            first_pass_rate,
            violators: 0,
        });
    }
    let violators = violating.len();
    samples.extend(violating);
    let ldi = fit_norm_bound(model, state_box, &samples, margin, exec)?;
    Ok(ValidatedFit {
        ldi,
        first_pass_rate,
        violators,
    })
}
