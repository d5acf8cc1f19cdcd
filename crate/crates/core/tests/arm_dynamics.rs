use bpguard_core::arm::{wrap_angle, ElbowBranch, JointState, RobotModel, SINGULARITY_THRESHOLD};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn random_q(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_vec(vec![rng.random_range(-PI..PI), rng.random_range(-PI..PI)])
}

// Point-mass positions written out by hand, independent of the model code.
fn mass_positions(q: &[f64]) -> [Vector2<f64>; 2] {
    let l = 0.75;
    let p1 = Vector2::new(l * q[0].cos(), l * q[0].sin());
    let p2 = p1 + Vector2::new(l * (q[0] + q[1]).cos(), l * (q[0] + q[1]).sin());
    [p1, p2]
}

/// `M_ij = Σ m_k ∂p_k/∂q_i · ∂p_k/∂q_j` with central differences of the
/// mass positions.
fn inertia_from_positions(q: &[f64]) -> DMatrix<f64> {
    let h = 1e-6;
    let mut grads = [[Vector2::zeros(); 2]; 2];
    for i in 0..2 {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += h;
        qm[i] -= h;
        let (pp, pm) = (mass_positions(&qp), mass_positions(&qm));
        for k in 0..2 {
            grads[k][i] = (pp[k] - pm[k]) / (2.0 * h);
        }
    }
    DMatrix::from_fn(2, 2, |i, j| {
        (0..2).map(|k| 2.5 * grads[k][i].dot(&grads[k][j])).sum()
    })
}

#[test]
fn inertia_symmetric_positive_definite() {
    let model = RobotModel::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let q = random_q(&mut rng);
        let m = model.inertia(&q);
        assert!((&m - m.transpose()).amax() < 1e-14);
        let eig = m.symmetric_eigen().eigenvalues;
        assert!(eig.min() > 0.0, "q = {q:?}, eigenvalues {eig:?}");
    }
}

#[test]
fn inertia_matches_point_mass_kinematics() {
    let model = RobotModel::reference();
    let m0 = model.inertia(&DVector::from_vec(vec![0.0, 0.0]));
    assert!((m0[(0, 0)] - 7.03125).abs() < 1e-12);
    assert!((inertia_from_positions(&[0.0, 0.0])[(0, 0)] - 7.03125).abs() < 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let q = random_q(&mut rng);
        let diff = model.inertia(&q) - inertia_from_positions(q.as_slice());
        assert!(diff.amax() < 1e-7, "q = {q:?}");
    }
}

#[test]
fn coriolis_skew_symmetry() {
    let model = RobotModel::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-3;
    for _ in 0..10_000 {
        let q = random_q(&mut rng);
        let qd = DVector::from_vec(vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ]);
        // fourth-order central difference of M along q̇
        let m_at = |s: f64| model.inertia(&(&q + &qd * s));
        let m_dot = (m_at(-2.0 * h) - m_at(-h) * 8.0 + m_at(h) * 8.0 - m_at(2.0 * h)) / (12.0 * h);
        let n = m_dot - model.coriolis(&q, &qd) * 2.0;
        let sym = &n + n.transpose();
        assert!(
            sym.norm() < 1e-9,
            "q = {q:?}, qd = {qd:?}, residual {}",
            sym.norm()
        );
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let model = RobotModel::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    for _ in 0..1000 {
        let q = random_q(&mut rng);
        let jac = model.jacobian(&q);
        for i in 0..2 {
            let mut e = DVector::zeros(2);
            e[i] = h;
            let col = (model.forward_kinematics(&(&q + &e)) - model.forward_kinematics(&(&q - &e)))
                / (2.0 * h);
            for r in 0..2 {
                assert!((jac[(r, i)] - col[r]).abs() < 1e-6);
            }
        }
        let det = jac[(0, 0)] * jac[(1, 1)] - jac[(0, 1)] * jac[(1, 0)];
        assert!((model.jacobian_det(&q) - det).abs() < 1e-12);
    }
}

#[test]
fn linearization_matches_finite_differences() {
    let model = RobotModel::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let field = |x: &DVector<f64>, u: &DVector<f64>, w: &Vector2<f64>| -> DVector<f64> {
        let s = JointState::new(x.rows(0, 2).into_owned(), x.rows(2, 2).into_owned());
        let acc = model.acceleration(&s, u, w);
        DVector::from_vec(vec![s.qd[0], s.qd[1], acc[0], acc[1]])
    };
    let mut checked = 0;
    while checked < 200 {
        let q_e = random_q(&mut rng);
        if model.jacobian_det(&q_e).abs() < SINGULARITY_THRESHOLD {
            continue;
        }
        checked += 1;
        let lin = model.linearize(&q_e).unwrap();
        let x0 = DVector::from_vec(vec![q_e[0], q_e[1], 0.0, 0.0]);
        let u0 = DVector::zeros(2);
        let w0 = Vector2::zeros();
        for j in 0..4 {
            let mut e = DVector::zeros(4);
            e[j] = h;
            let col = (field(&(&x0 + &e), &u0, &w0) - field(&(&x0 - &e), &u0, &w0)) / (2.0 * h);
            for i in 0..4 {
                assert!(
                    (lin.a[(i, j)] - col[i]).abs() < 1e-5,
                    "A[{i},{j}] at {q_e:?}"
                );
            }
        }
        for j in 0..2 {
            let mut e = DVector::zeros(2);
            e[j] = h;
            let col = (field(&x0, &(&u0 + &e), &w0) - field(&x0, &(&u0 - &e), &w0)) / (2.0 * h);
            let mut ew = Vector2::zeros();
            ew[j] = h;
            let wcol = (field(&x0, &u0, &(w0 + ew)) - field(&x0, &u0, &(w0 - ew))) / (2.0 * h);
            for i in 0..4 {
                assert!((lin.b_u[(i, j)] - col[i]).abs() < 1e-5, "B_u[{i},{j}]");
                assert!((lin.b_w[(i, j)] - wcol[i]).abs() < 1e-5, "B_w[{i},{j}]");
            }
        }
        assert_eq!(lin.c_x.columns(0, 2).into_owned(), model.jacobian(&q_e));
        assert!(lin.c_x.columns(2, 2).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn inverse_kinematics_round_trip() {
    let model = RobotModel::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    while checked < 1000 {
        let q = random_q(&mut rng);
        if model.jacobian_det(&q).abs() < SINGULARITY_THRESHOLD {
            continue;
        }
        checked += 1;
        let branch = if q[1] > 0.0 {
            ElbowBranch::Down
        } else {
            ElbowBranch::Up
        };
        let back = model
            .inverse_kinematics(&model.forward_kinematics(&q), branch)
            .unwrap();
        for i in 0..2 {
            assert!(
                wrap_angle(back[i] - q[i]).abs() < 1e-9,
                "q = {q:?}, back = {back:?}"
            );
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let model = RobotModel::reference();
    let u = DVector::from_vec(vec![3.0, -1.5]);
    let w = Vector2::new(0.5, 0.2);
    let s0 = JointState::new(
        DVector::from_vec(vec![0.2, 1.1]),
        DVector::from_vec(vec![0.5, -0.3]),
    );
    let run = |dt: f64| {
        let steps = (0.8 / dt).round() as usize;
        let mut s = s0.clone();
        for _ in 0..steps {
            s = model.step(&s, &u, &w, dt).unwrap();
        }
        s
    };
    let dist = |a: &JointState, b: &JointState| {
        ((&a.q - &b.q).norm_squared() + (&a.qd - &b.qd).norm_squared()).sqrt()
    };
    let (s1, s2, s4) = (run(0.01), run(0.005), run(0.0025));
    let ratio = dist(&s1, &s2) / dist(&s2, &s4);
    assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
}

#[test]
fn near_singular_equilibria_rejected() {
    let model = RobotModel::reference();
    assert!(model.linearize(&DVector::from_vec(vec![0.3, 0.0])).is_err());
    assert!(model.linearize(&DVector::from_vec(vec![0.3, PI])).is_err());
    assert!(model
        .inverse_kinematics(&Vector2::new(2.0, 0.0), ElbowBranch::Down)
        .is_err());
}
