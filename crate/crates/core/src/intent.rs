//! Boltzmann-rational force model and Bayesian belief over target regions.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Forces weaker than this (N) carry no information and are skipped.
pub const ACTIVITY_THRESHOLD: f64 = 0.05;
pub const DEFAULT_BETA1: f64 = 1.0;
pub const DEFAULT_SWITCH_MARGIN: f64 = 0.1;

const RADIAL_NODES: usize = 64;
const ANGULAR_NODES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntentError {
    #[error("posterior mass vanished")]
    DegenerateBelief,
    #[error("belief needs at least one candidate")]
    NoCandidates,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub candidates: Vec<String>,
    pub probs: Vec<f64>,
    pub beta1: f64,
    pub updates: u64,
}

impl BeliefState {
    pub fn uniform(candidates: Vec<String>, beta1: f64) -> Result<Self, IntentError> {
        if candidates.is_empty() {
            return Err(IntentError::NoCandidates);
        }
        if !(beta1 >= 0.0 && beta1.is_finite()) {
            return Err(IntentError::Invalid(format!(
                "beta1 must be finite and non-negative, got {beta1}"
            )));
        }
        let p = 1.0 / candidates.len() as f64;
        Ok(Self {
            probs: vec![p; candidates.len()],
            candidates,
            beta1,
            updates: 0,
        })
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c == id)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn radial_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(RADIAL_NODES))
}

/// Polar quadrature of `∫_{‖w‖≤w̄} exp(β₁⟨w, d⟩) dw` with `n_r` Gauss–Legendre
/// radii and `n_theta` equally spaced angles.
pub fn partition_with(
    d_norm: f64,
    beta1: f64,
    w_bar: f64,
    radial: &(Vec<f64>, Vec<f64>),
    n_theta: usize,
) -> f64 {
    let k = beta1 * d_norm;
    if k == 0.0 {
        return PI * w_bar * w_bar;
    }
    let (nodes, weights) = radial;
    let dtheta = 2.0 * PI / n_theta as f64;
    let mut total = 0.0;
    for (x, wr) in nodes.iter().zip(weights) {
        let r = 0.5 * w_bar * (x + 1.0);
        let ring: f64 = (0..n_theta)
            .map(|j| (k * r * (j as f64 * dtheta).cos()).exp())
            .sum::<f64>()
            * dtheta;
        total += wr * r * ring;
    }
    0.5 * w_bar * total
}

/// Normalizer `β₀⁻¹` of the force likelihood for a candidate centered at `x_a`.
pub fn partition(x_t: &Vector2<f64>, x_a: &Vector2<f64>, beta1: f64, w_bar: f64) -> f64 {
    partition_with(
        (x_a - x_t).norm(),
        beta1,
        w_bar,
        radial_rule(),
        ANGULAR_NODES,
    )
}

fn clamp_force(w: &Vector2<f64>, w_bar: f64) -> Vector2<f64> {
    let n = w.norm();
    if n > w_bar {
        w * (w_bar / n)
    } else {
        *w
    }
}

/// Density of measuring force `w_t` when the target is centered at `x_a`.
pub fn likelihood(
    w_t: &Vector2<f64>,
    x_t: &Vector2<f64>,
    x_a: &Vector2<f64>,
    beta1: f64,
    w_bar: f64,
) -> f64 {
    let w = clamp_force(w_t, w_bar);
    (beta1 * w.dot(&(x_a - x_t))).exp() / partition(x_t, x_a, beta1, w_bar)
}

/// Bayes update with candidate centers in the same order as
/// `b.candidates`. Sub-threshold forces leave the belief untouched.
pub fn update_belief(
    b: &BeliefState,
    w_t: &Vector2<f64>,
    x_t: &Vector2<f64>,
    centers: &[Vector2<f64>],
    w_bar: f64,
) -> Result<BeliefState, IntentError> {
    update_belief_with_threshold(b, w_t, x_t, centers, w_bar, ACTIVITY_THRESHOLD)
}

pub fn update_belief_with_threshold(
    b: &BeliefState,
    w_t: &Vector2<f64>,
    x_t: &Vector2<f64>,
    centers: &[Vector2<f64>],
    w_bar: f64,
    threshold: f64,
) -> Result<BeliefState, IntentError> {
    if centers.len() != b.candidates.len() {
        return Err(IntentError::Invalid(
            "one center per candidate is required".into(),
        ));
    }
    if w_t.norm() < threshold {
        return Ok(b.clone());
    }
    let lik: Vec<f64> = centers
        .iter()
        .map(|c| likelihood(w_t, x_t, c, b.beta1, w_bar))
        .collect();
    let posterior = posterior(&b.probs, &lik)?;
    Ok(BeliefState {
        probs: posterior,
        updates: b.updates + 1,
        ..b.clone()
    })
}

/// Normalized `prior × likelihood`. Likelihoods are rescaled by their maximum
/// first, so a common factor has no effect.
pub fn posterior(prior: &[f64], lik: &[f64]) -> Result<Vec<f64>, IntentError> {
    let top = lik.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0 && top.is_finite()) {
        return Err(IntentError::DegenerateBelief);
    }
    let raw: Vec<f64> = prior.iter().zip(lik).map(|(p, l)| p * (l / top)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(IntentError::DegenerateBelief);
    }
    Ok(raw.iter().map(|v| v / total).collect())
}

/// Argmax with hysteresis: the current candidate is kept unless another one
/// beats it by more than `switch_margin`.
pub fn estimate_target(b: &BeliefState, current: usize, switch_margin: f64) -> usize {
    let best = b.argmax();
    if b.probs[best] <= b.probs[current] + switch_margin {
        current
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(64);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((m - 2.0 / 11.0).abs() < 1e-13);
        let (x, w) = gauss_legendre(5);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((m - 2.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn trivial_partitions() {
        let x = Vector2::new(0.3, 0.2);
        assert_eq!(partition(&x, &x, 1.0, 1.0), PI);
        assert_eq!(partition(&x, &Vector2::new(1.0, 1.0), 0.0, 2.0), 4.0 * PI);
    }

    #[test]
    fn bayes_arithmetic() {
        let p = posterior(&[0.5, 0.5], &[2.0, 1.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            posterior(&[0.5, 0.5], &[0.0, 0.0]),
            Err(IntentError::DegenerateBelief)
        );
    }

    #[test]
    fn hysteresis() {
        let mut b = BeliefState::uniform(vec!["a".into(), "b".into(), "c".into()], 1.0).unwrap();
        assert_eq!(estimate_target(&b, 2, 0.1), 2);
        b.probs = vec![0.1, 0.8, 0.1];
        assert_eq!(estimate_target(&b, 0, 0.1), 1);
        b.probs = vec![0.34, 0.33, 0.33];
        assert_eq!(estimate_target(&b, 1, 0.1), 1);
        b.probs = vec![0.4, 0.4, 0.2];
        assert_eq!(b.argmax(), 0);
    }

    #[test]
    fn weak_force_is_ignored() {
        let b = BeliefState::uniform(vec!["a".into(), "b".into()], 1.0).unwrap();
        let centers = [Vector2::new(1.0, 0.0), Vector2::new(-1.0, 0.0)];
        let out = update_belief(
            &b,
            &Vector2::new(0.04, 0.0),
            &Vector2::zeros(),
            &centers,
            1.0,
        )
        .unwrap();
        assert_eq!(out, b);
        assert!(BeliefState::uniform(vec![], 1.0).is_err());
    }
}
