//! Semidefinite programs with an optional log-determinant objective.
//!
//! The problem is
//!
//! ```text
//! minimize    cᵀx − Σ_{b ∈ D} log det F_b(x)
//! subject to  F_b(x) = F_b0 + Σ_k x_k F_bk ≻ 0   for every block b
//! ```
//!
//! where `D` is a subset of the blocks. [`BarrierSolver`] is a primal
//! log-barrier interior-point method: a phase-I problem (`F_b(x) + sI ≻ 0`,
//! minimize `s`) finds a strictly feasible start or proves infeasibility, and
//! phase II follows the central path with damped Newton steps. Every iterate
//! is strictly feasible, so a returned point satisfies each block with a
//! positive minimum eigenvalue.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("problem is infeasible (phase-I lower bound {lower_bound:.3e})")]
    Infeasible { lower_bound: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One affine matrix inequality `F0 + Σ x_k F_k ≻ 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub label: String,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (k, fk) in &self.terms {
            f += fk * x[*k];
        }
        f
    }

    pub fn min_eigenvalue(&self, x: &[f64]) -> f64 {
        min_eigenvalue(&self.eval(x))
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub n_vars: usize,
    pub blocks: Vec<LmiBlock>,
    pub cost: Vec<f64>,
    /// Blocks whose log-determinant is maximized.
    pub logdet_blocks: Vec<usize>,
}

impl SdpProblem {
    pub fn validate(&self) -> Result<(), SdpError> {
        if self.cost.len() != self.n_vars {
            return Err(SdpError::InvalidProblem(
                "cost length differs from variable count".into(),
            ));
        }
        for b in &self.blocks {
            if !b.constant.is_square() {
                return Err(SdpError::InvalidProblem(format!(
                    "block {} is not square",
                    b.label
                )));
            }
            for (k, fk) in &b.terms {
                if *k >= self.n_vars || fk.shape() != b.constant.shape() {
                    return Err(SdpError::InvalidProblem(format!(
                        "bad term in block {}",
                        b.label
                    )));
                }
            }
        }
        if self.logdet_blocks.iter().any(|b| *b >= self.blocks.len()) {
            return Err(SdpError::InvalidProblem(
                "logdet block index out of range".into(),
            ));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.cost.iter().zip(x).map(|(c, v)| c * v).sum();
        let logdet: f64 = self
            .logdet_blocks
            .iter()
            .map(|b| log_det_pd(&self.blocks[*b].eval(x)).unwrap_or(f64::NEG_INFINITY))
            .sum();
        lin - logdet
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_slack(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.min_eigenvalue(x))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Strictly feasible, but the gap target was not reached.
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SdpStatus,
    pub gap_bound: f64,
    pub newton_steps: usize,
}

/// Backend contract used by synthesis.
pub trait SdpBackend: Send + Sync {
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution, SdpError>;

    /// A strictly feasible point, without optimizing the objective.
    fn find_feasible(&self, problem: &SdpProblem) -> Result<Vec<f64>, SdpError>;
}

#[derive(Debug, Clone)]
pub struct BarrierSolver {
    /// Relative duality-gap target for phase II.
    pub gap_tol: f64,
    /// Phase-I slack below which a point counts as strictly feasible.
    pub feas_tol: f64,
    /// Central-path parameter growth per outer iteration.
    pub growth: f64,
    pub max_newton: usize,
    /// Every variable is confined to `[-var_bound, var_bound]`.
    pub var_bound: f64,
}

impl Default for BarrierSolver {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            growth: 12.0,
            max_newton: 2000,
            var_bound: 1e6,
        }
    }
}

fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let ch = Cholesky::new(m.clone())?;
    Some(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `ψ(x) = costᵀx − Σ_b weight_b · log det F_b(x)`.
struct Barrier<'a> {
    blocks: &'a [LmiBlock],
    weights: Vec<f64>,
    cost: Vec<f64>,
}

impl Barrier<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let mut v: f64 = self.cost.iter().zip(x).map(|(c, xi)| c * xi).sum();
        for (b, w) in self.blocks.iter().zip(&self.weights) {
            v -= w * log_det_pd(&b.eval(x))?;
        }
        Some(v)
    }

    fn grad_hess(&self, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = x.len();
        let mut g = DVector::from_column_slice(&self.cost);
        let mut h = DMatrix::zeros(n, n);
        for (b, w) in self.blocks.iter().zip(&self.weights) {
            let ch: Cholesky<f64, Dyn> = Cholesky::new(b.eval(x))?;
            let l = ch.l();
            let scaled: Vec<(usize, DMatrix<f64>)> = b
                .terms
                .iter()
                .map(|(k, fk)| {
                    let a = l
                        .solve_lower_triangular(fk)
                        .expect("cholesky factor is nonsingular");
                    let wk = l
                        .solve_lower_triangular(&a.transpose())
                        .expect("cholesky factor is nonsingular");
                    (*k, wk)
                })
                .collect();
            for (i, (ki, wi)) in scaled.iter().enumerate() {
                g[*ki] -= w * wi.trace();
                for (kj, wj) in scaled.iter().skip(i) {
                    let v = w * wi.dot(wj);
                    h[(*ki, *kj)] += v;
                    if ki != kj {
                        h[(*kj, *ki)] += v;
                    }
                }
            }
        }
        Some((g, h))
    }
}

struct CenteringOutcome {
    x: Vec<f64>,
    steps: usize,
    converged: bool,
}

impl BarrierSolver {
    fn bounded_blocks(&self, problem: &SdpProblem) -> Vec<LmiBlock> {
        let mut blocks = problem.blocks.clone();
        for k in 0..problem.n_vars {
            for sign in [1.0, -1.0] {
                blocks.push(LmiBlock {
                    label: format!("bound[{k}]"),
                    constant: DMatrix::from_element(1, 1, self.var_bound),
                    terms: vec![(k, DMatrix::from_element(1, 1, -sign))],
                });
            }
        }
        blocks
    }

    /// Damped Newton minimization of the barrier from a strictly feasible
    /// start. `stop` is polled after each accepted step.
    fn center(
        &self,
        barrier: &Barrier,
        x0: Vec<f64>,
        budget: usize,
        mut stop: impl FnMut(&[f64]) -> bool,
    ) -> Result<CenteringOutcome, SdpError> {
        let mut x = x0;
        let mut steps = 0;
        let mut stalled = 0;
        while steps < budget {
            let (g, h) = barrier
                .grad_hess(&x)
                .ok_or_else(|| SdpError::Numerical("iterate left the feasible set".into()))?;
            let dx = newton_direction(&h, &g)?;
            let slope = g.dot(&dx);
            let decrement = -slope;
            if decrement * 0.5 <= 1e-11 {
                return Ok(CenteringOutcome {
                    x,
                    steps,
                    converged: true,
                });
            }
            let f0 = barrier
                .value(&x)
                .ok_or_else(|| SdpError::Numerical("iterate left the feasible set".into()))?;
            let mut s = 1.0;
            let mut accepted = None;
            while s > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + s * d).collect();
                if let Some(f1) = barrier.value(&trial) {
                    if f1 <= f0 + 0.25 * s * slope {
                        accepted = Some((trial, f1));
                        break;
                    }
                }
                s *= 0.5;
            }
            steps += 1;
            match accepted {
                Some((next, f1)) => {
                    x = next;
                    // progress below working precision counts as centered
                    if f0 - f1 <= 1e-13 * f0.abs().max(1.0) {
                        stalled += 1;
                        if stalled >= 3 {
                            return Ok(CenteringOutcome {
                                x,
                                steps,
                                converged: true,
                            });
                        }
                    } else {
                        stalled = 0;
                    }
                }
                // No descent possible at working precision: treat as centered.
                None => {
                    return Ok(CenteringOutcome {
                        x,
                        steps,
                        converged: false,
                    })
                }
            }
            if stop(&x) {
                return Ok(CenteringOutcome {
                    x,
                    steps,
                    converged: false,
                });
            }
        }
        Ok(CenteringOutcome {
            x,
            steps,
            converged: false,
        })
    }

    fn phase_one(
        &self,
        problem: &SdpProblem,
        blocks: &[LmiBlock],
    ) -> Result<(Vec<f64>, usize), SdpError> {
        let n = problem.n_vars;
        let x0 = vec![0.0; n];
        let worst = blocks
            .iter()
            .map(|b| b.min_eigenvalue(&x0))
            .fold(f64::INFINITY, f64::min);
        if worst > self.feas_tol {
            return Ok((x0, 0));
        }
        let mut lifted: Vec<LmiBlock> = blocks
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.terms.push((n, DMatrix::identity(b.dim(), b.dim())));
                b
            })
            .collect();
        // s > -1 keeps phase I bounded below.
        lifted.push(LmiBlock {
            label: "slack floor".into(),
            constant: DMatrix::from_element(1, 1, 1.0),
            terms: vec![(n, DMatrix::from_element(1, 1, 1.0))],
        });
        let total_dim: f64 = lifted.iter().map(|b| b.dim() as f64).sum();
        let mut x = x0;
        x.push(-worst + 1.0);
        let mut t = 1.0;
        let mut steps = 0;
        let target = -self.feas_tol.max(1e-7);
        loop {
            let mut cost = vec![0.0; n + 1];
            cost[n] = t;
            let barrier = Barrier {
                blocks: &lifted,
                weights: vec![1.0; lifted.len()],
                cost,
            };
            let out = self.center(&barrier, x, self.max_newton.saturating_sub(steps), |xs| {
                xs[n] < target
            })?;
            steps += out.steps;
            x = out.x;
            let s = x[n];
            if s < target || (s < 0.0 && out.converged && total_dim / t < 1e-9) {
                x.truncate(n);
                return Ok((x, steps));
            }
            // s* ≥ s − m/t on the central path
            let lower = s - total_dim / t;
            if out.converged && lower > 0.0 {
                return Err(SdpError::Infeasible { lower_bound: lower });
            }
            if total_dim / t < 1e-10 || steps >= self.max_newton {
                if s < 0.0 {
                    x.truncate(n);
                    return Ok((x, steps));
                }
                return Err(SdpError::Infeasible {
                    lower_bound: lower.max(0.0),
                });
            }
            t *= self.growth;
        }
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>, SdpError> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Ok(-ch.solve(g));
    }
    let scale = h
        .diagonal()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..20 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(hr) {
            return Ok(-ch.solve(g));
        }
        reg *= 100.0;
    }
    Err(SdpError::Numerical(
        "Newton system is not positive definite".into(),
    ))
}

impl SdpBackend for BarrierSolver {
    fn find_feasible(&self, problem: &SdpProblem) -> Result<Vec<f64>, SdpError> {
        problem.validate()?;
        let blocks = self.bounded_blocks(problem);
        self.phase_one(problem, &blocks).map(|(x, _)| x)
    }

    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution, SdpError> {
        problem.validate()?;
        let blocks = self.bounded_blocks(problem);
        let (mut x, mut steps) = self.phase_one(problem, &blocks)?;
        let total_dim: f64 = blocks.iter().map(|b| b.dim() as f64).sum();
        let mut t = 1.0;
        loop {
            let mut weights = vec![1.0; blocks.len()];
            for b in &problem.logdet_blocks {
                weights[*b] += t;
            }
            let cost = problem.cost.iter().map(|c| c * t).collect();
            let barrier = Barrier {
                blocks: &blocks,
                weights,
                cost,
            };
            let out = self.center(&barrier, x, self.max_newton.saturating_sub(steps), |_| {
                false
            })?;
            steps += out.steps;
            x = out.x;
            let objective = problem.objective(&x);
            let gap = total_dim / t;
            if gap <= self.gap_tol * objective.abs().max(1.0) {
                return Ok(SdpSolution {
                    x,
                    objective,
                    status: SdpStatus::Optimal,
                    gap_bound: gap,
                    newton_steps: steps,
                });
            }
            if steps >= self.max_newton || (!out.converged && t > 1e6) {
                return Ok(SdpSolution {
                    x,
                    objective,
                    status: SdpStatus::Inaccurate,
                    gap_bound: gap,
                    newton_steps: steps,
                });
            }
            t *= self.growth;
        }
    }
}
