//! Barrier-pair synthesis.
//!
//! The LMIs are written in nondimensional coordinates: states are divided by
//! the joint-displacement and joint-velocity half-widths, torques by their
//! limits and the human force by its bound. Each uncertainty channel `(E, F)`
//! is balanced so that `‖E‖ = ‖F‖`, which only rescales its multiplier.
//! After solving, `Q = D Q' D` and `K = S_u K' D⁻¹`.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    ArmError, ElbowBranch, JointState, LinearizedPlant, RobotModel, SINGULARITY_THRESHOLD,
};
use crate::certify::CertReport;
use crate::ldi::{spectral_norm, LdiModel};
use crate::lmi::Affine;
use crate::regions::{ConstraintSet, Region, RegionError, Slab};
use crate::sdp::{min_eigenvalue, SdpBackend, SdpError, SdpProblem};

pub const MULTIPLIER_FLOOR: f64 = 1e-9;
pub const RESIDUAL_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scalar: {0}")]
    InvalidScalar(String),
    #[error("no feasible barrier pair for alpha in [{lo}, {hi}]")]
    Infeasible { lo: f64, hi: f64 },
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("solver failure: {0}")]
    Solver(SdpError),
    #[error("limits do not fit the LDI box: {0}")]
    BoxMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaPolicy {
    Fixed {
        value: f64,
    },
    /// Largest feasible α in `[lo, hi]` to within `resolution`.
    Bisect {
        lo: f64,
        hi: f64,
        resolution: f64,
    },
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Bisect {
            lo: 0.05,
            hi: 4.0,
            resolution: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub eps0: f64,
    pub alpha: AlphaPolicy,
    /// Points per region edge used in the containment LMIs.
    pub contain_per_edge: usize,
    pub branch: ElbowBranch,
    /// Optional upper bound `Q ⪯ bound` (physical units).
    pub shape_bound: Option<DMatrix<f64>>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            eps0: 0.15,
            alpha: AlphaPolicy::default(),
            contain_per_edge: 5,
            branch: ElbowBranch::Down,
            shape_bound: None,
        }
    }
}

/// Solver-side data kept with a pair so its LMIs can be rechecked.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthRecord {
    /// `μ_x, μ_u, μ_w`, then one `γ` per obstacle slab, then one per
    /// workspace axis (balanced, nondimensional).
    pub multipliers: Vec<f64>,
    /// Joint offsets `R(x_i) − q_e` of the containment samples.
    pub contain_offsets: Vec<DVector<f64>>,
    pub shape_bound: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierPair {
    pub id: usize,
    pub q_e: DVector<f64>,
    pub x_e: Vector2<f64>,
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub eps0: f64,
    pub alpha: f64,
    pub w_bar: f64,
    pub record: SynthRecord,
    pub cert: Option<CertReport>,
    q_inv: DMatrix<f64>,
}

impl BarrierPair {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        q_e: DVector<f64>,
        x_e: Vector2<f64>,
        q: DMatrix<f64>,
        k: DMatrix<f64>,
        eps0: f64,
        alpha: f64,
        w_bar: f64,
    ) -> Self {
        let q_inv = spd_inverse(&q);
        Self {
            id,
            q_e,
            x_e,
            q,
            k,
            eps0,
            alpha,
            w_bar,
            record: SynthRecord::default(),
            cert: None,
            q_inv,
        }
    }

    pub fn n(&self) -> usize {
        self.q_e.len()
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn offset(&self, s: &JointState) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                s.q[i] - self.q_e[i]
            } else {
                s.qd[i - n]
            }
        })
    }

    /// `‖z‖_Q = sqrt(zᵀQ⁻¹z)`.
    pub fn norm(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.q_inv * z)).max(0.0).sqrt()
    }

    /// `B = zᵀQ⁻¹z − 1`.
    pub fn barrier(&self, s: &JointState) -> f64 {
        let z = self.offset(s);
        z.dot(&(&self.q_inv * &z)) - 1.0
    }

    /// Norm of the zero-velocity lift `[q − q_e; 0]`.
    pub fn config_norm(&self, q: &DVector<f64>) -> f64 {
        let n = self.n();
        let z = DVector::from_fn(2 * n, |i, _| if i < n { q[i] - self.q_e[i] } else { 0.0 });
        self.norm(&z)
    }

    /// Unclamped feedback `K z`.
    pub fn feedback(&self, s: &JointState) -> DVector<f64> {
        &self.k * self.offset(s)
    }

    /// Joint-space projection `S₁ Q S₁ᵀ` of the zero sub-level set.
    pub fn joint_projection(&self) -> DMatrix<f64> {
        let n = self.n();
        self.q.view((0, 0), (n, n)).into_owned()
    }
}

fn spd_inverse(q: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (q + q.transpose()) * 0.5;
    match sym.clone().cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            (&inv + inv.transpose()) * 0.5
        }
        None => sym
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(q.nrows(), q.ncols(), f64::NAN)),
    }
}

/// Nondimensional, balanced problem data at one equilibrium.
#[derive(Debug, Clone)]
pub struct ScaledModel {
    pub n: usize,
    /// State scale `D` (diagonal).
    pub d: DVector<f64>,
    /// Torque scale `S_u` (diagonal).
    pub su: DVector<f64>,
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub ea: DMatrix<f64>,
    pub fa: DMatrix<f64>,
    pub eu: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub ew: DMatrix<f64>,
    pub fw: DMatrix<f64>,
    /// `J₁ S₁ D`
    pub j1: DMatrix<f64>,
    pub j2: DMatrix<f64>,
    /// `J₃ S₁ D`
    pub j3: DMatrix<f64>,
}

fn balance(e: DMatrix<f64>, f: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (ne, nf) = (spectral_norm(&e), spectral_norm(&f));
    if ne == 0.0 || nf == 0.0 {
        return (e * 0.0, f * 0.0);
    }
    let s = (nf / ne).sqrt();
    (e * s, f / s)
}

impl ScaledModel {
    pub fn new(
        plant: &LinearizedPlant,
        ldi: &LdiModel,
        cs: &ConstraintSet,
    ) -> Result<Self, SynthError> {
        let n = plant.q_e.len();
        let lim = &cs.limits;
        let b = &ldi.state_box;
        if (&b.q_e - &plant.q_e).amax() > 1e-12 {
            return Err(SynthError::BoxMismatch(
                "LDI box is centered elsewhere".into(),
            ));
        }
        let tol = 1.0 + 1e-12;
        for i in 0..n {
            if lim.dq_bounds[i] > b.dq_max[i] * tol || lim.qd_bounds[i] > b.dqd_max[i] * tol {
                return Err(SynthError::BoxMismatch(format!(
                    "joint {i} bounds exceed the LDI box"
                )));
            }
        }
        let d = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                lim.dq_bounds[i]
            } else {
                lim.qd_bounds[i - n]
            }
        });
        let su = lim.u_bounds.clone();
        let d_inv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
        let d_mat = DMatrix::from_diagonal(&d);
        let su_mat = DMatrix::from_diagonal(&su);
        let mut s1 = DMatrix::zeros(n, 2 * n);
        let mut s2 = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            s1[(i, i)] = 1.0;
            s2[(i, n + i)] = 1.0;
        }
        let lift = &d_inv * s2.transpose();
        let (ea, fa) = balance(
            &lift * ldi.drift.factor_left(),
            ldi.drift.factor_right() * &s2 * &d_mat,
        );
        let (eu, fu) = balance(
            &lift * ldi.torque_input.factor_left(),
            ldi.torque_input.factor_right() * &su_mat,
        );
        let (ew, fw) = balance(
            &lift * ldi.force_input.factor_left(),
            ldi.force_input.factor_right() * lim.w_bar,
        );
        let p1 = &s1 * &d_mat;
        let (j2, j3) = balance(
            ldi.jacobian.factor_left(),
            ldi.jacobian.factor_right() * &p1,
        );
        Ok(Self {
            n,
            a: &d_inv * &plant.a * &d_mat,
            bu: &d_inv * &plant.b_u * &su_mat,
            bw: &d_inv * &plant.b_w * lim.w_bar,
            ea,
            fa,
            eu,
            fu,
            ew,
            fw,
            j1: &ldi.jacobian.nominal * &p1,
            j2,
            j3,
            d,
            su,
        })
    }

    pub fn to_scaled_q(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let d_inv = DMatrix::from_diagonal(&self.d.map(|v| 1.0 / v));
        &d_inv * q * &d_inv
    }

    /// `Y' = S_u⁻¹ K Q D⁻¹`
    pub fn to_scaled_y(&self, k: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        let d_inv = DMatrix::from_diagonal(&self.d.map(|v| 1.0 / v));
        let su_inv = DMatrix::from_diagonal(&self.su.map(|v| 1.0 / v));
        su_inv * k * q * d_inv
    }
}

/// Variable indices of one synthesis problem.
#[derive(Debug, Clone)]
struct Layout {
    dim: usize,
    n: usize,
    q0: usize,
    y0: usize,
    mu0: usize,
    gamma0: usize,
    count: usize,
}

impl Layout {
    fn new(n: usize, gammas: usize) -> Self {
        let dim = 2 * n;
        let q0 = 0;
        let y0 = q0 + dim * (dim + 1) / 2;
        let mu0 = y0 + n * dim;
        let gamma0 = mu0 + 3;
        Self {
            dim,
            n,
            q0,
            y0,
            mu0,
            gamma0,
            count: gamma0 + gammas,
        }
    }

    fn q(&self) -> Affine {
        let mut out = Affine::zeros(self.dim, self.dim);
        let mut k = self.q0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let mut e = DMatrix::zeros(self.dim, self.dim);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                out = out.add(&Affine::var(k, e));
                k += 1;
            }
        }
        out
    }

    fn y(&self) -> Affine {
        let mut out = Affine::zeros(self.n, self.dim);
        for i in 0..self.n {
            for j in 0..self.dim {
                let mut e = DMatrix::zeros(self.n, self.dim);
                e[(i, j)] = 1.0;
                out = out.add(&Affine::var(self.y0 + i * self.dim + j, e));
            }
        }
        out
    }

    fn q_value(&self, x: &[f64]) -> DMatrix<f64> {
        self.q().eval(x)
    }

    fn y_value(&self, x: &[f64]) -> DMatrix<f64> {
        self.y().eval(x)
    }
}

fn konst(m: DMatrix<f64>) -> Affine {
    Affine::constant(m)
}

fn zero(r: usize, c: usize) -> Affine {
    Affine::zeros(r, c)
}

fn one() -> Affine {
    Affine::constant(DMatrix::identity(1, 1))
}

/// Row functional `c` (1×2) and its bound normalized to one.
struct SlabRow {
    label: String,
    c: DMatrix<f64>,
}

fn slab_rows(cs: &ConstraintSet) -> Vec<SlabRow> {
    let mut rows: Vec<SlabRow> = cs
        .slabs
        .iter()
        .map(|s: &Slab| SlabRow {
            label: format!("exclusion[{}]", s.region_id),
            c: DMatrix::from_row_slice(
                1,
                2,
                &[s.normal[0] / s.half_width, s.normal[1] / s.half_width],
            ),
        })
        .collect();
    for i in 0..cs.limits.x_bounds.len() {
        let mut c = DMatrix::zeros(1, 2);
        c[(0, i)] = 1.0 / cs.limits.x_bounds[i];
        rows.push(SlabRow {
            label: format!("workspace[{i}]"),
            c,
        });
    }
    rows
}

struct Assembly {
    problem: SdpProblem,
    layout: Layout,
}

fn assemble(
    sm: &ScaledModel,
    cs: &ConstraintSet,
    contain: &[DVector<f64>],
    shape_bound: Option<&DMatrix<f64>>,
    alpha: f64,
    eps0: f64,
) -> Assembly {
    let n = sm.n;
    let dim = 2 * n;
    let rows = slab_rows(cs);
    let layout = Layout::new(n, rows.len());
    let q = layout.q();
    let y = layout.y();
    let mut blocks = Vec::new();

    blocks.push(q.clone().into_lmi("Q"));
    for k in layout.mu0..layout.count {
        blocks.push(
            Affine::scalar_identity(k, 1)
                .add(&konst(DMatrix::from_element(1, 1, -MULTIPLIER_FLOOR)))
                .into_lmi(format!("multiplier[{k}]")),
        );
    }

    // robust decrease, written as −X ⪰ 0
    let (mu_x, mu_u, mu_w) = (layout.mu0, layout.mu0 + 1, layout.mu0 + 2);
    let ra = sm.fa.nrows();
    let ru = sm.fu.nrows();
    let rw = sm.fw.nrows();
    let nw = sm.bw.ncols();
    let aq = q.lmul(&sm.a);
    let buy = y.lmul(&sm.bu);
    let top = aq
        .add(&aq.transpose())
        .add(&buy)
        .add(&buy.transpose())
        .add(&q.scale(alpha))
        .add(&Affine::var(mu_x, &sm.ea * sm.ea.transpose()))
        .add(&Affine::var(mu_u, &sm.eu * sm.eu.transpose()))
        .add(&Affine::var(mu_w, &sm.ew * sm.ew.transpose()));
    let x = Affine::symmetric_blocks(&[
        vec![top],
        vec![
            konst(sm.bw.transpose()),
            konst(DMatrix::identity(nw, nw) * (-alpha * eps0 * eps0)),
        ],
        vec![
            q.lmul(&sm.fa),
            zero(ra, nw),
            Affine::scalar_identity(mu_x, ra).scale(-1.0),
        ],
        vec![
            y.lmul(&sm.fu),
            zero(ru, nw),
            zero(ru, ra),
            Affine::scalar_identity(mu_u, ru).scale(-1.0),
        ],
        vec![
            zero(rw, dim),
            konst(sm.fw.clone()),
            zero(rw, ra),
            zero(rw, ru),
            Affine::scalar_identity(mu_w, rw).scale(-1.0),
        ],
    ]);
    blocks.push(x.scale(-1.0).into_lmi("decrease"));

    // S-procedure slabs: obstacle exclusion and workspace box
    let rj = sm.j3.nrows();
    let jw = sm.j2.ncols();
    for (i, row) in rows.iter().enumerate() {
        let g = layout.gamma0 + i;
        let m = Affine::symmetric_blocks(&[
            vec![q.clone()],
            vec![zero(jw, dim), Affine::scalar_identity(g, jw)],
            vec![
                q.lmul(&(&row.c * &sm.j1)),
                Affine::var(g, &row.c * &sm.j2),
                one(),
            ],
            vec![
                q.lmul(&sm.j3),
                zero(rj, jw),
                zero(rj, 1),
                Affine::scalar_identity(g, rj),
            ],
        ]);
        blocks.push(m.into_lmi(row.label.clone()));
    }

    let bounded_row = |label: String, v: Affine| {
        Affine::symmetric_blocks(&[vec![q.clone()], vec![v, one()]]).into_lmi(label)
    };
    for i in 0..n {
        let e = |k: usize| {
            let mut r = DMatrix::zeros(1, dim);
            r[(0, k)] = 1.0;
            r
        };
        let mut eu = DMatrix::zeros(1, n);
        eu[(0, i)] = 1.0;
        blocks.push(bounded_row(format!("velocity[{i}]"), q.lmul(&e(n + i))));
        blocks.push(bounded_row(format!("joint[{i}]"), q.lmul(&e(i))));
        blocks.push(bounded_row(format!("torque[{i}]"), y.lmul(&eu)));
    }

    let mut s1 = DMatrix::zeros(n, dim);
    for i in 0..n {
        s1[(i, i)] = 1.0;
    }
    let q11 = q.lmul(&s1).rmul(&s1.transpose());
    for (i, off) in contain.iter().enumerate() {
        let scaled = DMatrix::from_fn(n, 1, |r, _| off[r] / sm.d[r]);
        blocks.push(
            Affine::symmetric_blocks(&[vec![one()], vec![konst(scaled), q11.clone()]])
                .into_lmi(format!("contain[{i}]")),
        );
    }

    if let Some(bound) = shape_bound {
        blocks.push(
            konst(sm.to_scaled_q(bound))
                .add(&q.scale(-1.0))
                .into_lmi("shape"),
        );
    }

    let problem = SdpProblem {
        n_vars: layout.count,
        blocks,
        cost: vec![0.0; layout.count],
        logdet_blocks: vec![0],
    };
    Assembly { problem, layout }
}

/// Joint offsets of the containment samples of `region`.
pub fn containment_offsets(
    model: &RobotModel,
    q_e: &DVector<f64>,
    region: &Region,
    per_edge: usize,
    branch: ElbowBranch,
) -> Result<Vec<DVector<f64>>, ArmError> {
    region
        .edge_samples(per_edge)
        .iter()
        .map(|p| model.inverse_kinematics(p, branch).map(|q| q - q_e))
        .collect()
}

fn validate_scalars(eps0: f64, policy: &AlphaPolicy) -> Result<(), SynthError> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(SynthError::InvalidScalar(format!(
            "eps0 = {eps0} must lie in (0, 1)"
        )));
    }
    let ok = match *policy {
        AlphaPolicy::Fixed { value } => value > 0.0 && value.is_finite(),
        AlphaPolicy::Bisect { lo, hi, resolution } => lo > 0.0 && hi >= lo && resolution > 0.0,
    };
    if !ok {
        return Err(SynthError::InvalidScalar(format!(
            "bad alpha policy {policy:?}"
        )));
    }
    Ok(())
}

/// Picks α per the policy using feasibility checks only.
fn choose_alpha(
    policy: AlphaPolicy,
    feasible: &mut dyn FnMut(f64) -> bool,
) -> Result<f64, SynthError> {
    match policy {
        AlphaPolicy::Fixed { value } => Ok(value),
        AlphaPolicy::Bisect { lo, hi, resolution } => {
            if feasible(hi) {
                return Ok(hi);
            }
            // the feasible α set is an interval that need not contain `lo`
            let mut low = None;
            if feasible(lo) {
                low = Some(lo);
            } else {
                let steps = 8;
                for k in (1..steps).rev() {
                    let a = lo + (hi - lo) * k as f64 / steps as f64;
                    if feasible(a) {
                        low = Some(a);
                        break;
                    }
                }
            }
            let mut low = low.ok_or(SynthError::Infeasible { lo, hi })?;
            let mut high = hi;
            while high - low > resolution {
                let mid = 0.5 * (low + high);
                if feasible(mid) {
                    low = mid;
                } else {
                    high = mid;
                }
            }
            Ok(low)
        }
    }
}

/// Solves the barrier-pair program at one equilibrium. `contain` adds the
/// region-containment LMIs; pass `None` for midway pairs.
pub fn synthesize(
    model: &RobotModel,
    plant: &LinearizedPlant,
    ldi: &LdiModel,
    contain: Option<&Region>,
    cs: &ConstraintSet,
    opts: &SynthOptions,
    backend: &dyn SdpBackend,
) -> Result<BarrierPair, SynthError> {
    validate_scalars(opts.eps0, &opts.alpha)?;
    let det = model.jacobian_det(&plant.q_e);
    if det.abs() < SINGULARITY_THRESHOLD {
        return Err(ArmError::NearSingular { det }.into());
    }
    cs.limits.validate()?;
    let sm = ScaledModel::new(plant, ldi, cs)?;
    let offsets = match contain {
        Some(r) => containment_offsets(model, &plant.q_e, r, opts.contain_per_edge, opts.branch)?,
        None => Vec::new(),
    };
    let build = |alpha: f64| {
        assemble(
            &sm,
            cs,
            &offsets,
            opts.shape_bound.as_ref(),
            alpha,
            opts.eps0,
        )
    };

    let mut feasible = |alpha: f64| backend.find_feasible(&build(alpha).problem).is_ok();
    let alpha = choose_alpha(opts.alpha, &mut feasible)?;
    let Assembly { problem, layout } = build(alpha);
    let sol = backend.solve(&problem).map_err(|e| match e {
        SdpError::Infeasible { .. } => SynthError::Infeasible {
            lo: alpha,
            hi: alpha,
        },
        other => SynthError::Solver(other),
    })?;

    let q_s = layout.q_value(&sol.x);
    let y_s = layout.y_value(&sol.x);
    let q_s_inv = spd_inverse(&q_s);
    let d = DMatrix::from_diagonal(&sm.d);
    let d_inv = DMatrix::from_diagonal(&sm.d.map(|v| 1.0 / v));
    let q = &d * &q_s * &d;
    let q = (&q + q.transpose()) * 0.5;
    let k = DMatrix::from_diagonal(&sm.su) * (&y_s * q_s_inv) * d_inv;

    let x_e = Vector2::new(plant.x_e[0], plant.x_e[1]);
    let mut bp = BarrierPair::new(
        0,
        plant.q_e.clone(),
        x_e,
        q,
        k,
        opts.eps0,
        alpha,
        cs.limits.w_bar,
    );
    bp.record = SynthRecord {
        multipliers: sol.x[layout.mu0..layout.count].to_vec(),
        contain_offsets: offsets,
        shape_bound: opts.shape_bound.clone(),
    };
    Ok(bp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiResidual {
    pub label: String,
    /// Smallest eigenvalue of the matrix that must be positive semidefinite.
    pub min_eig: f64,
}

fn stack(rows: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut m = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            m.view_mut((r0, c0), (heights[i], widths[j])).copy_from(b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    m
}

/// Recomputes every synthesis LMI from the pair's `Q`, `K` and stored
/// multipliers by direct numeric assembly (no solver data structures).
pub fn lmi_residuals(
    bp: &BarrierPair,
    plant: &LinearizedPlant,
    ldi: &LdiModel,
    cs: &ConstraintSet,
) -> Result<Vec<LmiResidual>, SynthError> {
    let sm = ScaledModel::new(plant, ldi, cs)?;
    let n = sm.n;
    let dim = 2 * n;
    let q = sm.to_scaled_q(&bp.q);
    let y = sm.to_scaled_y(&bp.k, &bp.q);
    let mus = &bp.record.multipliers;
    let z = DMatrix::<f64>::zeros;
    let eye = DMatrix::<f64>::identity;
    let mut out = vec![LmiResidual {
        label: "Q".into(),
        min_eig: min_eigenvalue(&q),
    }];
    for (i, m) in mus.iter().enumerate() {
        out.push(LmiResidual {
            label: format!("multiplier[{i}]"),
            min_eig: m - MULTIPLIER_FLOOR,
        });
    }

    let (mx, mu, mw) = (mus[0], mus[1], mus[2]);
    let nw = sm.bw.ncols();
    let (ra, ru, rw) = (sm.fa.nrows(), sm.fu.nrows(), sm.fw.nrows());
    let top = &sm.a * &q
        + &q * sm.a.transpose()
        + &sm.bu * &y
        + y.transpose() * sm.bu.transpose()
        + &q * bp.alpha
        + &sm.ea * sm.ea.transpose() * mx
        + &sm.eu * sm.eu.transpose() * mu
        + &sm.ew * sm.ew.transpose() * mw;
    let x11 = stack(&[
        vec![top, sm.bw.clone()],
        vec![
            sm.bw.transpose(),
            eye(nw, nw) * (-bp.alpha * bp.eps0 * bp.eps0),
        ],
    ]);
    let x21 = stack(&[
        vec![&sm.fa * &q, z(ra, nw)],
        vec![&sm.fu * &y, z(ru, nw)],
        vec![z(rw, dim), sm.fw.clone()],
    ]);
    let x22 = stack(&[
        vec![eye(ra, ra) * -mx, z(ra, ru), z(ra, rw)],
        vec![z(ru, ra), eye(ru, ru) * -mu, z(ru, rw)],
        vec![z(rw, ra), z(rw, ru), eye(rw, rw) * -mw],
    ]);
    let x = stack(&[vec![x11, x21.transpose()], vec![x21, x22]]);
    out.push(LmiResidual {
        label: "decrease".into(),
        min_eig: min_eigenvalue(&(-x)),
    });

    let rows = slab_rows(cs);
    let (rj, jw) = (sm.j3.nrows(), sm.j2.ncols());
    for (i, row) in rows.iter().enumerate() {
        let g = mus[3 + i];
        let c1 = &row.c * &sm.j1 * &q;
        let c2 = &row.c * &sm.j2 * g;
        let c3 = &sm.j3 * &q;
        let m = stack(&[
            vec![q.clone(), z(dim, jw), c1.transpose(), c3.transpose()],
            vec![z(jw, dim), eye(jw, jw) * g, c2.transpose(), z(jw, rj)],
            vec![c1, c2, eye(1, 1), z(1, rj)],
            vec![c3, z(rj, jw), z(rj, 1), eye(rj, rj) * g],
        ]);
        out.push(LmiResidual {
            label: row.label.clone(),
            min_eig: min_eigenvalue(&m),
        });
    }

    let bounded = |v: DMatrix<f64>| stack(&[vec![q.clone(), v.transpose()], vec![v, eye(1, 1)]]);
    for i in 0..n {
        out.push(LmiResidual {
            label: format!("velocity[{i}]"),
            min_eig: min_eigenvalue(&bounded(DMatrix::from_row_slice(
                1,
                dim,
                q.row(n + i).transpose().as_slice(),
            ))),
        });
        out.push(LmiResidual {
            label: format!("joint[{i}]"),
            min_eig: min_eigenvalue(&bounded(DMatrix::from_row_slice(
                1,
                dim,
                q.row(i).transpose().as_slice(),
            ))),
        });
        out.push(LmiResidual {
            label: format!("torque[{i}]"),
            min_eig: min_eigenvalue(&bounded(DMatrix::from_row_slice(
                1,
                dim,
                y.row(i).transpose().as_slice(),
            ))),
        });
    }

    let q11 = q.view((0, 0), (n, n)).into_owned();
    for (i, off) in bp.record.contain_offsets.iter().enumerate() {
        let v = DMatrix::from_fn(n, 1, |r, _| off[r] / sm.d[r]);
        let m = stack(&[vec![eye(1, 1), v.transpose()], vec![v, q11.clone()]]);
        out.push(LmiResidual {
            label: format!("contain[{i}]"),
            min_eig: min_eigenvalue(&m),
        });
    }
    if let Some(bound) = &bp.record.shape_bound {
        out.push(LmiResidual {
            label: "shape".into(),
            min_eig: min_eigenvalue(&(sm.to_scaled_q(bound) - &q)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_policy_bisects_to_the_upper_edge() {
        let mut calls = 0;
        let mut feas = |a: f64| {
            calls += 1;
            (0.3..=1.37).contains(&a)
        };
        let a = choose_alpha(
            AlphaPolicy::Bisect {
                lo: 0.05,
                hi: 4.0,
                resolution: 0.05,
            },
            &mut feas,
        )
        .unwrap();
        assert!(a <= 1.37 && a > 1.37 - 0.05, "{a}");
        assert!(calls < 20);
    }

    #[test]
    fn alpha_policy_reports_infeasible() {
        let mut feas = |_: f64| false;
        assert!(matches!(
            choose_alpha(AlphaPolicy::default(), &mut feas),
            Err(SynthError::Infeasible { .. })
        ));
        let mut feas = |_: f64| true;
        assert_eq!(
            choose_alpha(AlphaPolicy::default(), &mut feas).unwrap(),
            4.0
        );
        assert_eq!(
            choose_alpha(AlphaPolicy::Fixed { value: 0.7 }, &mut feas).unwrap(),
            0.7
        );
    }

    #[test]
    fn scalar_validation() {
        assert!(matches!(
            validate_scalars(1.0, &AlphaPolicy::default()),
            Err(SynthError::InvalidScalar(_))
        ));
        assert!(matches!(
            validate_scalars(0.15, &AlphaPolicy::Fixed { value: -1.0 }),
            Err(SynthError::InvalidScalar(_))
        ));
        assert!(validate_scalars(0.15, &AlphaPolicy::default()).is_ok());
    }

    #[test]
    fn barrier_value_and_norms() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.09, 1.0, 1.0]));
        let bp = BarrierPair::new(
            0,
            DVector::from_vec(vec![0.3, 1.6]),
            Vector2::zeros(),
            q,
            DMatrix::zeros(2, 4),
            0.15,
            1.0,
            1.0,
        );
        let s = JointState::at_rest(DVector::from_vec(vec![0.5, 1.6]));
        assert!((bp.barrier(&s) - 0.0).abs() < 1e-12);
        assert!((bp.config_norm(&DVector::from_vec(vec![0.3, 1.75])) - 0.5).abs() < 1e-12);
        assert_eq!(bp.feedback(&s), DVector::zeros(2));
    }
}
