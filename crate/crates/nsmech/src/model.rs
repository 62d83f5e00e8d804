//! System models: mass/bias/input dynamics, bilateral and unilateral
//! constraint sets with activation state, and the constrained acceleration
//! and force kernels.
//!
//! Unilateral constraints carry two flag sets: `gamma` marks rows currently
//! enforced as persistent contacts, `gamma_star` marks rows that just became
//! impacting (gap closed while approaching) and are waiting for the impulse
//! solver. The assembled Jacobian stacks bilateral rows first, then active
//! unilateral rows in index order, then (on request) impacting rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jacobian::JacobianMatrix;
use crate::projection::ProjectionBundle;

pub type PosFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
pub type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type JacDotFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type MassFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type BiasFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type InputFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Activation and event tolerances, in model units.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Event time localization width.
    pub event_tol: f64,
    /// Gap threshold: a unilateral row with `phi <= gap_tol` counts as
    /// touching (this is also the activation threshold).
    pub gap_tol: f64,
    /// Constraint drift allowed before position stabilization runs.
    pub drift_tol: f64,
    /// Relative SVD rank cutoff; `None` selects `max(m, n) * eps`.
    pub rank_tol: Option<f64>,
    /// Normal-velocity threshold separating "approaching" from "resting".
    pub vel_tol: f64,
    /// Multiplier threshold below which a persistent contact is released.
    pub lambda_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            event_tol: 1e-10,
            gap_tol: 1e-9,
            drift_tol: 1e-9,
            rank_tol: None,
            vel_tol: 1e-9,
            lambda_tol: 1e-9,
        }
    }
}

/// One block of constraints of the same kind: gap functions plus their
/// Jacobian and, optionally, an analytic Jacobian rate.
pub struct ConstraintBlock {
    pub dim: usize,
    pub phi: Box<PosFn>,
    pub jac: Box<JacFn>,
    /// Analytic `dA/dt(q, q̇)`; when absent the engine falls back to a
    /// central-difference directional derivative along `q̇`.
    pub jac_dot: Option<Box<JacDotFn>>,
}

/// Bilateral plus unilateral constraints with activation state.
pub struct ConstraintSet {
    nq: usize,
    bilateral: Option<ConstraintBlock>,
    unilateral: Option<ConstraintBlock>,
    /// Active (persistently enforced) unilateral rows.
    pub gamma: Vec<bool>,
    /// Rows that just started impacting, pending impulse resolution.
    pub gamma_star: Vec<bool>,
}

/// Jacobian assembled over the currently enforced rows, with the map from
/// assembled rows back to unilateral constraint slots.
pub struct AssembledJacobian {
    pub jac: JacobianMatrix,
    /// Number of leading bilateral rows.
    pub m_b: usize,
    /// Unilateral constraint indices of the trailing rows, in row order.
    pub uni_rows: Vec<usize>,
}

/// Multipliers disaggregated into constraint slots; inactive unilateral
/// slots hold exact zeros.
#[derive(Debug, Clone)]
pub struct MultiplierSet {
    pub bilateral: DVector<f64>,
    pub unilateral: DVector<f64>,
    /// False when the assembled Jacobian was row-rank-deficient, in which
    /// case the reported multipliers are the minimum-norm representative.
    pub unique: bool,
}

impl ConstraintSet {
    pub fn new(
        nq: usize,
        bilateral: Option<ConstraintBlock>,
        unilateral: Option<ConstraintBlock>,
    ) -> Self {
        let m_u = unilateral.as_ref().map_or(0, |b| b.dim);
        ConstraintSet {
            nq,
            bilateral,
            unilateral,
            gamma: vec![false; m_u],
            gamma_star: vec![false; m_u],
        }
    }

    pub fn unconstrained(nq: usize) -> Self {
        Self::new(nq, None, None)
    }

    /// Returns this set with every unilateral row listed twice, making the
    /// enforced Jacobian row-rank-deficient whenever a contact is active.
    /// Activation flags are reset.
    pub fn duplicate_unilateral(self) -> ConstraintSet {
        fn stack_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
            let (m, n) = a.shape();
            let mut out = DMatrix::zeros(2 * m, n);
            out.rows_mut(0, m).copy_from(a);
            out.rows_mut(m, m).copy_from(a);
            out
        }
        let ConstraintSet { nq, bilateral, unilateral, .. } = self;
        let unilateral = unilateral.map(|block| {
            let ConstraintBlock { dim, phi, jac, jac_dot } = block;
            ConstraintBlock {
                dim: 2 * dim,
                phi: Box::new(move |q: &DVector<f64>| {
                    let v = phi(q);
                    let mut out = DVector::zeros(2 * dim);
                    out.rows_mut(0, dim).copy_from(&v);
                    out.rows_mut(dim, dim).copy_from(&v);
                    out
                }),
                jac: Box::new(move |q: &DVector<f64>| stack_rows(&jac(q))),
                jac_dot: jac_dot.map(|jd| {
                    Box::new(move |q: &DVector<f64>, qd: &DVector<f64>| stack_rows(&jd(q, qd)))
                        as Box<JacDotFn>
                }),
            }
        });
        ConstraintSet::new(nq, bilateral, unilateral)
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn m_b(&self) -> usize {
        self.bilateral.as_ref().map_or(0, |b| b.dim)
    }

    pub fn m_u(&self) -> usize {
        self.unilateral.as_ref().map_or(0, |b| b.dim)
    }

    fn eval_phi(block: &ConstraintBlock, q: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
        let v = (block.phi)(q);
        if v.len() != block.dim {
            return Err(Error::invalid_model(format!(
                "{what} gap callback returned length {} for dimension {}",
                v.len(),
                block.dim
            )));
        }
        Ok(v)
    }

    fn eval_jac(block: &ConstraintBlock, q: &DVector<f64>, nq: usize, what: &str) -> Result<DMatrix<f64>> {
        let a = (block.jac)(q);
        if a.shape() != (block.dim, nq) {
            return Err(Error::invalid_model(format!(
                "{what} jacobian callback returned shape {:?}, expected {:?}",
                a.shape(),
                (block.dim, nq)
            )));
        }
        Ok(a)
    }

    /// Bilateral gaps (length `m_b`).
    pub fn phi_b(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.bilateral {
            Some(b) => Self::eval_phi(b, q, "bilateral"),
            None => Ok(DVector::zeros(0)),
        }
    }

    /// Unilateral gaps (length `m_u`).
    pub fn phi_u(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.unilateral {
            Some(b) => Self::eval_phi(b, q, "unilateral"),
            None => Ok(DVector::zeros(0)),
        }
    }

    /// Full bilateral Jacobian (`m_b`-by-n).
    pub fn jac_b(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.bilateral {
            Some(b) => Self::eval_jac(b, q, self.nq, "bilateral"),
            None => Ok(DMatrix::zeros(0, self.nq)),
        }
    }

    /// Full unilateral Jacobian (`m_u`-by-n).
    pub fn jac_u(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.unilateral {
            Some(b) => Self::eval_jac(b, q, self.nq, "unilateral"),
            None => Ok(DMatrix::zeros(0, self.nq)),
        }
    }

    /// Unilateral gap rates `A_u q̇`.
    pub fn phi_u_dot(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jac_u(q)? * qdot)
    }

    /// Stacks the enforced rows: bilateral, then `gamma` rows, then (when
    /// `include_impacting`) `gamma_star` rows. Row order within each group
    /// is constraint index order.
    pub fn assemble_jacobian(
        &self,
        q: &DVector<f64>,
        include_impacting: bool,
        rank_tol: Option<f64>,
    ) -> Result<AssembledJacobian> {
        let m_b = self.m_b();
        let jac_b = self.jac_b(q)?;
        let jac_u = self.jac_u(q)?;
        let mut uni_rows = Vec::new();
        for i in 0..self.m_u() {
            if self.gamma[i] || (include_impacting && self.gamma_star[i]) {
                uni_rows.push(i);
            }
        }
        let m = m_b + uni_rows.len();
        let mut a = DMatrix::zeros(m, self.nq);
        for r in 0..m_b {
            a.row_mut(r).copy_from(&jac_b.row(r));
        }
        for (k, &i) in uni_rows.iter().enumerate() {
            a.row_mut(m_b + k).copy_from(&jac_u.row(i));
        }
        Ok(AssembledJacobian {
            jac: JacobianMatrix::with_rank_tol(a, rank_tol)?,
            m_b,
            uni_rows,
        })
    }

    /// Time derivative of the assembled Jacobian along `q̇`, using analytic
    /// rates when the model provides them and a central-difference
    /// directional derivative otherwise.
    pub fn assemble_jacobian_dot(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        assembled: &AssembledJacobian,
    ) -> Result<DMatrix<f64>> {
        let m = assembled.jac.nrows();
        let mut adot = DMatrix::zeros(m, self.nq);
        if assembled.m_b > 0 {
            let block = self.bilateral.as_ref().expect("bilateral rows imply a block");
            let full = block_jac_dot(block, q, qdot, self.nq)?;
            for r in 0..assembled.m_b {
                adot.row_mut(r).copy_from(&full.row(r));
            }
        }
        if !assembled.uni_rows.is_empty() {
            let block = self.unilateral.as_ref().expect("unilateral rows imply a block");
            let full = block_jac_dot(block, q, qdot, self.nq)?;
            for (k, &i) in assembled.uni_rows.iter().enumerate() {
                adot.row_mut(assembled.m_b + k).copy_from(&full.row(i));
            }
        }
        Ok(adot)
    }

    /// Flags newly impacting rows (`gamma_star`) and releases separating
    /// active rows, given current gaps, gap rates, and active multipliers.
    ///
    /// A row impacts when it is inactive, its gap is at or below `gap_tol`,
    /// and it approaches faster than `vel_tol`. An active row is released
    /// when its multiplier drops below `−lambda_tol`. `gamma` and
    /// `gamma_star` stay disjoint.
    pub fn update_activation(
        &mut self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        lambda_u: &DVector<f64>,
        tols: &Tolerances,
    ) -> Result<()> {
        let m_u = self.m_u();
        if lambda_u.len() != m_u {
            return Err(Error::invalid_input(format!(
                "lambda_u length {} does not match unilateral count {m_u}",
                lambda_u.len()
            )));
        }
        if m_u == 0 {
            return Ok(());
        }
        let phi = self.phi_u(q)?;
        let phidot = self.phi_u_dot(q, qdot)?;
        for i in 0..m_u {
            if self.gamma[i] {
                if lambda_u[i] < -tols.lambda_tol {
                    self.gamma[i] = false;
                }
            } else {
                self.gamma_star[i] =
                    phi[i] <= tols.gap_tol && phidot[i] < -tols.vel_tol;
            }
        }
        debug_assert!((0..m_u).all(|i| !(self.gamma[i] && self.gamma_star[i])));
        Ok(())
    }

    /// Indices currently flagged as impacting.
    pub fn impacting_rows(&self) -> Vec<usize> {
        (0..self.m_u()).filter(|&i| self.gamma_star[i]).collect()
    }

    /// Clears all impact flags (after the impulse solver has run).
    pub fn clear_impacting(&mut self) {
        for f in self.gamma_star.iter_mut() {
            *f = false;
        }
    }
}

fn block_jac_dot(
    block: &ConstraintBlock,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    nq: usize,
) -> Result<DMatrix<f64>> {
    if let Some(jd) = &block.jac_dot {
        let a = jd(q, qdot);
        if a.shape() != (block.dim, nq) {
            return Err(Error::invalid_model(format!(
                "jacobian rate callback returned shape {:?}, expected {:?}",
                a.shape(),
                (block.dim, nq)
            )));
        }
        return Ok(a);
    }
    let speed = qdot.norm();
    if speed == 0.0 {
        return Ok(DMatrix::zeros(block.dim, nq));
    }
    let h = f64::EPSILON.cbrt() * (1.0 + q.norm());
    let dir = qdot / speed;
    let qp = q + &dir * h;
    let qm = q - &dir * h;
    let ap = (block.jac)(&qp);
    let am = (block.jac)(&qm);
    if ap.shape() != (block.dim, nq) || am.shape() != (block.dim, nq) {
        return Err(Error::invalid_model(
            "jacobian callback changed shape during differentiation",
        ));
    }
    Ok((ap - am) * (speed / (2.0 * h)))
}

impl AssembledJacobian {
    /// Scatters assembled-row multipliers back to constraint slots.
    pub fn disaggregate(&self, lam_rows: &DVector<f64>, m_u: usize, unique: bool) -> MultiplierSet {
        let mut bilateral = DVector::zeros(self.m_b);
        for r in 0..self.m_b {
            bilateral[r] = lam_rows[r];
        }
        let mut unilateral = DVector::zeros(m_u);
        for (k, &i) in self.uni_rows.iter().enumerate() {
            unilateral[i] = lam_rows[self.m_b + k];
        }
        MultiplierSet { bilateral, unilateral, unique }
    }
}

/// Smooth dynamics `M(q) q̈ + h(q, q̇) = u(t, q, q̇) + constraint forces`.
pub struct SystemDynamics {
    nq: usize,
    mass: Box<MassFn>,
    bias: Box<BiasFn>,
    input: Box<InputFn>,
}

impl SystemDynamics {
    pub fn new(nq: usize, mass: Box<MassFn>, bias: Box<BiasFn>, input: Box<InputFn>) -> Self {
        SystemDynamics { nq, mass, bias, input }
    }

    /// Constant-mass system with bias `h(q, q̇)` and zero input.
    pub fn constant_mass(mass: DMatrix<f64>, bias: Box<BiasFn>) -> Self {
        let nq = mass.nrows();
        SystemDynamics::new(
            nq,
            Box::new(move |_q| mass.clone()),
            bias,
            Box::new(|_t, _q, _qd| DVector::zeros(0)),
        )
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn mass(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = (self.mass)(q);
        if m.shape() != (self.nq, self.nq) {
            return Err(Error::invalid_model(format!(
                "mass callback returned shape {:?}, expected {:?}",
                m.shape(),
                (self.nq, self.nq)
            )));
        }
        Ok(m)
    }

    pub fn bias(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        let h = (self.bias)(q, qdot);
        if h.len() != self.nq {
            return Err(Error::invalid_model(format!(
                "bias callback returned length {}, expected {}",
                h.len(),
                self.nq
            )));
        }
        Ok(h)
    }

    pub fn input(&self, t: f64, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        let u = (self.input)(t, q, qdot);
        if u.len() == 0 {
            return Ok(DVector::zeros(self.nq));
        }
        if u.len() != self.nq {
            return Err(Error::invalid_model(format!(
                "input callback returned length {}, expected {}",
                u.len(),
                self.nq
            )));
        }
        Ok(u)
    }
}

/// Instantaneous state of the generalized coordinates plus the active-set
/// snapshot it was produced under.
#[derive(Debug, Clone)]
pub struct GeneralizedState {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub active_set: Vec<bool>,
}

impl GeneralizedState {
    pub fn new(t: f64, q: DVector<f64>, qdot: DVector<f64>, m_u: usize) -> Self {
        GeneralizedState { t, q, qdot, active_set: vec![false; m_u] }
    }
}

/// Constrained and unconstrained accelerations under the active set:
///
/// ```text
/// q̈* = M⁻¹ (u − h)           (constraints ignored)
/// q̈  = M_o⁺ (u − h) + S Ω q̇  (constraints enforced)
/// ```
///
/// The two are linked by the oblique split `q̈ = (I − S) q̈* + S Ω q̇`, and
/// the constrained one satisfies `A q̈ + Ȧ q̇ = 0` on the enforced rows.
pub fn constrained_acceleration(
    dynamics: &SystemDynamics,
    bundle: &ProjectionBundle,
    state: &GeneralizedState,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mass = dynamics.mass(&state.q)?;
    let h = dynamics.bias(&state.q, &state.qdot)?;
    let force = u - h;
    let chol = nalgebra::Cholesky::new(mass)
        .ok_or_else(|| Error::invalid_model("mass matrix is not positive definite"))?;
    let qddot_free = chol.solve(&force);
    let qddot = &bundle.mo_pinv * &force + &bundle.s * (&bundle.omega * &state.qdot);
    Ok((qddot, qddot_free))
}

/// Generalized constraint force and slot multipliers under the active set:
///
/// ```text
/// f = Sᵀ (h − u) + Sᵀ M Ω q̇,     λ = A⁺ᵀ f
/// ```
///
/// `f` closes the Newton-Euler balance `M q̈ + h = u + f` for the
/// constrained acceleration; λ is the minimum-norm multiplier vector, which
/// is the unique one when `A` has full row rank.
pub fn constraint_force(
    dynamics: &SystemDynamics,
    bundle: &ProjectionBundle,
    state: &GeneralizedState,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mass = dynamics.mass(&state.q)?;
    let h = dynamics.bias(&state.q, &state.qdot)?;
    let f = bundle.s.transpose() * ((&h - u) + &mass * (&bundle.omega * &state.qdot));
    let lam = bundle.jac_pinv.transpose() * &f;
    Ok((f, lam))
}
