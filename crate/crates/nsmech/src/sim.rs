//! Event-driven simulation with contact topology changes.
//!
//! A run alternates smooth integration arcs (active set frozen) with
//! topology events: impacts when a gap closes while approaching, activation
//! when a contact starts persisting, deactivation when its multiplier turns
//! pulling, plus drift stabilization bookkeeping. Gap closings are located
//! in time by bisection with single-step probe integrations, then resolved
//! by the impulse solver; a contact whose post-impact normal rate stays
//! within the velocity tolerance is promoted to a persistent constraint,
//! which truncates accumulation cascades in finite event counts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::impact::{
    energy_audit, resolve_impact, ImpactProblem, RestitutionLaw, RestitutionSpec,
};
use crate::integrate::{rk4_step, Integrator};
use crate::model::{
    constrained_acceleration, constraint_force, AssembledJacobian, ConstraintSet,
    GeneralizedState, MultiplierSet, SystemDynamics, Tolerances,
};
use crate::models::Model;
use crate::projection::{NuPolicy, ProjectionBundle};

/// One trajectory sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Kinetic energy `½ q̇ᵀ M q̇`.
    pub kinetic: f64,
    /// Bit i set when unilateral row i is persistently active (rows past 63
    /// are not represented).
    pub active_mask: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Impact,
    Activation,
    Deactivation,
    Stabilization,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Impact => "impact",
            EventKind::Activation => "activation",
            EventKind::Deactivation => "deactivation",
            EventKind::Stabilization => "stabilization",
        }
    }
}

/// One logged topology event. Impact entries carry the energy audit and
/// impulse data; the other kinds leave those fields empty.
#[derive(Debug, Clone)]
pub struct EventLogEntry {
    pub kind: EventKind,
    pub t: f64,
    /// Unilateral constraint indices involved.
    pub indices: Vec<usize>,
    pub w_loss: Option<f64>,
    /// Kinetic energy ratio across the event.
    pub gamma_ratio: Option<f64>,
    /// Generalized impulse transmitted by the constraints.
    pub i_f: Option<Vec<f64>>,
    /// Impulse multipliers scattered to unilateral slots.
    pub i_lambda: Option<Vec<f64>>,
    pub qdot_minus: Option<Vec<f64>>,
    pub qdot_plus: Option<Vec<f64>>,
    /// False when the impact Jacobian was row-rank-deficient and the
    /// multipliers are only the minimum-norm representative.
    pub multipliers_unique: Option<bool>,
}

impl EventLogEntry {
    fn bare(kind: EventKind, t: f64, indices: Vec<usize>) -> Self {
        EventLogEntry {
            kind,
            t,
            indices,
            w_loss: None,
            gamma_ratio: None,
            i_f: None,
            i_lambda: None,
            qdot_minus: None,
            qdot_plus: None,
            multipliers_unique: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub t_final: f64,
    /// Accepted integration steps (event landings included).
    pub steps: usize,
    pub events: usize,
    pub impacts: usize,
    /// Net impact energy change (nonpositive for passive laws).
    pub total_w_loss: f64,
    pub final_kinetic: f64,
    /// Largest active-constraint drift observed before correction.
    pub max_drift: f64,
}

pub struct RunResult {
    pub samples: Vec<Sample>,
    pub events: Vec<EventLogEntry>,
    pub summary: RunSummary,
    pub final_state: GeneralizedState,
}

/// A configured run: model, integrator, tolerances, horizon.
pub struct Simulation {
    pub model: Model,
    pub integrator: Integrator,
    pub tolerances: Tolerances,
    pub t_end: f64,
    /// Force resolution of energetically infeasible restitution.
    pub allow_inconsistent: bool,
    /// Record a sample at every accepted step (first and final states are
    /// always recorded).
    pub record_trajectory: bool,
}

impl Simulation {
    pub fn new(model: Model, t_end: f64) -> Self {
        Simulation {
            model,
            integrator: Integrator::default(),
            tolerances: Tolerances::default(),
            t_end,
            allow_inconsistent: false,
            record_trajectory: true,
        }
    }

    pub fn run(self) -> Result<RunResult> {
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::config("t_end", "must be finite and nonnegative"));
        }
        self.integrator.validate()?;
        let nq = self.model.dynamics.nq();
        if self.model.constraints.nq() != nq {
            return Err(Error::invalid_model(format!(
                "constraint set dimension {} does not match dynamics dimension {nq}",
                self.model.constraints.nq()
            )));
        }
        if self.model.q0.len() != nq || self.model.qd0.len() != nq {
            return Err(Error::invalid_model(
                "initial state length does not match dynamics dimension",
            ));
        }
        if let RestitutionSpec::Global(e) = self.model.restitution {
            if e > 1.0 && !self.allow_inconsistent {
                // Scalar overshoot already fails the energy inequality at any
                // contact; refuse up front instead of at the first impact.
                return Err(Error::InfeasibleRestitution {
                    eigenvalue: e * e - 1.0,
                    tolerance: 1e-10,
                });
            }
        }
        let Simulation {
            model,
            integrator,
            tolerances,
            t_end,
            allow_inconsistent,
            record_trajectory,
        } = self;
        let runner = Runner {
            dynamics: model.dynamics,
            constraints: model.constraints,
            restitution: model.restitution,
            integrator,
            tols: tolerances,
            t_end,
            allow_inconsistent,
            record_trajectory,
            t: 0.0,
            q: model.q0,
            qd: model.qd0,
            samples: Vec::new(),
            events: Vec::new(),
            steps: 0,
            impacts: 0,
            total_w_loss: 0.0,
            max_drift: 0.0,
            last_event_t: f64::NEG_INFINITY,
            stall_events: 0,
        };
        runner.run()
    }
}

struct Runner {
    dynamics: SystemDynamics,
    constraints: ConstraintSet,
    restitution: RestitutionSpec,
    integrator: Integrator,
    tols: Tolerances,
    t_end: f64,
    allow_inconsistent: bool,
    record_trajectory: bool,
    t: f64,
    q: DVector<f64>,
    qd: DVector<f64>,
    samples: Vec<Sample>,
    events: Vec<EventLogEntry>,
    steps: usize,
    impacts: usize,
    total_w_loss: f64,
    max_drift: f64,
    last_event_t: f64,
    stall_events: usize,
}

/// Consecutive impact events closer together than `event_tol` tolerated
/// before the run is declared stalled.
const STALL_EVENT_LIMIT: usize = 200;

impl Runner {
    fn run(mut self) -> Result<RunResult> {
        self.settle()?;
        self.stabilize()?;
        self.push_sample(true)?;

        let mut hint = self.integrator.step_size;
        while self.t_end - self.t > self.tols.event_tol {
            let h_max = self.t_end - self.t;
            let integ = self.integrator;
            let step = {
                let accel =
                    |t: f64, q: &DVector<f64>, v: &DVector<f64>| self.accel(t, q, v);
                integ.step(
                    &accel,
                    self.t,
                    &self.q,
                    &self.qd,
                    h_max,
                    hint,
                    self.tols.event_tol,
                )
            };
            let step = match step {
                Ok(s) => s,
                Err(Error::Stalled { t, message, .. }) => {
                    let dump = self.dump();
                    return Err(Error::Stalled { t, message, dump });
                }
                Err(e) => return Err(e),
            };

            match self.crossing_at(&step.q, &step.qdot)? {
                Some(_) => {
                    let (tau, q_tau, v_tau) = self.locate_event(step.h)?;
                    self.t = tau;
                    self.q = q_tau;
                    self.qd = v_tau;
                    hint = self.integrator.step_size;
                }
                None => {
                    self.t += step.h;
                    self.q = step.q;
                    self.qd = step.qdot;
                    hint = step.h_next;
                }
            }
            self.steps += 1;
            self.settle()?;
            self.stabilize()?;
            self.push_sample(false)?;
        }

        // Land exactly on the horizon for reporting.
        if (self.t_end - self.t).abs() <= self.tols.event_tol {
            self.t = self.t_end;
        }
        self.push_sample(true)?;

        let final_kinetic = self.kinetic(&self.q, &self.qd)?;
        let summary = RunSummary {
            t_final: self.t,
            steps: self.steps,
            events: self.events.len(),
            impacts: self.impacts,
            total_w_loss: self.total_w_loss,
            final_kinetic,
            max_drift: self.max_drift,
        };
        let final_state = GeneralizedState {
            t: self.t,
            q: self.q.clone(),
            qdot: self.qd.clone(),
            active_set: self.constraints.gamma.clone(),
        };
        Ok(RunResult {
            samples: self.samples,
            events: self.events,
            summary,
            final_state,
        })
    }

    // -- smooth dynamics ---------------------------------------------------

    fn active_bundle(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
    ) -> Result<(AssembledJacobian, ProjectionBundle)> {
        let asm = self.constraints.assemble_jacobian(q, false, self.tols.rank_tol)?;
        let adot = self.constraints.assemble_jacobian_dot(q, qd, &asm)?;
        let mass = self.dynamics.mass(q)?;
        let bundle =
            ProjectionBundle::build(&asm.jac, Some(&adot), &mass, NuPolicy::GeometricMean)?;
        Ok((asm, bundle))
    }

    fn accel(&self, t: f64, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, bundle) = self.active_bundle(q, v)?;
        let state = GeneralizedState {
            t,
            q: q.clone(),
            qdot: v.clone(),
            active_set: self.constraints.gamma.clone(),
        };
        let u = self.dynamics.input(t, q, v)?;
        let (qddot, _) = constrained_acceleration(&self.dynamics, &bundle, &state, &u)?;
        Ok(qddot)
    }

    fn active_multipliers(&self) -> Result<MultiplierSet> {
        let (asm, bundle) = self.active_bundle(&self.q, &self.qd)?;
        let state = GeneralizedState {
            t: self.t,
            q: self.q.clone(),
            qdot: self.qd.clone(),
            active_set: self.constraints.gamma.clone(),
        };
        let u = self.dynamics.input(self.t, &self.q, &self.qd)?;
        let (_f, lam_rows) = constraint_force(&self.dynamics, &bundle, &state, &u)?;
        Ok(asm.disaggregate(&lam_rows, self.constraints.m_u(), bundle.full_row_rank()))
    }

    fn kinetic(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        let mass = self.dynamics.mass(q)?;
        Ok(0.5 * qd.dot(&(&mass * qd)))
    }

    // -- topology settlement ----------------------------------------------

    /// Drives activation flags to a fixed point at the current state:
    /// flags approaching closed gaps as impacting, resolves the impacts,
    /// tentatively enforces resting touches, and releases active rows whose
    /// multiplier turned pulling. Logs the net activation changes.
    fn settle(&mut self) -> Result<()> {
        let m_u = self.constraints.m_u();
        if m_u == 0 && self.constraints.m_b() == 0 {
            return Ok(());
        }
        let gamma_before = self.constraints.gamma.clone();
        let mut blocked = vec![false; m_u];
        let mut reached_fixed_point = false;
        let max_pass = 16 + 8 * m_u;
        for _ in 0..max_pass {
            let mut changed = false;

            if m_u > 0 {
                let phi = self.constraints.phi_u(&self.q)?;
                let phidot = self.constraints.phi_u_dot(&self.q, &self.qd)?;
                for i in 0..m_u {
                    if self.constraints.gamma[i] || self.constraints.gamma_star[i] {
                        continue;
                    }
                    if phi[i] <= self.tols.gap_tol {
                        if phidot[i] < -self.tols.vel_tol {
                            self.constraints.gamma_star[i] = true;
                            changed = true;
                        } else if phidot[i] <= self.tols.vel_tol && !blocked[i] {
                            // Resting touch: enforce tentatively; the
                            // multiplier pruning below has the final say.
                            self.constraints.gamma[i] = true;
                            changed = true;
                        }
                    }
                }
            }

            if !self.constraints.impacting_rows().is_empty() {
                self.resolve_impact_event()?;
                changed = true;
            }

            // Release rows whose multiplier pulls, worst first, re-solving
            // after each release.
            loop {
                let active: Vec<usize> =
                    (0..m_u).filter(|&i| self.constraints.gamma[i]).collect();
                if active.is_empty() {
                    break;
                }
                let mult = self.active_multipliers()?;
                let mut worst: Option<(usize, f64)> = None;
                for &i in &active {
                    let lam = mult.unilateral[i];
                    if lam < -self.tols.lambda_tol
                        && worst.map_or(true, |(_, w)| lam < w)
                    {
                        worst = Some((i, lam));
                    }
                }
                match worst {
                    Some((i, _)) => {
                        self.constraints.gamma[i] = false;
                        blocked[i] = true;
                        changed = true;
                    }
                    None => break,
                }
            }

            if !changed {
                reached_fixed_point = true;
                break;
            }
        }
        if !reached_fixed_point {
            return Err(Error::Stalled {
                t: self.t,
                message: "contact topology did not reach a fixed point".into(),
                dump: self.dump(),
            });
        }

        // Log the net set changes and make the velocity admissible when the
        // enforced set grew.
        let mut activated = Vec::new();
        let mut released = Vec::new();
        for i in 0..m_u {
            match (gamma_before[i], self.constraints.gamma[i]) {
                (false, true) => activated.push(i),
                (true, false) => released.push(i),
                _ => {}
            }
        }
        if !released.is_empty() {
            self.events
                .push(EventLogEntry::bare(EventKind::Deactivation, self.t, released));
        }
        if !activated.is_empty() {
            self.events.push(EventLogEntry::bare(
                EventKind::Activation,
                self.t,
                activated.clone(),
            ));
        }
        if !activated.is_empty() {
            let (_, bundle) = self.active_bundle(&self.q, &self.qd)?;
            self.qd = &bundle.p * &self.qd;
        }
        Ok(())
    }

    /// Resolves one impulsive event over the impacting rows (persistent and
    /// bilateral rows participate as plastic rows).
    fn resolve_impact_event(&mut self) -> Result<()> {
        let m_u = self.constraints.m_u();
        let phidot = self.constraints.phi_u_dot(&self.q, &self.qd)?;
        let flagged = self.constraints.impacting_rows();
        self.constraints.clear_impacting();
        let approaching: Vec<usize> = flagged
            .into_iter()
            .filter(|&i| phidot[i] < -self.tols.vel_tol)
            .collect();
        if approaching.is_empty() {
            return Ok(());
        }
        for &i in &approaching {
            self.constraints.gamma_star[i] = true;
        }
        let asm = self.constraints.assemble_jacobian(&self.q, true, self.tols.rank_tol)?;
        let mass = self.dynamics.mass(&self.q)?;
        let bundle = ProjectionBundle::build(&asm.jac, None, &mass, NuPolicy::GeometricMean)?;
        let law = self.event_law(&asm)?;
        self.constraints.clear_impacting();

        let prob = ImpactProblem::new(mass, bundle, self.qd.clone(), law)?
            .with_participating(approaching.clone())
            .with_allow_inconsistent(self.allow_inconsistent);
        let record = resolve_impact(&prob)?;
        // Independent energy recomputation; disagreement is a solver bug.
        let (w_loss, gamma_ratio) = energy_audit(&prob, &record)?;

        let qdot_minus = self.qd.clone();
        self.qd = record.qdot_plus.clone();

        // Promote rows whose bounce-back rate stays inside the velocity
        // tolerance; they behave as persistent contacts from here on.
        let phidot_plus = self.constraints.phi_u_dot(&self.q, &self.qd)?;
        for &i in &approaching {
            if phidot_plus[i] <= self.tols.vel_tol {
                self.constraints.gamma[i] = true;
            }
        }

        let lam_slots = asm.disaggregate(&record.i_lambda, m_u, record.multipliers_unique);
        self.impacts += 1;
        self.total_w_loss += w_loss;
        if self.t - self.last_event_t < self.tols.event_tol {
            self.stall_events += 1;
            if self.stall_events > STALL_EVENT_LIMIT {
                return Err(Error::Stalled {
                    t: self.t,
                    message: format!(
                        "{STALL_EVENT_LIMIT} impact events without time progress"
                    ),
                    dump: self.dump(),
                });
            }
        } else {
            self.stall_events = 0;
        }
        self.last_event_t = self.t;
        self.events.push(EventLogEntry {
            kind: EventKind::Impact,
            t: self.t,
            indices: approaching,
            w_loss: Some(w_loss),
            gamma_ratio: Some(gamma_ratio),
            i_f: Some(record.i_f.iter().copied().collect()),
            i_lambda: Some(lam_slots.unilateral.iter().copied().collect()),
            qdot_minus: Some(qdot_minus.iter().copied().collect()),
            qdot_plus: Some(self.qd.iter().copied().collect()),
            multipliers_unique: Some(record.multipliers_unique),
        });
        Ok(())
    }

    /// Restitution law for the current event Jacobian. A per-contact
    /// specification becomes a diagonal matrix: impacting rows take their
    /// coefficient, bilateral and persistent rows restitute plastically.
    /// A scalar above one only reaches this point in forced mode and is
    /// routed through the matrix law so the feasibility verdict is recorded.
    fn event_law(&self, asm: &AssembledJacobian) -> Result<RestitutionLaw> {
        match &self.restitution {
            RestitutionSpec::Global(e) => {
                if *e <= 1.0 {
                    Ok(RestitutionLaw::Global(*e))
                } else {
                    let m = asm.jac.nrows();
                    Ok(RestitutionLaw::Matrix(DMatrix::<f64>::identity(m, m) * *e))
                }
            }
            RestitutionSpec::PerContact(coeffs) => {
                if coeffs.len() != self.constraints.m_u() {
                    return Err(Error::invalid_model(format!(
                        "per-contact restitution has {} entries for {} unilateral rows",
                        coeffs.len(),
                        self.constraints.m_u()
                    )));
                }
                let m = asm.jac.nrows();
                let mut em = DMatrix::zeros(m, m);
                for (k, &i) in asm.uni_rows.iter().enumerate() {
                    if self.constraints.gamma_star[i] {
                        em[(asm.m_b + k, asm.m_b + k)] = coeffs[i];
                    }
                }
                Ok(RestitutionLaw::Matrix(em))
            }
        }
    }

    // -- event location ----------------------------------------------------

    /// A gap closing happens when an inactive row reaches `φ ≤ 0` while
    /// approaching faster than the velocity tolerance. Post-settlement
    /// states never satisfy this, so a trial step that does brackets an
    /// event.
    fn crossing_at(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Option<usize>> {
        if self.constraints.m_u() == 0 {
            return Ok(None);
        }
        let phi = self.constraints.phi_u(q)?;
        let phidot = self.constraints.phi_u_dot(q, qd)?;
        for i in 0..self.constraints.m_u() {
            if !self.constraints.gamma[i]
                && phi[i] <= 0.0
                && phidot[i] < -self.tols.vel_tol
            {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }

    /// Bisects the crossing time inside `(t, t+h]` with single RK4 probe
    /// steps from the current state, and lands on the contact side of the
    /// bracket.
    fn locate_event(&self, h: f64) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        let accel = |t: f64, q: &DVector<f64>, v: &DVector<f64>| self.accel(t, q, v);
        let probe = |dt: f64| -> Result<(DVector<f64>, DVector<f64>)> {
            if dt == 0.0 {
                return Ok((self.q.clone(), self.qd.clone()));
            }
            rk4_step(&accel, self.t, &self.q, &self.qd, dt)
        };
        let mut lo = 0.0_f64;
        let mut hi = h;
        // Invariant: no crossing at lo, crossing at hi.
        while hi - lo > self.tols.event_tol {
            let mid = 0.5 * (lo + hi);
            let (qm, vm) = probe(mid)?;
            if self.crossing_at(&qm, &vm)?.is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (q_hi, v_hi) = probe(hi)?;
        Ok((self.t + hi, q_hi, v_hi))
    }

    // -- drift control -----------------------------------------------------

    fn enforced_gaps(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let phi_b = self.constraints.phi_b(q)?;
        let phi_u = self.constraints.phi_u(q)?;
        let active: Vec<usize> =
            (0..self.constraints.m_u()).filter(|&i| self.constraints.gamma[i]).collect();
        let mut out = DVector::zeros(phi_b.len() + active.len());
        for r in 0..phi_b.len() {
            out[r] = phi_b[r];
        }
        for (k, &i) in active.iter().enumerate() {
            out[phi_b.len() + k] = phi_u[i];
        }
        Ok(out)
    }

    /// Pulls the configuration back onto the enforced constraint surface
    /// (damped least-squares Newton on the stacked gaps) and projects the
    /// velocity when its constraint-space residual drifted.
    fn stabilize(&mut self) -> Result<()> {
        let enforced =
            self.constraints.m_b() + self.constraints.gamma.iter().filter(|&&g| g).count();
        if enforced == 0 {
            return Ok(());
        }
        let drift0 = self.enforced_gaps(&self.q)?.amax();
        self.max_drift = self.max_drift.max(drift0);
        if drift0 > self.tols.drift_tol {
            let mut converged = false;
            for _ in 0..20 {
                let phi = self.enforced_gaps(&self.q)?;
                if phi.amax() <= 0.5 * self.tols.drift_tol {
                    converged = true;
                    break;
                }
                let asm =
                    self.constraints.assemble_jacobian(&self.q, false, self.tols.rank_tol)?;
                let factors = asm.jac.factorize()?;
                self.q -= &factors.pinv * &phi;
            }
            if !converged && self.enforced_gaps(&self.q)?.amax() > self.tols.drift_tol {
                return Err(Error::Stalled {
                    t: self.t,
                    message: "constraint drift correction did not converge".into(),
                    dump: self.dump(),
                });
            }
            self.events.push(EventLogEntry::bare(
                EventKind::Stabilization,
                self.t,
                Vec::new(),
            ));
        }
        let asm = self.constraints.assemble_jacobian(&self.q, false, self.tols.rank_tol)?;
        let resid = (asm.jac.entries() * &self.qd).amax();
        if resid > self.tols.drift_tol {
            let factors = asm.jac.factorize()?;
            self.qd = &factors.projector * &self.qd;
        }
        Ok(())
    }

    // -- bookkeeping -------------------------------------------------------

    fn active_mask(&self) -> u64 {
        let mut mask = 0u64;
        for (i, &g) in self.constraints.gamma.iter().enumerate().take(64) {
            if g {
                mask |= 1 << i;
            }
        }
        mask
    }

    fn push_sample(&mut self, force: bool) -> Result<()> {
        if !(self.record_trajectory || force) {
            return Ok(());
        }
        let t = self.t;
        if let Some(last) = self.samples.last() {
            if last.t == t && last.q == self.q && last.qdot == self.qd {
                return Ok(());
            }
        }
        let kinetic = self.kinetic(&self.q, &self.qd)?;
        let sample = Sample {
            t,
            q: self.q.clone(),
            qdot: self.qd.clone(),
            kinetic,
            active_mask: self.active_mask(),
        };
        self.samples.push(sample);
        Ok(())
    }

    fn dump(&self) -> String {
        let gamma: Vec<u8> = self.constraints.gamma.iter().map(|&g| g as u8).collect();
        format!(
            "state dump:\n  t = {:.17e}\n  q = {:?}\n  qdot = {:?}\n  active = {:?}\n  \
             steps = {}, impacts = {}",
            self.t,
            self.q.as_slice(),
            self.qd.as_slice(),
            gamma,
            self.steps,
            self.impacts,
        )
    }
}
