//! Randomized self-checks of the solver kernels.
//!
//! Each suite draws a stream of random constrained systems (controlled rank,
//! controlled conditioning) and measures the residual of every algebraic
//! identity the solver relies on: projector algebra, impulse balance, energy
//! bookkeeping, and agreement of the two restitution feasibility tests. A
//! suite passes when no identity exceeds its tolerance on any case.
//!
//! All draws are seeded; a report is a pure function of `(suite, seed,
//! count)`, so two runs with the same options produce byte-identical output.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::impact::{resolve_impact, energy_audit, ImpactProblem, RestitutionLaw};
use crate::jacobian::{jacobian_rate_terms, orthogonal_projector, JacobianMatrix};
use crate::model::{
    constrained_acceleration, constraint_force, GeneralizedState, SystemDynamics,
};
use crate::projection::{constraint_inertia, NuPolicy, ProjectionBundle};
use crate::restitution::check_consistency;

/// Which identity family to exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Pseudo-inverse, orthogonal/oblique projectors, rate terms, and the
    /// constrained acceleration and force maps.
    Projections,
    /// Impulse maps: law satisfaction, balance, involution, idempotence.
    Impacts,
    /// Energy bookkeeping across both impact laws.
    Energy,
    /// Agreement of the quadratic and block feasibility tests.
    Consistency,
    /// Everything above.
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Suite> {
        match name {
            "projections" => Ok(Suite::Projections),
            "impacts" => Ok(Suite::Impacts),
            "energy" => Ok(Suite::Energy),
            // The feasibility-certificate suite answers to both the
            // matrix-inequality pair it runs and the module name.
            "qmi-lmi" | "consistency" => Ok(Suite::Consistency),
            "all" => Ok(Suite::All),
            other => Err(Error::invalid_input(format!(
                "unknown suite {other:?}; expected projections, impacts, energy, \
                 qmi-lmi, or all"
            ))),
        }
    }
}

/// Deliberate corruption of one internal quantity, to prove the checks can
/// actually fail. For testing the harness, not for users.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the constraint impulse before the balance check.
    FlipImpulseSign,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Cases per suite.
    pub count: usize,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, count: 1000, fault: None }
    }
}

/// Aggregate over all cases of one identity check.
#[derive(Debug, Clone)]
pub struct IdentityStat {
    pub name: &'static str,
    /// Cases on which the identity applied (some require full rank).
    pub cases: usize,
    pub violations: usize,
    /// Largest normalized residual seen.
    pub max_residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: usize,
    pub stats: Vec<IdentityStat>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.stats.iter().all(|s| s.violations == 0)
    }
}

pub fn all_passed(reports: &[SuiteReport]) -> bool {
    reports.iter().all(|r| r.passed())
}

/// Renders reports as fixed-width text, one line per identity.
pub fn format_reports(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    for rep in reports {
        let verdict = if rep.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "suite {}: {} cases, {} checks: {}",
            rep.suite,
            rep.cases,
            rep.stats.len(),
            verdict
        );
        for s in &rep.stats {
            let status = if s.violations == 0 {
                "ok".to_string()
            } else {
                format!("{} violations", s.violations)
            };
            let _ = writeln!(
                out,
                "  {:<34} cases {:>6}  max {:>12.3e}  tol {:>8.1e}  {}",
                s.name, s.cases, s.max_residual, s.tolerance, status
            );
        }
    }
    out
}

/// Runs the requested suite(s). Fails only on malformed options or an
/// internal error while constructing cases; identity violations are
/// reported in the returned stats, not as errors.
pub fn run(suite: Suite, opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    if opts.count == 0 {
        return Err(Error::invalid_input("verification needs at least one case"));
    }
    let reports = match suite {
        Suite::Projections => vec![projections_suite(opts)?],
        Suite::Impacts => vec![impacts_suite(opts)?],
        Suite::Energy => vec![energy_suite(opts)?],
        Suite::Consistency => vec![consistency_suite(opts)?],
        Suite::All => vec![
            projections_suite(opts)?,
            impacts_suite(opts)?,
            energy_suite(opts)?,
            consistency_suite(opts)?,
        ],
    };
    Ok(reports)
}

const ALG_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-8;
const SPECTRUM_TOL: f64 = 1e-7;
const TRACE_TOL: f64 = 1e-6;
const COND_SLACK: f64 = 1e-9;
const TWO_BODY_TOL: f64 = 1e-10;
const BOOL_TOL: f64 = 0.5;

struct Recorder {
    stats: Vec<IdentityStat>,
}

impl Recorder {
    fn new() -> Self {
        Recorder { stats: Vec::new() }
    }

    fn note(&mut self, name: &'static str, tolerance: f64, residual: f64) {
        let stat = match self.stats.iter_mut().find(|s| s.name == name) {
            Some(s) => s,
            None => {
                self.stats.push(IdentityStat {
                    name,
                    cases: 0,
                    violations: 0,
                    max_residual: 0.0,
                    tolerance,
                });
                self.stats.last_mut().unwrap()
            }
        };
        stat.cases += 1;
        if residual > stat.max_residual {
            stat.max_residual = residual;
        }
        if !(residual <= tolerance) {
            stat.violations += 1;
        }
    }

    /// Pass/fail check folded into the same table: residual 0 or 1.
    fn note_ok(&mut self, name: &'static str, ok: bool) {
        self.note(name, BOOL_TOL, if ok { 0.0 } else { 1.0 });
    }
}

fn case_rng(seed: u64, tag: u64, k: usize) -> ChaCha8Rng {
    let mix = (k as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag.wrapping_mul(0xd1b5_4a32_d192_ed03));
    ChaCha8Rng::seed_from_u64(seed ^ mix)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// First `cols` columns of the Q factor of a random square Gaussian matrix.
fn random_orthonormal(rng: &mut ChaCha8Rng, dim: usize, cols: usize) -> DMatrix<f64> {
    let q = gaussian(rng, dim, dim).qr().q();
    q.columns(0, cols).into_owned()
}

/// Symmetric matrix with eigenvalues drawn uniformly from `[lo, hi]`.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let w = random_orthonormal(rng, n, n);
    let d = DMatrix::from_diagonal(&random_vector(rng, n, lo, hi));
    let m = &w * d * w.transpose();
    (&m + m.transpose()) * 0.5
}

/// `m x n` matrix of exact rank `r` with singular values in `[slo, shi]`.
fn random_rank_matrix(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    r: usize,
    slo: f64,
    shi: f64,
) -> DMatrix<f64> {
    if m == 0 || r == 0 {
        return DMatrix::zeros(m, n);
    }
    let u = random_orthonormal(rng, m, r);
    let v = random_orthonormal(rng, n, r);
    let s = DMatrix::from_diagonal(&random_vector(rng, r, slo, shi));
    u * s * v.transpose()
}

/// A random constrained system drawn by the self-check suites, exposed so
/// property tests elsewhere can sample the same family.
#[derive(Debug, Clone)]
pub struct RandomSystem {
    pub mass: DMatrix<f64>,
    pub jac: JacobianMatrix,
    pub bundle: ProjectionBundle,
    pub qdot: DVector<f64>,
    pub n: usize,
    pub m: usize,
    /// Exact rank the Jacobian was constructed with.
    pub rank: usize,
}

/// Random constrained system: n in [1,12], m in [0,n+2], any rank up to
/// min(m,n), singular values and mass eigenvalues bounded away from zero so
/// rank decisions are unambiguous.
fn draw_system(rng: &mut ChaCha8Rng) -> Result<RandomSystem> {
    let n = rng.random_range(1..=12usize);
    let m = rng.random_range(0..=n + 2);
    let rmax = m.min(n);
    let r = if rmax == 0 { 0 } else { rng.random_range(0..=rmax) };
    let a = random_rank_matrix(rng, m, n, r, 0.5, 2.0);
    let mass = random_spd(rng, n, 0.3, 3.0);
    let jac = JacobianMatrix::new(a)?;
    let bundle = ProjectionBundle::build(&jac, None, &mass, NuPolicy::GeometricMean)?;
    let qdot = random_vector(rng, n, -3.0, 3.0);
    Ok(RandomSystem { mass, jac, bundle, qdot, n, m, rank: r })
}

/// Deterministic draw from the suite family: n in [1,12], any rank,
/// singular values in [0.5, 2], mass eigenvalues in [0.3, 3].
pub fn random_system(seed: u64) -> Result<RandomSystem> {
    draw_system(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Full-row-rank draw with unit-scale operators: n in [2,6], m <= n,
/// singular values in [0.5, 1.5], mass eigenvalues in [0.5, 2]. The
/// impact-space inertia of such a system is positive definite.
pub fn random_full_rank_system(seed: u64) -> Result<RandomSystem> {
    draw_normalized(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn rel(residual: f64, scale: f64) -> f64 {
    residual / (1.0 + scale)
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut eigs: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

fn condition_number(mc: &DMatrix<f64>) -> f64 {
    let eigs = sorted_eigenvalues(mc);
    eigs[0] / eigs[eigs.len() - 1]
}

fn projections_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rec = Recorder::new();
    for k in 0..opts.count {
        let mut rng = case_rng(opts.seed, 0x50_52_4f_4a, k);
        let sys = draw_system(&mut rng)?;
        let RandomSystem { mass, jac, bundle, qdot, n, m, rank } = &sys;
        let (n, m, r) = (*n, *m, *rank);
        let a = &bundle.jac;
        let pinv = &bundle.jac_pinv;
        let p = &bundle.p;
        let eye = DMatrix::identity(n, n);

        // Pseudo-inverse: the four defining identities.
        let penrose = [
            rel((a * pinv * a - a).norm(), a.norm()),
            rel((pinv * a * pinv - pinv).norm(), pinv.norm()),
            rel(((a * pinv).transpose() - a * pinv).norm(), 1.0),
            rel(((pinv * a).transpose() - pinv * a).norm(), 1.0),
        ];
        rec.note("pinv_penrose", ALG_TOL, penrose.iter().cloned().fold(0.0, f64::max));

        // Orthogonal projector: symmetric, idempotent, annihilates A.
        let proj = [
            rel((p - p.transpose()).norm(), 1.0),
            rel((p * p - p).norm(), 1.0),
            rel((a * p).norm(), a.norm()),
        ];
        rec.note("projector_algebra", ALG_TOL, proj.iter().cloned().fold(0.0, f64::max));
        rec.note("projector_rank_trace", TRACE_TOL, (p.trace() - (n - r) as f64).abs());

        // Rate terms for a random Jacobian velocity.
        let adot = gaussian(&mut rng, m, n);
        let (lam, omega) = jacobian_rate_terms(jac, &adot, p)?;
        rec.note("rate_skew", ALG_TOL, rel((&omega + omega.transpose()).norm(), omega.norm()));
        let qdot_adm = p * qdot;
        let rate = [
            rel((lam.transpose() * p).norm(), lam.norm()),
            rel((lam.transpose() * &qdot_adm).norm(), lam.norm() * qdot_adm.norm()),
            rel(
                ((&omega - &lam) * &qdot_adm).norm(),
                (omega.norm() + lam.norm()) * qdot_adm.norm(),
            ),
        ];
        rec.note("rate_annihilation", ALG_TOL, rate.iter().cloned().fold(0.0, f64::max));

        // Central difference of P along A(t) = A + t Adot. Only meaningful
        // while the rank cannot jump, i.e. at full row rank.
        if r == m && m >= 1 {
            let delta = 1e-6;
            let p_fwd =
                orthogonal_projector(&JacobianMatrix::new(a + &adot * delta)?)?;
            let p_bwd =
                orthogonal_projector(&JacobianMatrix::new(a - &adot * delta)?)?;
            let pdot_fd = (p_fwd - p_bwd) / (2.0 * delta);
            let pdot = &lam + lam.transpose();
            rec.note("rate_matches_difference", FD_TOL, rel((&pdot_fd - &pdot).norm(), pdot.norm()));
        }

        // Constraint inertia: SPD, spectrum = nonzero spectrum of P M P
        // plus nu on the annihilated subspace.
        let mc = &bundle.mc;
        rec.note_ok("inertia_spd", nalgebra::Cholesky::new(mc.clone()).is_some());
        let rank_p = n - r;
        let mo = {
            let mo = p * mass * p;
            (&mo + mo.transpose()) * 0.5
        };
        let mut expected: Vec<f64> = sorted_eigenvalues(&mo)
            .into_iter()
            .take(rank_p)
            .collect();
        expected.extend(std::iter::repeat(bundle.nu).take(n - rank_p));
        expected.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let actual = sorted_eigenvalues(mc);
        let spectrum_resid = expected
            .iter()
            .zip(actual.iter())
            .map(|(e, a)| (e - a).abs() / (1.0 + e.abs()))
            .fold(0.0, f64::max);
        rec.note("inertia_spectrum", SPECTRUM_TOL, spectrum_resid);

        // Inverse identities of the constrained inertia.
        let mc_inv = nalgebra::Cholesky::new(mc.clone())
            .ok_or_else(|| Error::internal("constraint inertia lost positive definiteness"))?
            .inverse();
        let inv_resid = [
            rel((&mo * &mc_inv - p).norm(), 1.0),
            rel(((&eye - p) * &mc_inv * bundle.nu - (&eye - p)).norm(), 1.0),
            rel((&mc_inv * p - &bundle.mo_pinv).norm(), bundle.mo_pinv.norm()),
            rel((&bundle.mo_pinv - bundle.mo_pinv.transpose()).norm(), bundle.mo_pinv.norm()),
        ];
        rec.note("inertia_inverse", ALG_TOL, inv_resid.iter().cloned().fold(0.0, f64::max));

        // The geometric-mean weight minimizes cond(M_c) among the tested
        // alternatives whenever both subspaces are present.
        if rank_p >= 1 && rank_p <= n - 1 {
            let cond_geo = condition_number(mc);
            let mut worst = 0.0f64;
            for factor in [8.0, 0.125] {
                let (mc_alt, _, _) =
                    constraint_inertia(mass, p, NuPolicy::Fixed(bundle.nu * factor))?;
                let cond_alt = condition_number(&mc_alt);
                worst = worst.max(cond_geo / cond_alt - 1.0);
            }
            rec.note("inertia_weight_optimal", COND_SLACK, worst.max(0.0));
        }

        // Oblique projector algebra.
        let s = &bundle.s;
        let obl = [
            rel((s * s - s).norm(), s.norm()),
            rel((s * p).norm(), s.norm()),
            rel((p * s.transpose()).norm(), s.norm()),
            rel((s * (&eye - p) - s).norm(), s.norm()),
            rel(((&eye - p) * s - (&eye - p)).norm(), s.norm()),
        ];
        rec.note("oblique_algebra", ALG_TOL, obl.iter().cloned().fold(0.0, f64::max));

        // M S is symmetric PSD and bounded by M.
        let ms = mass * s;
        let sym = [
            rel((&ms - s.transpose() * mass).norm(), ms.norm()),
            rel((&ms - s.transpose() * mass * s).norm(), ms.norm()),
        ];
        rec.note("oblique_mass_symmetric", ALG_TOL, sym.iter().cloned().fold(0.0, f64::max));
        let psd = [
            rel((-min_eigenvalue(&ms)).max(0.0), mass.norm()),
            rel((-min_eigenvalue(&(mass - &ms))).max(0.0), mass.norm()),
        ];
        rec.note("oblique_mass_bounded", ALG_TOL, psd.iter().cloned().fold(0.0, f64::max));

        // Reflection squares to the identity.
        let rr = &bundle.r * &bundle.r;
        rec.note(
            "reflection_involution",
            ALG_TOL,
            rel((&rr - &eye).norm(), bundle.r.norm() * bundle.r.norm()),
        );

        // Momentum maps tying M, S and the constrained inverse together.
        let minv = nalgebra::Cholesky::new(mass.clone())
            .ok_or_else(|| Error::internal("mass draw lost positive definiteness"))?
            .inverse();
        let mom = [
            rel((mass * &bundle.mo_pinv - (&eye - s.transpose())).norm(), 1.0 + s.norm()),
            rel(
                ((&eye - s) * &minv - &bundle.mo_pinv).norm(),
                bundle.mo_pinv.norm() + minv.norm(),
            ),
            rel(
                (&minv * (&eye - s.transpose()) - &bundle.mo_pinv).norm(),
                bundle.mo_pinv.norm() + minv.norm(),
            ),
        ];
        rec.note("momentum_maps", ALG_TOL, mom.iter().cloned().fold(0.0, f64::max));

        // Constrained dynamics on an admissible velocity.
        let h0 = random_vector(&mut rng, n, -2.0, 2.0);
        let u = random_vector(&mut rng, n, -2.0, 2.0);
        let bias = h0.clone();
        let dynamics = SystemDynamics::constant_mass(
            mass.clone(),
            Box::new(move |_q: &DVector<f64>, _qd: &DVector<f64>| bias.clone()),
        );
        let bundle_rates = ProjectionBundle::build(jac, Some(&adot), mass, NuPolicy::GeometricMean)?;
        let q0 = random_vector(&mut rng, n, -1.0, 1.0);
        let state = GeneralizedState {
            t: 0.0,
            q: q0,
            qdot: qdot_adm.clone(),
            active_set: Vec::new(),
        };
        let (qddot, qddot_free) = constrained_acceleration(&dynamics, &bundle_rates, &state, &u)?;
        if r == m && m >= 1 {
            rec.note(
                "acceleration_on_constraint",
                ALG_TOL,
                rel(
                    (a * &qddot + &adot * &qdot_adm).norm(),
                    a.norm() * qddot.norm() + adot.norm() * qdot_adm.norm(),
                ),
            );
        }
        let split = (&eye - &bundle_rates.s) * &qddot_free
            + &bundle_rates.s * (&bundle_rates.omega * &qdot_adm);
        rec.note(
            "acceleration_oblique_split",
            ALG_TOL,
            rel((&qddot - split).norm(), qddot.norm() + qddot_free.norm()),
        );

        let (force, lam_force) = constraint_force(&dynamics, &bundle_rates, &state, &u)?;
        rec.note(
            "force_newton_closure",
            ALG_TOL,
            rel(
                (mass * &qddot + &h0 - &u - &force).norm(),
                mass.norm() * qddot.norm() + h0.norm() + u.norm() + force.norm(),
            ),
        );
        rec.note(
            "force_powerless",
            ALG_TOL,
            rel(force.dot(&qdot_adm).abs(), force.norm() * qdot_adm.norm()),
        );
        rec.note(
            "force_in_constraint_range",
            ALG_TOL,
            rel((a.transpose() * &lam_force - &force).norm(), force.norm()),
        );
    }
    Ok(SuiteReport { suite: "projections", cases: opts.count, stats: rec.stats })
}

fn impacts_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rec = Recorder::new();
    for k in 0..opts.count {
        let mut rng = case_rng(opts.seed, 0x49_4d_50_43, k);
        let sys = draw_system(&mut rng)?;
        let e = match k % 4 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        };
        let i_u = if k % 3 == 0 {
            random_vector(&mut rng, sys.n, -2.0, 2.0)
        } else {
            DVector::zeros(sys.n)
        };
        let has_input = i_u.iter().any(|x| *x != 0.0);
        let prob = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            sys.qdot.clone(),
            RestitutionLaw::Global(e),
        )?
        .with_impulse_input(i_u.clone())?;
        let record = resolve_impact(&prob)?;
        let a = &sys.bundle.jac;
        let s = &sys.bundle.s;
        let vel_scale = a.norm() * (record.qdot_plus.norm() + sys.qdot.norm());

        // The input impulse cannot move the constraint-space velocity, so
        // the law holds with or without it.
        rec.note(
            "law_satisfaction",
            ALG_TOL,
            rel((a * &record.qdot_plus + a * &sys.qdot * e).norm(), vel_scale),
        );

        // Impulse balance, both as momentum bookkeeping and in the closed
        // form through the oblique projector. This is where an injected
        // sign fault must be caught.
        let mut i_f = record.i_f.clone();
        if opts.fault == Some(Fault::FlipImpulseSign) {
            i_f = -i_f;
        }
        let closed = s.transpose() * &record.p_minus * (-(1.0 + e)) - s.transpose() * &i_u;
        let balance = [
            rel((&i_f - &closed).norm(), closed.norm()),
            rel(
                (&sys.mass * (&record.qdot_plus - &sys.qdot) - &i_u - &i_f).norm(),
                record.p_minus.norm() + record.p_plus.norm(),
            ),
        ];
        rec.note("impulse_balance", ALG_TOL, balance.iter().cloned().fold(0.0, f64::max));

        // Impulse lies in the row space of A; multipliers scatter back.
        let scatter = [
            rel((&sys.bundle.p * &record.i_f).norm(), record.i_f.norm()),
            rel(
                (a.transpose() * &record.i_lambda - &record.i_f).norm(),
                record.i_f.norm(),
            ),
        ];
        rec.note("impulse_in_row_space", ALG_TOL, scatter.iter().cloned().fold(0.0, f64::max));

        if !has_input {
            let eye = DMatrix::identity(sys.n, sys.n);
            let map = &sys.bundle.r.transpose() * e + (&eye - s.transpose()) * (1.0 - e);
            rec.note(
                "momentum_reflection_map",
                ALG_TOL,
                rel(
                    (&record.p_plus - map * &record.p_minus).norm(),
                    record.p_minus.norm(),
                ),
            );
        }

        // Elastic impacts are involutions, plastic ones are idempotent, and
        // admissible velocities pass through untouched.
        let elastic = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            sys.qdot.clone(),
            RestitutionLaw::Global(1.0),
        )?;
        let first = resolve_impact(&elastic)?;
        let back = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            first.qdot_plus.clone(),
            RestitutionLaw::Global(1.0),
        )?;
        let second = resolve_impact(&back)?;
        rec.note(
            "elastic_involution",
            ALG_TOL,
            rel((&second.qdot_plus - &sys.qdot).norm(), sys.qdot.norm()),
        );

        let plastic = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            sys.qdot.clone(),
            RestitutionLaw::Global(0.0),
        )?;
        let once = resolve_impact(&plastic)?;
        let again = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            once.qdot_plus.clone(),
            RestitutionLaw::Global(0.0),
        )?;
        let twice = resolve_impact(&again)?;
        rec.note(
            "plastic_idempotent",
            ALG_TOL,
            rel((&twice.qdot_plus - &once.qdot_plus).norm(), once.qdot_plus.norm()),
        );

        let qdot_adm = &sys.bundle.p * &sys.qdot;
        let through = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            qdot_adm.clone(),
            RestitutionLaw::Global(e),
        )?;
        let passed = resolve_impact(&through)?;
        rec.note(
            "admissible_passthrough",
            ALG_TOL,
            rel((&passed.qdot_plus - &qdot_adm).norm(), qdot_adm.norm()),
        );

        // A scalar matrix E = eI must reproduce the scalar law exactly,
        // rank-deficient Jacobians included.
        if sys.m > 0 {
            let e_mat = DMatrix::identity(sys.m, sys.m) * e;
            let as_matrix = ImpactProblem::new(
                sys.mass.clone(),
                sys.bundle.clone(),
                sys.qdot.clone(),
                RestitutionLaw::Matrix(e_mat),
            )?
            .with_impulse_input(i_u.clone())?;
            let matrix_rec = resolve_impact(&as_matrix)?;
            rec.note(
                "matrix_scalar_equivalence",
                ALG_TOL,
                rel(
                    (&matrix_rec.qdot_plus - &record.qdot_plus).norm(),
                    record.qdot_plus.norm(),
                ),
            );
        }

        // General symmetric matrix law at full row rank: contact-space
        // velocities reverse through E exactly.
        if sys.m >= 1 && sys.rank == sys.m {
            let w = gaussian(&mut rng, sys.m, sys.m).map(|x: f64| x.abs().min(1.0) * 0.6);
            let e_mat = (&w + w.transpose()) * 0.5;
            let matrix_prob = ImpactProblem::new(
                sys.mass.clone(),
                sys.bundle.clone(),
                sys.qdot.clone(),
                RestitutionLaw::Matrix(e_mat.clone()),
            )?
            .with_allow_inconsistent(true);
            let matrix_rec = resolve_impact(&matrix_prob)?;
            let phidot_minus = a * &sys.qdot;
            let phidot_plus = a * &matrix_rec.qdot_plus;
            rec.note(
                "matrix_law_satisfaction",
                ALG_TOL,
                rel(
                    (&phidot_plus + &e_mat * &phidot_minus).norm(),
                    phidot_minus.norm() * (1.0 + e_mat.norm()),
                ),
            );
        }

        // Two point masses on a line, closed-form exchange.
        let m1: f64 = rng.random_range(0.1..10.0);
        let m2: f64 = rng.random_range(0.1..10.0);
        let v1: f64 = rng.random_range(-5.0..5.0);
        let v2: f64 = rng.random_range(-5.0..5.0);
        let e2: f64 = rng.random_range(0.0..1.0);
        let mass2 = DMatrix::from_diagonal(&DVector::from_row_slice(&[m1, m2]));
        let jac2 = JacobianMatrix::new(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]))?;
        let bundle2 = ProjectionBundle::build(&jac2, None, &mass2, NuPolicy::GeometricMean)?;
        let prob2 = ImpactProblem::new(
            mass2,
            bundle2,
            DVector::from_row_slice(&[v1, v2]),
            RestitutionLaw::Global(e2),
        )?;
        let rec2 = resolve_impact(&prob2)?;
        let rush = v2 - v1;
        let v1_ref = v1 + (1.0 + e2) * m2 / (m1 + m2) * rush;
        let v2_ref = v2 - (1.0 + e2) * m1 / (m1 + m2) * rush;
        let tb = [
            rel((rec2.qdot_plus[0] - v1_ref).abs(), v1_ref.abs()),
            rel((rec2.qdot_plus[1] - v2_ref).abs(), v2_ref.abs()),
        ];
        rec.note("two_body_closed_form", TWO_BODY_TOL, tb.iter().cloned().fold(0.0, f64::max));
    }
    Ok(SuiteReport { suite: "impacts", cases: opts.count, stats: rec.stats })
}

fn energy_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rec = Recorder::new();
    for k in 0..opts.count {
        let mut rng = case_rng(opts.seed, 0x45_4e_52_47, k);
        let sys = draw_system(&mut rng)?;
        let e = match k % 4 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        };
        let i_u = if k % 2 == 0 {
            random_vector(&mut rng, sys.n, -2.0, 2.0)
        } else {
            DVector::zeros(sys.n)
        };
        let has_input = i_u.iter().any(|x| *x != 0.0);
        let prob = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            sys.qdot.clone(),
            RestitutionLaw::Global(e),
        )?
        .with_impulse_input(i_u.clone())?;
        let record = resolve_impact(&prob)?;
        let k_scale = 1.0 + record.k_minus.abs().max(record.k_plus.abs());

        // Direct route against the operator closed form, recomputed here.
        let s_qd = &sys.bundle.s * &sys.qdot;
        let mut w_closed = -0.5 * (1.0 - e * e) * (&sys.mass * &s_qd).dot(&s_qd);
        if has_input {
            let eye = DMatrix::identity(sys.n, sys.n);
            w_closed += 0.5 * (&sys.bundle.mo_pinv * &i_u).dot(&i_u)
                + ((&eye - sys.bundle.s.transpose()) * &i_u).dot(&sys.qdot);
        }
        rec.note(
            "energy_two_routes",
            ALG_TOL,
            (record.w_loss - w_closed).abs() / k_scale,
        );
        rec.note_ok("energy_audit_accepts", energy_audit(&prob, &record).is_ok());

        if !has_input {
            // Passive scalar impacts only dissipate.
            rec.note("passive_dissipation", ALG_TOL, record.w_loss.max(0.0) / k_scale);
            rec.note("passive_energy_ratio", ALG_TOL, (record.gamma - 1.0).max(0.0));

            // W equals the impulse working through the mean velocity.
            rec.note(
                "work_along_mean_velocity",
                ALG_TOL,
                (record.w_loss - record.i_f.dot(&record.qdot_bar)).abs() / k_scale,
            );

            // Row-space form of the same work, scaled by the restitution.
            if e <= 0.95 {
                let phidot = &sys.bundle.jac * &sys.qdot;
                let lhs = record.i_lambda.dot(&phidot);
                let rhs = 2.0 * record.w_loss / (1.0 - e);
                rec.note(
                    "work_through_multipliers",
                    ALG_TOL,
                    (lhs - rhs).abs() / (1.0 + lhs.abs().max(rhs.abs())),
                );
            }
        }

        // Matrix law: the loss is a quadratic form of the contact-space
        // velocity in the impact-space inertia Q.
        if sys.m >= 1 {
            let w = gaussian(&mut rng, sys.m, sys.m).map(|x: f64| x.abs().min(1.0) * 0.7);
            let e_mat = (&w + w.transpose()) * 0.5;
            let matrix_prob = ImpactProblem::new(
                sys.mass.clone(),
                sys.bundle.clone(),
                sys.qdot.clone(),
                RestitutionLaw::Matrix(e_mat.clone()),
            )?
            .with_allow_inconsistent(true);
            let matrix_rec = resolve_impact(&matrix_prob)?;
            let g = &sys.bundle.s * &sys.bundle.jac_pinv;
            let q_op = {
                let q = g.transpose() * &sys.mass * &g;
                (&q + q.transpose()) * 0.5
            };
            let phidot = &sys.bundle.jac * &sys.qdot;
            let w_form = 0.5
                * ((&e_mat * &q_op * &e_mat * &phidot).dot(&phidot)
                    - (&q_op * &phidot).dot(&phidot));
            let m_scale = 1.0 + matrix_rec.k_minus.abs().max(matrix_rec.k_plus.abs());
            rec.note(
                "matrix_energy_quadratic_form",
                ALG_TOL,
                (matrix_rec.w_loss - w_form).abs() / m_scale,
            );
        }
    }
    Ok(SuiteReport { suite: "energy", cases: opts.count, stats: rec.stats })
}

/// Draw tuned for the feasibility tests: full row rank, unit-scale
/// operators, so the impact-space inertia is well conditioned.
fn draw_normalized(rng: &mut ChaCha8Rng) -> Result<RandomSystem> {
    let n = rng.random_range(2..=6usize);
    let m = rng.random_range(1..=n);
    let a = random_rank_matrix(rng, m, n, m, 0.5, 1.5);
    let mass = random_spd(rng, n, 0.5, 2.0);
    let jac = JacobianMatrix::new(a)?;
    let bundle = ProjectionBundle::build(&jac, None, &mass, NuPolicy::GeometricMean)?;
    let qdot = random_vector(rng, n, -3.0, 3.0);
    Ok(RandomSystem { mass, jac, bundle, qdot, n, m, rank: m })
}

fn random_restitution_matrix(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let w = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..1.0));
    (&w + w.transpose()) * 0.5
}

/// Largest eigenvalue of `E Q E − Q` for `E = c E0`; strictly increasing
/// in `c` when `Q` is positive definite.
fn qmi_eigenvalue(q: &DMatrix<f64>, e0: &DMatrix<f64>, c: f64) -> f64 {
    let e = e0 * c;
    let formed = &e * q * &e - q;
    let sym = (&formed + formed.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Bisects the scale of `E = c E0` until the extreme eigenvalue of the
/// quadratic test lands inside `[lo, hi]`. Returns the scale, or `None`
/// when the window cannot be reached (degenerate draw).
fn bisect_to_window(
    q: &DMatrix<f64>,
    e0: &DMatrix<f64>,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    debug_assert!(lo < hi);
    let mut c_lo = 0.0f64;
    let mut c_hi = 1.0f64;
    let mut grow = 0;
    while qmi_eigenvalue(q, e0, c_hi) < hi {
        c_lo = c_hi;
        c_hi *= 2.0;
        grow += 1;
        if grow > 80 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (c_lo + c_hi);
        let val = qmi_eigenvalue(q, e0, mid);
        if val >= lo && val <= hi {
            return Some(mid);
        }
        if val > hi {
            c_hi = mid;
        } else {
            c_lo = mid;
        }
        if c_hi - c_lo < f64::EPSILON * c_hi.max(1.0) {
            return None;
        }
    }
    None
}

fn consistency_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rec = Recorder::new();
    for k in 0..opts.count {
        let mut rng = case_rng(opts.seed, 0x43_4f_4e_53, k);
        let sys = draw_system(&mut rng)?;

        if sys.m >= 1 {
            // Arbitrary scales: the two tests must agree everywhere.
            let scale = [0.3, 1.0, 3.0, 10.0][k % 4];
            let e_mat = random_restitution_matrix(&mut rng, sys.m) * scale;
            rec.note_ok(
                "tests_agree_random",
                check_consistency(&sys.mass, &sys.bundle, &e_mat).is_ok(),
            );

            // A passive scalar matrix is always feasible.
            let e: f64 = rng.random_range(0.0..1.0);
            let scalar = DMatrix::identity(sys.m, sys.m) * e;
            match check_consistency(&sys.mass, &sys.bundle, &scalar) {
                Ok(rep) => rec.note_ok("scalar_feasible", rep.feasible),
                Err(_) => rec.note_ok("scalar_feasible", false),
            }

            // The edges of the passive range sit exactly on the boundary.
            for (name, edge) in [
                ("zero_matrix_feasible", DMatrix::zeros(sys.m, sys.m)),
                ("identity_matrix_feasible", DMatrix::identity(sys.m, sys.m)),
            ] {
                match check_consistency(&sys.mass, &sys.bundle, &edge) {
                    Ok(rep) => rec.note_ok(name, rep.feasible),
                    Err(_) => rec.note_ok(name, false),
                }
            }
        }

        // Knife-edge constructions: scale a random matrix until the
        // quadratic test's eigenvalue is within a decade of zero, on both
        // sides, and demand the two tests still agree.
        if k % 20 == 0 {
            let norm_sys = draw_normalized(&mut rng)?;
            let e0 = random_restitution_matrix(&mut rng, norm_sys.m);
            if e0.norm() < 1e-3 {
                continue;
            }
            let g = &norm_sys.bundle.s * &norm_sys.bundle.jac_pinv;
            let q_op = {
                let q = g.transpose() * &norm_sys.mass * &g;
                (&q + q.transpose()) * 0.5
            };

            // Feasible side: any clearly negative eigenvalue keeps both
            // tests on the feasible verdict.
            if let Some(c) = bisect_to_window(&q_op, &e0, -1e-8, -1e-9) {
                match check_consistency(&norm_sys.mass, &norm_sys.bundle, &(&e0 * c)) {
                    Ok(rep) => rec.note_ok("boundary_feasible_side", rep.feasible),
                    Err(_) => rec.note_ok("boundary_feasible_side", false),
                }
            }

            // Infeasible side: aim far enough above both thresholds that
            // the block test cannot round the verdict away.
            let probe = check_consistency(&norm_sys.mass, &norm_sys.bundle, &e0)?;
            let kappa = 1.0 + (&norm_sys.mass * &g * &e0).norm_squared();
            let floor = (10.0 * probe.qmi_threshold)
                .max(30.0 * kappa * probe.lmi_threshold)
                .max(1e-9);
            if let Some(c) = bisect_to_window(&q_op, &e0, floor, 10.0 * floor) {
                match check_consistency(&norm_sys.mass, &norm_sys.bundle, &(&e0 * c)) {
                    Ok(rep) => rec.note_ok("boundary_infeasible_side", !rep.feasible),
                    Err(_) => rec.note_ok("boundary_infeasible_side", false),
                }
            }
        }
    }
    Ok(SuiteReport { suite: "qmi-lmi", cases: opts.count, stats: rec.stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts() -> VerifyOptions {
        VerifyOptions { seed: 7, count: 60, fault: None }
    }

    #[test]
    fn all_suites_pass_on_random_draws() {
        let reports = run(Suite::All, &small_opts()).unwrap();
        assert_eq!(reports.len(), 4);
        for rep in &reports {
            assert!(
                rep.passed(),
                "suite {} failed:\n{}",
                rep.suite,
                format_reports(std::slice::from_ref(rep))
            );
        }
        assert!(all_passed(&reports));
    }

    #[test]
    fn reports_are_deterministic() {
        let a = format_reports(&run(Suite::All, &small_opts()).unwrap());
        let b = format_reports(&run(Suite::All, &small_opts()).unwrap());
        assert_eq!(a, b);
        assert!(a.contains("suite projections"));
        assert!(a.contains("two_body_closed_form"));
    }

    #[test]
    fn different_seeds_draw_different_cases() {
        let a = format_reports(&run(Suite::Projections, &small_opts()).unwrap());
        let mut other = small_opts();
        other.seed = 8;
        let b = format_reports(&run(Suite::Projections, &other).unwrap());
        assert_ne!(a, b, "max residuals should differ across seeds");
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = VerifyOptions { seed: 7, count: 20, fault: Some(Fault::FlipImpulseSign) };
        let reports = run(Suite::Impacts, &opts).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(!reports[0].passed());
        let stat = reports[0]
            .stats
            .iter()
            .find(|s| s.name == "impulse_balance")
            .unwrap();
        assert!(stat.violations > 0);
        assert!(!all_passed(&reports));
    }

    #[test]
    fn zero_cases_rejected() {
        let opts = VerifyOptions { seed: 0, count: 0, fault: None };
        assert!(run(Suite::All, &opts).is_err());
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!(Suite::parse("projections").unwrap(), Suite::Projections);
        assert_eq!(Suite::parse("all").unwrap(), Suite::All);
        assert!(Suite::parse("bogus").is_err());
    }
}
