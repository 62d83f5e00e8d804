//! End-to-end checks of the solver stack. Each test covers one numbered
//! behavior, prints a single `criterion NN <name>: PASS|FAIL` line, and on
//! failure panics with per-case diagnostics.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsmech::impact::{
    resolve_impact_global, resolve_impact_matrix, ImpactProblem, RestitutionLaw, RestitutionSpec,
};
use nsmech::integrate::{rk4_step, Integrator, Method};
use nsmech::jacobian::{jacobian_rate_terms, orthogonal_projector, JacobianMatrix};
use nsmech::models::{build_model, model_names, particle_on_circle, Model, ParticleOnCircleParams};
use nsmech::output::write_run_outputs;
use nsmech::projection::{constraint_inertia, NuPolicy, ProjectionBundle};
use nsmech::restitution::check_consistency;
use nsmech::scenario::parse_scenario;
use nsmech::sim::{EventKind, Simulation};
use nsmech::verify::{self, Suite, VerifyOptions};

fn report(number: u32, name: &str, failures: &[String]) {
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {name}: {verdict}");
    if !failures.is_empty() {
        let shown: Vec<&str> = failures.iter().take(10).map(String::as_str).collect();
        panic!(
            "criterion {number:02} {name}: {} failure(s)\n{}",
            failures.len(),
            shown.join("\n")
        );
    }
}

fn sym_eigs_desc(a: &DMatrix<f64>) -> Vec<f64> {
    let s = (a + a.transpose()) * 0.5;
    let mut e: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().cloned().collect();
    e.sort_by(|x, y| y.partial_cmp(x).unwrap());
    e
}

/// Condition number of a symmetric positive definite matrix.
fn spd_cond(a: &DMatrix<f64>) -> f64 {
    let e = sym_eigs_desc(a);
    e[0] / e[e.len() - 1]
}

/// Random-system draw guaranteed to carry at least one constraint row.
fn draw_with_rows(seed: u64) -> verify::RandomSystem {
    let mut s = seed;
    loop {
        let sys = verify::random_system(s).expect("random draw");
        if sys.m >= 1 {
            return sys;
        }
        s = s.wrapping_add(0x9e37_79b9);
    }
}

// ---------------------------------------------------------------------------
// 1. Operator identities across 1000 random systems.

#[test]
fn criterion_01_projection_identities() {
    let mut failures = Vec::new();
    let start = Instant::now();
    let opts = VerifyOptions { seed: 20260822, count: 1000, fault: None };
    match verify::run(Suite::Projections, &opts) {
        Ok(reports) => {
            assert_eq!(reports.len(), 1);
            let rep = &reports[0];
            if rep.cases != 1000 {
                failures.push(format!("expected 1000 cases, ran {}", rep.cases));
            }
            if !rep.passed() {
                failures.push(verify::format_reports(&reports));
            }
        }
        Err(e) => failures.push(format!("identity sweep failed to run: {e}")),
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        failures.push(format!("runtime {elapsed:.2}s exceeds 10s budget"));
    }
    report(1, "projection identities", &failures);
}

// ---------------------------------------------------------------------------
// 2. The regularization weight minimizes the conditioning of the
//    constrained inertia; any weight outside the spectral bracket is
//    strictly worse.

#[test]
fn criterion_02_inertia_conditioning() {
    let mut failures = Vec::new();
    let mut accepted = 0usize;
    let mut seed = 31_000u64;
    let mut attempts = 0usize;
    while accepted < 200 && attempts < 4000 {
        attempts += 1;
        seed = seed.wrapping_add(1);
        let sys = match verify::random_system(seed) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("draw {seed}: {e}"));
                continue;
            }
        };
        // Need both a nontrivial kernel and a nontrivial row space so the
        // bracket and the regularized subspace are both present.
        if sys.rank == 0 || sys.rank >= sys.n {
            continue;
        }
        accepted += 1;
        let rank_p = sys.n - sys.rank;
        let mo = &sys.bundle.p * &sys.mass * &sys.bundle.p;
        let eigs = sym_eigs_desc(&mo);
        let lam_max = eigs[0];
        let lam_min_nz = eigs[rank_p - 1];
        let expected = lam_max / lam_min_nz;
        let cond_geo = spd_cond(&sys.bundle.mc);
        if (cond_geo - expected).abs() > 1e-6 {
            failures.push(format!(
                "seed {seed}: cond {cond_geo:.9e} vs bracket ratio {expected:.9e}"
            ));
        }
        for (label, nu) in [("above", 8.0 * lam_max), ("below", lam_min_nz / 8.0)] {
            match constraint_inertia(&sys.mass, &sys.bundle.p, NuPolicy::Fixed(nu)) {
                Ok((mc_alt, _, _)) => {
                    let cond_alt = spd_cond(&mc_alt);
                    if cond_alt <= cond_geo * (1.0 + 1e-9) {
                        failures.push(format!(
                            "seed {seed}: weight {label} bracket gives cond {cond_alt:.6e}, \
                             not above {cond_geo:.6e}"
                        ));
                    }
                }
                Err(e) => failures.push(format!("seed {seed}: fixed weight {label}: {e}")),
            }
        }
    }
    if accepted < 200 {
        failures.push(format!("only {accepted} usable draws in {attempts} attempts"));
    }
    report(2, "constrained inertia conditioning", &failures);
}

// ---------------------------------------------------------------------------
// 3. The rate operators match the finite-difference derivative of the
//    orthogonal projector along the circle model's motion, at second order.

#[test]
fn criterion_03_projector_rate_convergence() {
    let mut failures = Vec::new();
    let params = ParticleOnCircleParams {
        mass: 1.0,
        radius: 1.0,
        gravity: 0.0,
        angle0: 0.7,
        omega0: 1.3,
    };
    let model = particle_on_circle(&params).expect("circle model");
    let omega0 = params.omega0;
    let phase = |t: f64| params.angle0 + omega0 * t;
    let pos = |t: f64| {
        DVector::from_row_slice(&[phase(t).cos(), phase(t).sin()])
    };
    let vel = |t: f64| {
        DVector::from_row_slice(&[-omega0 * phase(t).sin(), omega0 * phase(t).cos()])
    };
    let proj_at = |t: f64| -> DMatrix<f64> {
        let asm = model
            .constraints
            .assemble_jacobian(&pos(t), true, None)
            .expect("assemble");
        orthogonal_projector(&asm.jac).expect("projector")
    };

    let t0 = 0.3;
    let asm = model
        .constraints
        .assemble_jacobian(&pos(t0), true, None)
        .expect("assemble");
    let adot = model
        .constraints
        .assemble_jacobian_dot(&pos(t0), &vel(t0), &asm)
        .expect("jacobian rate");
    let p = orthogonal_projector(&asm.jac).expect("projector");
    let (lambda, omega) = jacobian_rate_terms(&asm.jac, &adot, &p).expect("rate terms");
    let pdot_exact = &lambda + lambda.transpose();

    let steps = [1e-3, 5e-4, 2.5e-4];
    let mut errs = Vec::new();
    for h in steps {
        let fd = (proj_at(t0 + h) - proj_at(t0 - h)) / (2.0 * h);
        errs.push((fd - &pdot_exact).norm());
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        if !(3.7..=4.3).contains(&ratio) {
            failures.push(format!(
                "halving the step scaled the error by {ratio:.3}, expected about 4 \
                 (errors {errs:?})"
            ));
        }
    }

    let h = 1e-6;
    let fd_vel = (proj_at(t0 + h) - proj_at(t0 - h)) / (2.0 * h) * vel(t0);
    let skew_vel = &omega * vel(t0);
    let diff = (fd_vel - skew_vel).amax();
    if diff > 1e-8 {
        failures.push(format!(
            "skew rate times velocity deviates from projector derivative by {diff:.3e}"
        ));
    }
    report(3, "projector rate convergence", &failures);
}

// ---------------------------------------------------------------------------
// 4. Two colliding point masses reproduce the textbook closed form.

#[test]
fn criterion_04_two_body_closed_form() {
    let mut failures = Vec::new();
    for k in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7b0d_1000 + k);
        let m1: f64 = rng.random_range(0.1..10.0);
        let m2: f64 = rng.random_range(0.1..10.0);
        let v1: f64 = rng.random_range(-5.0..5.0);
        let v2: f64 = rng.random_range(-5.0..5.0);
        let e: f64 = match k % 3 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        };
        let mass = DMatrix::from_diagonal(&DVector::from_row_slice(&[m1, m2]));
        let jac = JacobianMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]))
            .expect("jacobian");
        let bundle = ProjectionBundle::build(&jac, None, &mass, NuPolicy::GeometricMean)
            .expect("bundle");
        let prob = ImpactProblem::new(
            mass,
            bundle,
            DVector::from_row_slice(&[v1, v2]),
            RestitutionLaw::Global(e),
        )
        .expect("problem");
        let rec = match resolve_impact_global(&prob) {
            Ok(r) => r,
            Err(err) => {
                failures.push(format!("case {k}: solve failed: {err}"));
                continue;
            }
        };
        let rel = v1 - v2;
        let v1_ref = v1 - (1.0 + e) * m2 / (m1 + m2) * rel;
        let v2_ref = v2 + (1.0 + e) * m1 / (m1 + m2) * rel;
        let d1 = (rec.qdot_plus[0] - v1_ref).abs();
        let d2 = (rec.qdot_plus[1] - v2_ref).abs();
        if d1 > 1e-10 || d2 > 1e-10 {
            failures.push(format!(
                "case {k}: m=({m1:.3},{m2:.3}) v=({v1:.3},{v2:.3}) e={e:.3}: \
                 deviations ({d1:.3e},{d2:.3e})"
            ));
        }
    }
    report(4, "two-body closed form", &failures);
}

// ---------------------------------------------------------------------------
// 5. Bouncing ball: consecutive apex heights decay by the square of the
//    restitution coefficient.

#[test]
fn criterion_05_bounce_apex_ratio() {
    let mut failures = Vec::new();
    let start = Instant::now();
    let model = build_model("bouncing_ball", None).expect("model");
    let mut sim = Simulation::new(model, 1.32);
    sim.integrator = Integrator {
        method: Method::Rk4,
        step_size: 1e-4,
        ..Integrator::default()
    };
    sim.tolerances.event_tol = 1e-10;
    sim.record_trajectory = true;
    let result = sim.run().expect("run");

    let impact_times: Vec<f64> = result
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Impact))
        .map(|e| e.t)
        .collect();
    if impact_times.len() != 6 {
        failures.push(format!(
            "expected 6 impacts before t=1.32, got {}: {impact_times:?}",
            impact_times.len()
        ));
    } else {
        let mut bounds = vec![0.0];
        bounds.extend(&impact_times);
        let mut apex = vec![f64::NEG_INFINITY; 6];
        for s in &result.samples {
            let k = bounds.partition_point(|b| *b <= s.t).saturating_sub(1);
            if k < apex.len() {
                apex[k] = apex[k].max(s.q[0]);
            }
        }
        if (apex[0] - 1.0).abs() > 1e-6 {
            failures.push(format!("first apex {:.9} should be the drop height 1", apex[0]));
        }
        for k in 0..5 {
            let ratio = apex[k + 1] / apex[k];
            if (ratio - 0.25).abs() > 1e-4 {
                failures.push(format!(
                    "apex ratio {}→{}: {ratio:.8} deviates from 0.25 by {:.3e}",
                    k,
                    k + 1,
                    (ratio - 0.25).abs()
                ));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 5.0 {
        failures.push(format!("runtime {elapsed:.2}s exceeds 5s budget"));
    }
    report(5, "bounce apex decay", &failures);
}

// ---------------------------------------------------------------------------
// 6. Impact energy accounting: the kinetic-energy ratio stays in [0, 1],
//    elastic impacts conserve, and the loss matches both the mean-velocity
//    work and the multiplier work.

#[test]
fn criterion_06_impact_energy_accounting() {
    let mut failures = Vec::new();
    for k in 0..1000u64 {
        let sys = draw_with_rows(0x6e60_0000 + k * 7919);
        let mut rng = ChaCha8Rng::seed_from_u64(0xacc6_0000 + k);
        let e: f64 = if k % 5 == 0 { 1.0 } else { rng.random_range(0.0..0.95) };
        let prob = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            sys.qdot.clone(),
            RestitutionLaw::Global(e),
        )
        .expect("problem");
        let rec = match resolve_impact_global(&prob) {
            Ok(r) => r,
            Err(err) => {
                failures.push(format!("case {k}: solve failed: {err}"));
                continue;
            }
        };
        let k_scale = 1.0 + rec.k_minus.abs().max(rec.k_plus.abs());
        if !(-1e-12..=1.0 + 1e-10).contains(&rec.gamma) {
            failures.push(format!("case {k}: energy ratio {} outside [0, 1]", rec.gamma));
        }
        if e == 1.0 && (rec.gamma - 1.0).abs() > 1e-9 {
            failures.push(format!(
                "case {k}: elastic impact ratio deviates by {:.3e}",
                (rec.gamma - 1.0).abs()
            ));
        }
        let mean_work = rec.i_f.dot(&rec.qdot_bar);
        if (rec.w_loss - mean_work).abs() > 1e-9 * k_scale {
            failures.push(format!(
                "case {k}: loss {:.6e} vs mean-velocity work {:.6e}",
                rec.w_loss, mean_work
            ));
        }
        if e < 1.0 {
            let phidot = &sys.bundle.jac * &sys.qdot;
            let lhs = rec.i_lambda.dot(&phidot);
            let rhs = 2.0 * rec.w_loss / (1.0 - e);
            if (lhs - rhs).abs() > 1e-9 * (1.0 + lhs.abs().max(rhs.abs())) {
                failures.push(format!(
                    "case {k}: multiplier work {lhs:.6e} vs scaled loss {rhs:.6e}"
                ));
            }
        }
    }
    report(6, "impact energy accounting", &failures);
}

// ---------------------------------------------------------------------------
// 7. The matrix restitution law collapses to the scalar law for uniform
//    coefficients, and its energy change is the contact-space quadratic
//    form.

#[test]
fn criterion_07_matrix_law_reduction() {
    let mut failures = Vec::new();
    for k in 0..500u64 {
        let sys = draw_with_rows(0x3a70_0000 + k * 104_729);
        let mut rng = ChaCha8Rng::seed_from_u64(0x73a7_0000 + k);
        let m = sys.bundle.nc();

        // Uniform diagonal matrix versus the scalar law.
        let e_scalar = [0.0, 0.3, 0.7, 1.0][(k % 4) as usize];
        let global = resolve_impact_global(
            &ImpactProblem::new(
                sys.mass.clone(),
                sys.bundle.clone(),
                sys.qdot.clone(),
                RestitutionLaw::Global(e_scalar),
            )
            .expect("problem"),
        );
        let uniform = resolve_impact_matrix(
            &ImpactProblem::new(
                sys.mass.clone(),
                sys.bundle.clone(),
                sys.qdot.clone(),
                RestitutionLaw::Matrix(DMatrix::identity(m, m) * e_scalar),
            )
            .expect("problem"),
        );
        match (global, uniform) {
            (Ok(g), Ok(u)) => {
                let dv = (&g.qdot_plus - &u.qdot_plus).amax();
                let di = (&g.i_f - &u.i_f).amax();
                if dv > 1e-10 || di > 1e-10 {
                    failures.push(format!(
                        "case {k}: uniform matrix law deviates from scalar law \
                         (velocity {dv:.3e}, impulse {di:.3e})"
                    ));
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                failures.push(format!("case {k}: uniform comparison failed: {e}"))
            }
        }

        // General diagonal coefficients: energy change equals the
        // contact-space quadratic form.
        let diag = DVector::from_fn(m, |_, _| rng.random_range(0.0..1.2));
        let e_mat = DMatrix::from_diagonal(&diag);
        let prob = ImpactProblem::new(
            sys.mass.clone(),
            sys.bundle.clone(),
            sys.qdot.clone(),
            RestitutionLaw::Matrix(e_mat.clone()),
        )
        .expect("problem")
        .with_allow_inconsistent(true);
        let rec = match resolve_impact_matrix(&prob) {
            Ok(r) => r,
            Err(err) => {
                failures.push(format!("case {k}: diagonal law failed: {err}"));
                continue;
            }
        };
        let g_map = &sys.bundle.s * &sys.bundle.jac_pinv;
        let q_op = {
            let q = g_map.transpose() * &sys.mass * &g_map;
            (&q + q.transpose()) * 0.5
        };
        let phidot = &sys.bundle.jac * &sys.qdot;
        let w_form = 0.5
            * ((&e_mat * &q_op * &e_mat * &phidot).dot(&phidot)
                - (&q_op * &phidot).dot(&phidot));
        let k_scale = 1.0 + rec.k_minus.abs().max(rec.k_plus.abs());
        if (rec.w_loss - w_form).abs() > 1e-9 * k_scale {
            failures.push(format!(
                "case {k}: energy change {:.6e} vs quadratic form {w_form:.6e}",
                rec.w_loss
            ));
        }
    }
    report(7, "matrix law reduction", &failures);
}

// ---------------------------------------------------------------------------
// 8. The quadratic and block feasibility tests agree on 1000 draws,
//    including 50 engineered to sit within 1e-8 of the boundary.

/// Largest eigenvalue of `E Q E − Q` for `E = c E0`; increasing in `c`
/// when `Q` is positive definite.
fn boundary_eig(q: &DMatrix<f64>, e0: &DMatrix<f64>, c: f64) -> f64 {
    let e = e0 * c;
    let formed = &e * q * &e - q;
    sym_eigs_desc(&formed)[0]
}

/// Bisects the scale of `E = c E0` until the extreme eigenvalue lands in
/// `[lo, hi]`; `None` when the window cannot be reached.
fn scale_into_window(
    q: &DMatrix<f64>,
    e0: &DMatrix<f64>,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    let mut c_lo = 0.0f64;
    let mut c_hi = 1.0f64;
    let mut grow = 0;
    while boundary_eig(q, e0, c_hi) < hi {
        c_lo = c_hi;
        c_hi *= 2.0;
        grow += 1;
        if grow > 80 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (c_lo + c_hi);
        let val = boundary_eig(q, e0, mid);
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

#[test]
fn criterion_08_certificate_agreement() {
    let mut failures = Vec::new();

    // Bulk: arbitrary scales, any rank, both tests must agree everywhere.
    for k in 0..950u64 {
        let sys = draw_with_rows(0x8c80_0000 + k * 6151);
        let mut rng = ChaCha8Rng::seed_from_u64(0xc8c8_0000 + k);
        let m = sys.bundle.nc();
        let w = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..1.0));
        let e_mat = (&w + w.transpose()) * 0.5 * [0.3, 1.0, 3.0, 10.0][(k % 4) as usize];
        if let Err(e) = check_consistency(&sys.mass, &sys.bundle, &e_mat) {
            failures.push(format!("draw {k}: tests disagree: {e}"));
        }
    }

    // Boundary: scale a random matrix so the quadratic test's eigenvalue
    // lands within 1e-8 of zero, on a prescribed side, and demand a
    // coherent verdict.
    let mut feasible_done = 0usize;
    let mut infeasible_done = 0usize;
    let mut attempt = 0u64;
    while (feasible_done < 25 || infeasible_done < 25) && attempt < 4000 {
        attempt += 1;
        let sys = match verify::random_full_rank_system(0xb0d7_0000 + attempt) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let g_map = &sys.bundle.s * &sys.bundle.jac_pinv;
        let q_op = {
            let q = g_map.transpose() * &sys.mass * &g_map;
            (&q + q.transpose()) * 0.5
        };
        // Keep only draws whose verdict threshold sits well inside the
        // target window, so the landed eigenvalue is decisive.
        if 1e-10 * (1.0 + q_op.norm()) > 1e-9 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xd00d_0000 + attempt);
        let m = sys.bundle.nc();
        let w = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..1.0));
        let e0 = (&w + w.transpose()) * 0.5;
        if e0.norm() < 1e-3 {
            continue;
        }
        if feasible_done < 25 {
            if let Some(c) = scale_into_window(&q_op, &e0, -1e-8, -1e-9) {
                feasible_done += 1;
                match check_consistency(&sys.mass, &sys.bundle, &(&e0 * c)) {
                    Ok(rep) if rep.feasible => {}
                    Ok(_) => failures.push(format!(
                        "boundary attempt {attempt}: feasible-side case judged infeasible"
                    )),
                    Err(e) => failures.push(format!(
                        "boundary attempt {attempt}: feasible side disagreement: {e}"
                    )),
                }
                continue;
            }
        }
        if infeasible_done < 25 {
            if let Some(c) = scale_into_window(&q_op, &e0, 2e-9, 1e-8) {
                infeasible_done += 1;
                match check_consistency(&sys.mass, &sys.bundle, &(&e0 * c)) {
                    Ok(rep) if !rep.feasible => {}
                    Ok(_) => failures.push(format!(
                        "boundary attempt {attempt}: infeasible-side case judged feasible"
                    )),
                    Err(e) => failures.push(format!(
                        "boundary attempt {attempt}: infeasible side disagreement: {e}"
                    )),
                }
            }
        }
    }
    if feasible_done < 25 || infeasible_done < 25 {
        failures.push(format!(
            "only {feasible_done} feasible-side and {infeasible_done} infeasible-side \
             boundary cases landed in {attempt} attempts"
        ));
    }
    report(8, "feasibility certificate agreement", &failures);
}

// ---------------------------------------------------------------------------
// 9. Duplicating every unilateral row leaves trajectories, impulses, and
//    post-impact velocities unchanged across the model library.

fn duplicated_rows_model(name: &str) -> Model {
    let Model { name, dynamics, constraints, q0, qd0, restitution } =
        build_model(name, None).expect("model");
    let restitution = match restitution {
        RestitutionSpec::Global(e) => RestitutionSpec::Global(e),
        RestitutionSpec::PerContact(v) => {
            let mut w = v.clone();
            w.extend_from_slice(&v);
            RestitutionSpec::PerContact(w)
        }
    };
    Model {
        name,
        dynamics,
        constraints: constraints.duplicate_unilateral(),
        q0,
        qd0,
        restitution,
    }
}

fn opt_vec_diff(a: &Option<Vec<f64>>, b: &Option<Vec<f64>>) -> f64 {
    match (a, b) {
        (Some(x), Some(y)) if x.len() == y.len() => x
            .iter()
            .zip(y)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

#[test]
fn criterion_09_redundant_row_invariance() {
    let mut failures = Vec::new();
    let horizons = [
        ("bouncing_ball", 1.0),
        ("two_mass_line", 1.5),
        ("pendulum_floor", 1.2),
        ("cradle_line", 1.5),
        ("particle_on_circle", 1.0),
    ];
    let mut dup_impacts = 0usize;
    for name in model_names() {
        let t_end = horizons
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
            .unwrap_or(1.0);
        let run_one = |model: Model| {
            let mut sim = Simulation::new(model, t_end);
            sim.integrator = Integrator {
                method: Method::Rk4,
                step_size: 1e-3,
                ..Integrator::default()
            };
            sim.run()
        };
        let base = match run_one(build_model(name, None).expect("model")) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{name}: base run failed: {e}"));
                continue;
            }
        };
        let dup = match run_one(duplicated_rows_model(name)) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{name}: duplicated-row run failed: {e}"));
                continue;
            }
        };
        if base.events.len() != dup.events.len() {
            failures.push(format!(
                "{name}: event count {} vs {}",
                base.events.len(),
                dup.events.len()
            ));
            continue;
        }
        for (i, (a, b)) in base.events.iter().zip(&dup.events).enumerate() {
            if a.kind.as_str() != b.kind.as_str() {
                failures.push(format!(
                    "{name} event {i}: kind {} vs {}",
                    a.kind.as_str(),
                    b.kind.as_str()
                ));
                continue;
            }
            if (a.t - b.t).abs() > 1e-8 {
                failures.push(format!(
                    "{name} event {i}: time {:.12} vs {:.12}",
                    a.t, b.t
                ));
            }
            if let (Some(wa), Some(wb)) = (a.w_loss, b.w_loss) {
                if (wa - wb).abs() > 1e-8 {
                    failures.push(format!(
                        "{name} event {i}: energy change {wa:.9e} vs {wb:.9e}"
                    ));
                }
            }
            for (field, da) in [
                ("qdot_minus", opt_vec_diff(&a.qdot_minus, &b.qdot_minus)),
                ("qdot_plus", opt_vec_diff(&a.qdot_plus, &b.qdot_plus)),
                ("i_f", opt_vec_diff(&a.i_f, &b.i_f)),
            ] {
                if da > 1e-8 {
                    failures.push(format!("{name} event {i}: {field} differs by {da:.3e}"));
                }
            }
            if matches!(b.kind, EventKind::Impact) {
                dup_impacts += 1;
                if b.multipliers_unique != Some(false) {
                    failures.push(format!(
                        "{name} event {i}: duplicated rows should mark the multipliers \
                         non-unique, got {:?}",
                        b.multipliers_unique
                    ));
                }
            }
        }
        let dq = (&base.final_state.q - &dup.final_state.q).amax();
        let dv = (&base.final_state.qdot - &dup.final_state.qdot).amax();
        if dq > 1e-8 || dv > 1e-8 {
            failures.push(format!(
                "{name}: final state differs (position {dq:.3e}, velocity {dv:.3e})"
            ));
        }
    }
    if dup_impacts < 3 {
        failures.push(format!(
            "model library produced only {dup_impacts} duplicated-row impacts; \
             the invariance was not exercised"
        ));
    }
    report(9, "redundant row invariance", &failures);
}

// ---------------------------------------------------------------------------
// 10. A stiff damped-spring contact converges to the impulsive solution as
//     the stiffness grows.

#[test]
fn criterion_10_stiff_spring_limit() {
    let mut failures = Vec::new();
    let e = 0.5f64;
    let m = 1.0f64;
    let g = 10.0f64;
    let v_in = -(2.0 * g * 1.0).sqrt();

    let mass = DMatrix::from_element(1, 1, m);
    let jac = JacobianMatrix::new(DMatrix::from_element(1, 1, 1.0)).expect("jacobian");
    let bundle =
        ProjectionBundle::build(&jac, None, &mass, NuPolicy::GeometricMean).expect("bundle");
    let prob = ImpactProblem::new(
        mass,
        bundle,
        DVector::from_element(1, v_in),
        RestitutionLaw::Global(e),
    )
    .expect("problem");
    let v_ref = resolve_impact_global(&prob).expect("reference").qdot_plus[0];

    let ln_e = e.ln().abs();
    let zeta = ln_e / (std::f64::consts::PI.powi(2) + ln_e.powi(2)).sqrt();

    let mut errors = Vec::new();
    for k_stiff in [1e3f64, 1e4, 1e5] {
        let c = 2.0 * zeta * (k_stiff * m).sqrt();
        let accel = move |_t: f64, q: &DVector<f64>, v: &DVector<f64>| {
            let contact = if q[0] < 0.0 {
                (-k_stiff * q[0] - c * v[0]) / m
            } else {
                0.0
            };
            Ok(DVector::from_element(1, -g + contact))
        };
        let h = 2e-6;
        let mut t = 0.0;
        let mut q = DVector::from_element(1, 0.0);
        let mut v = DVector::from_element(1, v_in);
        let mut exit = None;
        for _ in 0..1_000_000 {
            let (qn, vn) = rk4_step(&accel, t, &q, &v, h).expect("step");
            if q[0] < 0.0 && qn[0] >= 0.0 && vn[0] > 0.0 {
                let f = -q[0] / (qn[0] - q[0]);
                exit = Some(v[0] + f * (vn[0] - v[0]));
                break;
            }
            t += h;
            q = qn;
            v = vn;
        }
        match exit {
            Some(v_out) => errors.push((v_out - v_ref).abs() / v_ref.abs()),
            None => failures.push(format!(
                "stiffness {k_stiff:.0e}: contact never released within the step budget"
            )),
        }
    }
    if errors.len() == 3 {
        if !(errors[0] > errors[1] && errors[1] > errors[2]) {
            failures.push(format!(
                "errors {errors:?} do not decrease monotonically with stiffness"
            ));
        }
        if errors[2] > 0.02 {
            failures.push(format!(
                "relative error {:.4} at the stiffest contact exceeds 2%",
                errors[2]
            ));
        }
    }
    report(10, "stiff spring limit", &failures);
}

// ---------------------------------------------------------------------------
// 11. Fixed seeds and fixed scenarios replay to byte-identical outputs.

#[test]
fn criterion_11_deterministic_replay() {
    let mut failures = Vec::new();
    let scenario = r#"
t_end = 1.1

[model]
name = "bouncing_ball"

[model.params]
restitution = 0.7

[integrator]
method = "rk4"
step_size = 1e-3
"#;

    let dir = tempfile::tempdir().expect("tempdir");
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let cfg = match parse_scenario(scenario, &[]) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("scenario parse failed: {e}"));
                break;
            }
        };
        let mut sim = match cfg.build() {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("scenario build failed: {e}"));
                break;
            }
        };
        sim.record_trajectory = true;
        let result = match sim.run() {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("run failed: {e}"));
                break;
            }
        };
        let csv = dir.path().join(format!("trajectory_{tag}.csv"));
        let jsonl = dir.path().join(format!("events_{tag}.jsonl"));
        match write_run_outputs(&result, Some(&csv), Some(&jsonl)) {
            Ok(summary) => {
                let csv_bytes = std::fs::read(&csv).expect("read trajectory");
                let event_bytes = std::fs::read(&jsonl).expect("read events");
                outputs.push((summary, csv_bytes, event_bytes));
            }
            Err(e) => failures.push(format!("output write failed: {e}")),
        }
    }
    if outputs.len() == 2 {
        if outputs[0].0 != outputs[1].0 {
            failures.push("run summaries differ between identical runs".into());
        }
        if outputs[0].1 != outputs[1].1 {
            failures.push("trajectory files differ between identical runs".into());
        }
        if outputs[0].2 != outputs[1].2 {
            failures.push("event logs differ between identical runs".into());
        }
        if outputs[0].1.is_empty() {
            failures.push("trajectory file is empty".into());
        }
    }

    let opts = VerifyOptions { seed: 42, count: 40, fault: None };
    match (verify::run(Suite::All, &opts), verify::run(Suite::All, &opts)) {
        (Ok(a), Ok(b)) => {
            let ra = verify::format_reports(&a);
            let rb = verify::format_reports(&b);
            if ra != rb {
                failures.push("self-check reports differ between identical seeds".into());
            }
            if !ra.contains("PASS") {
                failures.push(format!("self-check did not pass:\n{ra}"));
            }
        }
        (Err(e), _) | (_, Err(e)) => failures.push(format!("self-check failed to run: {e}")),
    }
    report(11, "deterministic replay", &failures);
}
