//! Python bindings for the nsmech engine.
//!
//! The boundary speaks plain Python lists: matrices go in and come out as
//! `list[list[float]]`, vectors as `list[float]`. Validation errors and
//! refused restitution laws raise `ValueError`; stalled runs and internal
//! cross-check failures raise `RuntimeError`.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nsmech::error::Error;
use nsmech::impact::resolve_impact as resolve;
use nsmech::jacobian::JacobianMatrix;
use nsmech::problem::{build_feasibility, build_problem, ProblemFile};
use nsmech::projection::{NuPolicy, ProjectionBundle};
use nsmech::restitution::check_consistency as check;
use nsmech::scenario::parse_scenario;
use nsmech::verify as vf;
use nsmech::verify::{Suite, VerifyOptions};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Stalled { .. } | Error::InternalConsistency(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn floats(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn dmatrix(data: &[Vec<f64>], ncols_hint: usize, what: &str) -> PyResult<DMatrix<f64>> {
    let ncols = data.first().map_or(ncols_hint, |r| r.len());
    if data.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what}: rows must all have the same length")));
    }
    let mut m = DMatrix::zeros(data.len(), ncols);
    for (i, row) in data.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn problem_file(
    mass: Vec<Vec<f64>>,
    jacobian: Vec<Vec<f64>>,
    qdot_minus: Option<Vec<f64>>,
    restitution: Option<f64>,
    restitution_matrix: Option<Vec<Vec<f64>>>,
    impulse_input: Option<Vec<f64>>,
    rank_tol: Option<f64>,
) -> ProblemFile {
    ProblemFile {
        mass,
        jacobian,
        qdot_minus,
        restitution,
        restitution_matrix,
        impulse_input,
        rank_tol,
        result: None,
    }
}

/// The operator family for one active constraint set.
#[pyclass(frozen, get_all)]
struct ProjectionOperators {
    /// Numerical rank of the constraint Jacobian.
    rank: usize,
    /// Regularization weight used in the constraint inertia.
    nu: f64,
    /// Orthogonal projector onto the constraint null space.
    p: Vec<Vec<f64>>,
    /// Oblique projector splitting velocities at the constraint.
    s: Vec<Vec<f64>>,
    /// Elastic reflection operator.
    r: Vec<Vec<f64>>,
    /// Constraint inertia.
    mc: Vec<Vec<f64>>,
    /// Constrained inverse inertia.
    mo_pinv: Vec<Vec<f64>>,
    /// Pseudo-inverse of the constraint Jacobian.
    jac_pinv: Vec<Vec<f64>>,
    /// Jacobian-rate coupling term (zero without a Jacobian rate).
    rate_lambda: Vec<Vec<f64>>,
    /// Skew part of the rate coupling.
    rate_omega: Vec<Vec<f64>>,
}

#[pyfunction]
#[pyo3(signature = (mass, jacobian, jac_dot = None, rank_tol = None))]
fn projection_operators(
    mass: Vec<Vec<f64>>,
    jacobian: Vec<Vec<f64>>,
    jac_dot: Option<Vec<Vec<f64>>>,
    rank_tol: Option<f64>,
) -> PyResult<ProjectionOperators> {
    let n = mass.len();
    let mass = dmatrix(&mass, n, "mass")?;
    let jac = dmatrix(&jacobian, n, "jacobian")?;
    let jac_dot = match &jac_dot {
        Some(rows) => Some(dmatrix(rows, n, "jac_dot")?),
        None => None,
    };
    let jm = JacobianMatrix::with_rank_tol(jac, rank_tol).map_err(py_err)?;
    let bundle = ProjectionBundle::build(&jm, jac_dot.as_ref(), &mass, NuPolicy::GeometricMean)
        .map_err(py_err)?;
    Ok(ProjectionOperators {
        rank: bundle.rank,
        nu: bundle.nu,
        p: rows(&bundle.p),
        s: rows(&bundle.s),
        r: rows(&bundle.r),
        mc: rows(&bundle.mc),
        mo_pinv: rows(&bundle.mo_pinv),
        jac_pinv: rows(&bundle.jac_pinv),
        rate_lambda: rows(&bundle.lambda),
        rate_omega: rows(&bundle.omega),
    })
}

/// One resolved impulsive event.
#[pyclass(frozen, get_all)]
struct ImpactResult {
    qdot_plus: Vec<f64>,
    /// Constraint impulse in generalized coordinates.
    i_f: Vec<f64>,
    /// Minimum-norm impulse multipliers.
    i_lambda: Vec<f64>,
    /// Generalized momentum before and after.
    p_minus: Vec<f64>,
    p_plus: Vec<f64>,
    k_minus: f64,
    k_plus: f64,
    /// Kinetic energy change (dissipation is negative).
    w_loss: f64,
    /// Kinetic energy ratio after/before.
    gamma: f64,
    /// False when the impact Jacobian was row-rank-deficient.
    multipliers_unique: bool,
    /// Energetic feasibility of the restitution matrix; None for the
    /// scalar law, which is feasible by construction for e in [0, 1].
    feasible: Option<bool>,
}

#[pyfunction]
#[pyo3(signature = (
    mass,
    jacobian,
    qdot_minus,
    restitution = None,
    restitution_matrix = None,
    impulse_input = None,
    rank_tol = None,
    allow_inconsistent = false,
))]
#[allow(clippy::too_many_arguments)]
fn resolve_impact(
    mass: Vec<Vec<f64>>,
    jacobian: Vec<Vec<f64>>,
    qdot_minus: Vec<f64>,
    restitution: Option<f64>,
    restitution_matrix: Option<Vec<Vec<f64>>>,
    impulse_input: Option<Vec<f64>>,
    rank_tol: Option<f64>,
    allow_inconsistent: bool,
) -> PyResult<ImpactResult> {
    let file = problem_file(
        mass,
        jacobian,
        Some(qdot_minus),
        restitution,
        restitution_matrix,
        impulse_input,
        rank_tol,
    );
    let prob = build_problem(&file).map_err(py_err)?.with_allow_inconsistent(allow_inconsistent);
    let rec = resolve(&prob).map_err(py_err)?;
    Ok(ImpactResult {
        qdot_plus: floats(&rec.qdot_plus),
        i_f: floats(&rec.i_f),
        i_lambda: floats(&rec.i_lambda),
        p_minus: floats(&rec.p_minus),
        p_plus: floats(&rec.p_plus),
        k_minus: rec.k_minus,
        k_plus: rec.k_plus,
        w_loss: rec.w_loss,
        gamma: rec.gamma,
        multipliers_unique: rec.multipliers_unique,
        feasible: rec.consistency.as_ref().map(|c| c.feasible),
    })
}

/// Energetic feasibility verdict for a restitution law.
#[pyclass(frozen, get_all)]
struct FeasibilityReport {
    feasible: bool,
    qmi_eigenvalue: f64,
    qmi_threshold: f64,
    lmi_eigenvalue: f64,
    lmi_threshold: f64,
    /// Reduced inertia the certificate is taken against.
    q: Vec<Vec<f64>>,
}

#[pyfunction]
#[pyo3(signature = (mass, jacobian, restitution = None, restitution_matrix = None, rank_tol = None))]
fn check_restitution(
    mass: Vec<Vec<f64>>,
    jacobian: Vec<Vec<f64>>,
    restitution: Option<f64>,
    restitution_matrix: Option<Vec<Vec<f64>>>,
    rank_tol: Option<f64>,
) -> PyResult<FeasibilityReport> {
    let file = problem_file(mass, jacobian, None, restitution, restitution_matrix, None, rank_tol);
    let (mass, bundle, e) = build_feasibility(&file).map_err(py_err)?;
    let rep = check(&mass, &bundle, &e).map_err(py_err)?;
    Ok(FeasibilityReport {
        feasible: rep.feasible,
        qmi_eigenvalue: rep.qmi_eigenvalue,
        qmi_threshold: rep.qmi_threshold,
        lmi_eigenvalue: rep.lmi_eigenvalue,
        lmi_threshold: rep.lmi_threshold,
        q: rows(&rep.q),
    })
}

/// Summary of one event-driven run.
#[pyclass(frozen, get_all)]
struct RunReport {
    t_final: f64,
    /// Accepted integration steps.
    steps: usize,
    events: usize,
    impacts: usize,
    /// Net impact energy change over the run.
    total_w_loss: f64,
    final_kinetic: f64,
    /// Largest active-constraint drift observed before correction.
    max_drift: f64,
    q_final: Vec<f64>,
    qdot_final: Vec<f64>,
}

#[pyfunction]
#[pyo3(signature = (text, allow_inconsistent = false))]
fn run_scenario(text: &str, allow_inconsistent: bool) -> PyResult<RunReport> {
    let cfg = parse_scenario(text, &[]).map_err(py_err)?;
    let mut sim = cfg.build().map_err(py_err)?;
    sim.allow_inconsistent = allow_inconsistent;
    let result = sim.run().map_err(py_err)?;
    Ok(RunReport {
        t_final: result.summary.t_final,
        steps: result.summary.steps,
        events: result.summary.events,
        impacts: result.summary.impacts,
        total_w_loss: result.summary.total_w_loss,
        final_kinetic: result.summary.final_kinetic,
        max_drift: result.summary.max_drift,
        q_final: floats(&result.final_state.q),
        qdot_final: floats(&result.final_state.qdot),
    })
}

#[pyfunction]
#[pyo3(signature = (suite = "all", seed = 0, count = 200))]
fn verify(suite: &str, seed: u64, count: usize) -> PyResult<(bool, String)> {
    let suite = Suite::parse(suite).map_err(py_err)?;
    let reports = vf::run(suite, &VerifyOptions { seed, count, fault: None }).map_err(py_err)?;
    Ok((vf::all_passed(&reports), vf::format_reports(&reports)))
}

#[pymodule]
fn nsmech_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ProjectionOperators>()?;
    m.add_class::<ImpactResult>()?;
    m.add_class::<FeasibilityReport>()?;
    m.add_class::<RunReport>()?;
    m.add_function(wrap_pyfunction!(projection_operators, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_impact, m)?)?;
    m.add_function(wrap_pyfunction!(check_restitution, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
