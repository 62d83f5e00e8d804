//! Standalone impact problem files.
//!
//! A problem file fully specifies one impulsive event in TOML:
//!
//! ```toml
//! mass = [[1.0, 0.0], [0.0, 1.0]]
//! jacobian = [[-1.0, 1.0]]
//! qdot_minus = [1.0, 0.0]        # required to resolve an impact;
//!                                # optional for a pure feasibility check
//! restitution = 1.0              # or: restitution_matrix = [[1.0]]
//! impulse_input = [0.0, 0.0]     # optional
//! rank_tol = 1e-12               # optional
//! ```
//!
//! Exactly one of `restitution` / `restitution_matrix` must be present. The
//! solved record is written back as TOML with 17-significant-digit floats,
//! which round-trip exactly. Solver output echoes the problem keys and adds
//! a `[result]` table; that table is accepted and ignored on input, so a
//! full output document parses back into the identical problem.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::impact::{ImpactProblem, ImpactRecord, RestitutionLaw};
use crate::jacobian::JacobianMatrix;
use crate::projection::{NuPolicy, ProjectionBundle};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub mass: Vec<Vec<f64>>,
    pub jacobian: Vec<Vec<f64>>,
    #[serde(default)]
    pub qdot_minus: Option<Vec<f64>>,
    #[serde(default)]
    pub restitution: Option<f64>,
    #[serde(default)]
    pub restitution_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub impulse_input: Option<Vec<f64>>,
    #[serde(default)]
    pub rank_tol: Option<f64>,
    /// Solved-record echo present in machine-readable output; accepted and
    /// ignored on input.
    #[serde(default)]
    pub result: Option<toml::Value>,
}

fn to_dmatrix(rows: &[Vec<f64>], ncols_hint: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols_hint));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(what, "rows must all have the same length"));
    }
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Parses problem text into its raw key-value form.
pub fn parse_problem_file(text: &str) -> Result<ProblemFile> {
    toml::from_str(text).map_err(|e| Error::config("problem", e.to_string()))
}

fn mass_and_jacobian(file: &ProblemFile) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = file.mass.len();
    if n == 0 {
        return Err(Error::config("problem.mass", "must be nonempty"));
    }
    let mass = to_dmatrix(&file.mass, n, "problem.mass")?;
    if mass.shape() != (n, n) {
        return Err(Error::config(
            "problem.mass",
            format!("expected {n}x{n}, got {:?}", mass.shape()),
        ));
    }
    let jac = to_dmatrix(&file.jacobian, n, "problem.jacobian")?;
    if jac.ncols() != n {
        return Err(Error::config(
            "problem.jacobian",
            format!("expected {n} columns, got {}", jac.ncols()),
        ));
    }
    Ok((mass, jac))
}

fn restitution_law(file: &ProblemFile, m: usize) -> Result<RestitutionLaw> {
    match (file.restitution, &file.restitution_matrix) {
        (Some(e), None) => Ok(RestitutionLaw::Global(e)),
        (None, Some(rows)) => Ok(RestitutionLaw::Matrix(to_dmatrix(
            rows,
            m,
            "problem.restitution_matrix",
        )?)),
        (Some(_), Some(_)) => Err(Error::config(
            "problem.restitution",
            "give either restitution or restitution_matrix, not both",
        )),
        (None, None) => Err(Error::config(
            "problem.restitution",
            "one of restitution or restitution_matrix is required",
        )),
    }
}

/// Builds a ready-to-solve [`ImpactProblem`]; requires `qdot_minus`.
pub fn build_problem(file: &ProblemFile) -> Result<ImpactProblem> {
    let (mass, jac) = mass_and_jacobian(file)?;
    let n = mass.nrows();
    let qdot = file
        .qdot_minus
        .as_ref()
        .ok_or_else(|| Error::config("problem.qdot_minus", "required to resolve an impact"))?;
    if qdot.len() != n {
        return Err(Error::config(
            "problem.qdot_minus",
            format!("expected {n} entries, got {}", qdot.len()),
        ));
    }
    let law = restitution_law(file, jac.nrows())?;
    let jm = JacobianMatrix::with_rank_tol(jac, file.rank_tol)?;
    let bundle = ProjectionBundle::build(&jm, None, &mass, NuPolicy::GeometricMean)?;
    let mut prob = ImpactProblem::new(mass, bundle, DVector::from_row_slice(qdot), law)?;
    if let Some(iu) = &file.impulse_input {
        prob = prob.with_impulse_input(DVector::from_row_slice(iu))?;
    }
    Ok(prob)
}

/// Builds the operator triple for a pure feasibility check; `qdot_minus`
/// is not needed. A scalar `restitution` expands to that multiple of the
/// identity over the constraint rows.
pub fn build_feasibility(
    file: &ProblemFile,
) -> Result<(DMatrix<f64>, ProjectionBundle, DMatrix<f64>)> {
    let (mass, jac) = mass_and_jacobian(file)?;
    let m = jac.nrows();
    let e = match restitution_law(file, m)? {
        RestitutionLaw::Global(e) => DMatrix::identity(m, m) * e,
        RestitutionLaw::Matrix(e) => e,
    };
    let jm = JacobianMatrix::with_rank_tol(jac, file.rank_tol)?;
    let bundle = ProjectionBundle::build(&jm, None, &mass, NuPolicy::GeometricMean)?;
    Ok((mass, bundle, e))
}

/// Parses problem text into a ready-to-solve [`ImpactProblem`].
pub fn parse_problem(text: &str) -> Result<ImpactProblem> {
    build_problem(&parse_problem_file(text)?)
}

pub fn load_problem(path: &std::path::Path) -> Result<ImpactProblem> {
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text)
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_slice(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_rows(rows: &[Vec<f64>]) -> String {
    let parts: Vec<String> = rows.iter().map(|r| fmt_slice(r)).collect();
    format!("[{}]", parts.join(", "))
}

/// Echoes the problem keys as TOML with exact-round-trip floats. Solver
/// output prepends this to its `[result]` table so the whole document
/// parses back into the identical problem.
pub fn format_problem_echo(file: &ProblemFile) -> String {
    let mut out = String::new();
    out.push_str(&format!("mass = {}\n", fmt_rows(&file.mass)));
    out.push_str(&format!("jacobian = {}\n", fmt_rows(&file.jacobian)));
    if let Some(qd) = &file.qdot_minus {
        out.push_str(&format!("qdot_minus = {}\n", fmt_slice(qd)));
    }
    if let Some(e) = file.restitution {
        out.push_str(&format!("restitution = {e:.16e}\n"));
    }
    if let Some(rows) = &file.restitution_matrix {
        out.push_str(&format!("restitution_matrix = {}\n", fmt_rows(rows)));
    }
    if let Some(iu) = &file.impulse_input {
        out.push_str(&format!("impulse_input = {}\n", fmt_slice(iu)));
    }
    if let Some(rt) = file.rank_tol {
        out.push_str(&format!("rank_tol = {rt:.16e}\n"));
    }
    out
}

/// Serializes a solved record as TOML with exact-round-trip floats.
pub fn format_record(record: &ImpactRecord) -> String {
    let mut out = String::new();
    out.push_str(&format!("qdot_plus = {}\n", fmt_vec(&record.qdot_plus)));
    out.push_str(&format!("i_f = {}\n", fmt_vec(&record.i_f)));
    out.push_str(&format!("i_lambda = {}\n", fmt_vec(&record.i_lambda)));
    out.push_str(&format!("p_minus = {}\n", fmt_vec(&record.p_minus)));
    out.push_str(&format!("p_plus = {}\n", fmt_vec(&record.p_plus)));
    out.push_str(&format!("k_minus = {:.16e}\n", record.k_minus));
    out.push_str(&format!("k_plus = {:.16e}\n", record.k_plus));
    out.push_str(&format!("w_loss = {:.16e}\n", record.w_loss));
    out.push_str(&format!("gamma = {:.16e}\n", record.gamma));
    out.push_str(&format!("multipliers_unique = {}\n", record.multipliers_unique));
    if let Some(report) = &record.consistency {
        out.push_str("\n[consistency]\n");
        out.push_str(&format!("feasible = {}\n", report.feasible));
        out.push_str(&format!("qmi_eigenvalue = {:.16e}\n", report.qmi_eigenvalue));
        out.push_str(&format!("qmi_threshold = {:.16e}\n", report.qmi_threshold));
        out.push_str(&format!("lmi_eigenvalue = {:.16e}\n", report.lmi_eigenvalue));
        out.push_str(&format!("lmi_threshold = {:.16e}\n", report.lmi_threshold));
    }
    out
}

/// Serializes a solved record as the `[result]` table of a problem document,
/// so echo + result parse back as one file.
pub fn format_result_table(record: &ImpactRecord) -> String {
    let body = format_record(record).replace("\n[consistency]\n", "\n[result.consistency]\n");
    format!("[result]\n{body}")
}

/// Formats a dense matrix as a TOML array of row arrays with
/// exact-round-trip floats.
pub fn format_matrix_rows(m: &DMatrix<f64>) -> String {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    fmt_rows(&rows)
}
