//! Energetic feasibility of restitution matrices.
//!
//! A restitution matrix `E` is energetically consistent when no pre-impact
//! velocity can gain kinetic energy through the impulse map. With
//! `G = S A⁺` and the impact-space inertia `Q = Gᵀ M G ⪰ 0`, that is the
//! quadratic matrix inequality
//!
//! ```text
//! E Q E − Q ⪯ 0
//! ```
//!
//! which is equivalent, by a Schur complement (using `Q = Gᵀ M G` and
//! `M ≻ 0`), to positive semidefiniteness of the block matrix
//!
//! ```text
//! [ Q     E Gᵀ ]
//! [ G E   M⁻¹  ]  ⪰ 0
//! ```
//!
//! Both tests are evaluated and their verdicts must agree. Each eigenvalue
//! carries its own rounding blur, so exactly on the feasibility boundary
//! the raw verdicts can split while one side is still within its numerical
//! threshold; such a marginal side defers to the decisive one. A split
//! where both sides are decisive cannot come from rounding and is reported
//! as an internal-consistency failure rather than silently picking one.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jacobian::symmetrize_in_place;
use crate::projection::ProjectionBundle;

/// Outcome of the quadratic and linear matrix-inequality tests.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub feasible: bool,
    /// Impact-space inertia `Q = Gᵀ M G` with `G = S A⁺`.
    pub q: DMatrix<f64>,
    /// `λ_max(E Q E − Q)`; feasible when at or below `qmi_threshold`.
    pub qmi_eigenvalue: f64,
    pub qmi_threshold: f64,
    /// `λ_min` of the block matrix; nonnegative (up to `lmi_threshold`)
    /// exactly when the QMI holds.
    pub lmi_eigenvalue: f64,
    pub lmi_threshold: f64,
}

fn validate_e(m: usize, e: &DMatrix<f64>) -> Result<()> {
    if e.shape() != (m, m) {
        return Err(Error::invalid_input(format!(
            "restitution matrix shape {:?} does not match constraint count {m}",
            e.shape()
        )));
    }
    if e.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid_input(
            "restitution matrix entries must be finite and nonnegative",
        ));
    }
    let asym = (e - e.transpose()).norm();
    if asym > 1e-9 * (1.0 + e.norm()) {
        return Err(Error::invalid_input("restitution matrix must be symmetric"));
    }
    Ok(())
}

fn eig_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eigs = a.clone().symmetric_eigen().eigenvalues;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eigs.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Runs both feasibility tests for `E` against the impact operators.
///
/// An empty constraint set (m = 0) is trivially feasible. Errors on a
/// malformed `E`, and reports an internal-consistency failure if the two
/// tests disagree (they cannot, up to conditioning, by the Schur
/// equivalence).
pub fn check_consistency(
    mass: &DMatrix<f64>,
    bundle: &ProjectionBundle,
    e: &DMatrix<f64>,
) -> Result<ConsistencyReport> {
    let m = bundle.nc();
    let n = bundle.nq();
    if mass.shape() != (n, n) {
        return Err(Error::invalid_input(format!(
            "mass shape {:?} does not match bundle dimension {n}",
            mass.shape()
        )));
    }
    validate_e(m, e)?;

    let g = &bundle.s * &bundle.jac_pinv; // n×m
    let mut q = g.transpose() * mass * &g;
    symmetrize_in_place(&mut q);

    let mut qmi = e * &q * e - &q;
    symmetrize_in_place(&mut qmi);
    let (_, qmi_eigenvalue) = eig_extremes(&qmi);
    let qmi_threshold = 1e-10 * (1.0 + q.norm());
    let qmi_ok = qmi_eigenvalue <= qmi_threshold;

    let minv = nalgebra::Cholesky::new(mass.clone())
        .ok_or_else(|| Error::invalid_model("mass matrix is not positive definite"))?
        .inverse();
    let mut block = DMatrix::zeros(m + n, m + n);
    block.view_mut((0, 0), (m, m)).copy_from(&q);
    let egt = e * g.transpose(); // m×n
    block.view_mut((0, m), (m, n)).copy_from(&egt);
    block.view_mut((m, 0), (n, m)).copy_from(&egt.transpose());
    block.view_mut((m, m), (n, n)).copy_from(&minv);
    symmetrize_in_place(&mut block);
    let (lmi_eigenvalue, _) = eig_extremes(&block);
    let lmi_threshold = 1e-10 * (1.0 + block.norm());
    let lmi_ok = lmi_eigenvalue >= -lmi_threshold;

    // Boundary blur: a verdict whose eigenvalue is within a decade of its
    // own threshold is at the resolution limit of that eigensolve and
    // defers to the decisive test. Only a decisive split is an error.
    let mut feasible = qmi_ok;
    if qmi_ok != lmi_ok {
        let qmi_marginal = qmi_eigenvalue.abs() <= 10.0 * qmi_threshold;
        let lmi_marginal = lmi_eigenvalue.abs() <= 10.0 * lmi_threshold;
        if lmi_marginal {
            feasible = qmi_ok;
        } else if qmi_marginal {
            feasible = lmi_ok;
        } else {
            return Err(Error::internal(format!(
                "restitution feasibility tests disagree: quadratic test gives \
                 {qmi_ok} (eigenvalue {qmi_eigenvalue:.6e}, threshold {qmi_threshold:.3e}), \
                 block test gives {lmi_ok} (eigenvalue {lmi_eigenvalue:.6e}, threshold \
                 {lmi_threshold:.3e})"
            )));
        }
    }

    Ok(ConsistencyReport {
        feasible,
        q,
        qmi_eigenvalue,
        qmi_threshold,
        lmi_eigenvalue,
        lmi_threshold,
    })
}
