//! Constraint inertia and oblique projection.
//!
//! With `P` the orthogonal projector onto admissible velocities and `M` the
//! (SPD) mass matrix, the constraint inertia
//!
//! ```text
//! M_c = P M P + ν (I − P)
//! ```
//!
//! is SPD for any ν > 0 and block-diagonal with respect to
//! `range(P) ⊕ range(I−P)`. Its inverse acts like the pseudo-inverse of the
//! singular `M_o = P M P` on the admissible subspace: `M_c⁻¹ P = P M_c⁻¹ =
//! M_o⁺`, and `(P M P) M_c⁻¹ = P`. The spectrum of `M_c` is the nonzero
//! spectrum of `M_o` plus ν with multiplicity `n − rank(P)`, so choosing ν
//! inside `[λ_min≠0(M_o), λ_max(M_o)]` minimizes `cond(M_c)`; the default
//! picks the geometric mean of the bracket.
//!
//! The oblique (non-orthogonal) projector
//!
//! ```text
//! S = I − M_c⁻¹ P M = I − M_o⁺ M
//! ```
//!
//! splits velocities into a part absorbed by the constraints and a part that
//! survives them: `S² = S`, `S P = P Sᵀ = 0`, `S (I−P) = S`,
//! `(I−P) S = I−P`, `M S = Sᵀ M = Sᵀ M S ⪰ 0`, and
//! `(I−S) M⁻¹ = M⁻¹ (I−Sᵀ) = M_o⁺`. The reflection `R = I − 2S` satisfies
//! `R² = I` and is the velocity map of a perfectly elastic multiple impact.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jacobian::{symmetrize_in_place, JacobianMatrix};

/// How to pick the regularization weight ν on the inadmissible subspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuPolicy {
    /// Geometric mean of the conditioning bracket
    /// `[λ_min≠0(M_o), λ_max(M_o)]` (of `M` itself when the bracket is
    /// empty because `P = 0`). Minimizes `cond(M_c)`.
    GeometricMean,
    /// A caller-chosen fixed positive value.
    Fixed(f64),
}

impl Default for NuPolicy {
    fn default() -> Self {
        NuPolicy::GeometricMean
    }
}

fn check_square_symmetric(name: &str, a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid_input(format!(
            "{name} must be square, got {:?}",
            a.shape()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid_input(format!("{name} entries must be finite")));
    }
    let asym = (a - a.transpose()).norm();
    if asym > 1e-9 * (1.0 + a.norm()) {
        return Err(Error::invalid_input(format!(
            "{name} must be symmetric (asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

fn check_mass(mass: &DMatrix<f64>) -> Result<()> {
    check_square_symmetric("mass matrix", mass)?;
    if nalgebra::Cholesky::new(mass.clone()).is_none() {
        return Err(Error::invalid_model("mass matrix is not positive definite"));
    }
    Ok(())
}

fn check_projector(n: usize, p: &DMatrix<f64>) -> Result<()> {
    if p.shape() != (n, n) {
        return Err(Error::invalid_input(format!(
            "projector shape {:?} does not match mass dimension {n}",
            p.shape()
        )));
    }
    check_square_symmetric("projector", p)?;
    let idem = (p * p - p).norm();
    if idem > 1e-6 * (1.0 + p.norm()) {
        return Err(Error::invalid_input(format!(
            "projector is not idempotent (residual {idem:.3e})"
        )));
    }
    Ok(())
}

/// Rank of an orthogonal projector, read off its trace.
fn projector_rank(p: &DMatrix<f64>) -> usize {
    let t: f64 = p.diagonal().iter().sum();
    t.round().max(0.0) as usize
}

/// Builds the constraint inertia `M_c = P M P + ν (I − P)`.
///
/// Returns `(M_c, ν, M_o⁺)` where `M_o⁺ = M_c⁻¹ P` is the action of the
/// pseudo-inverse of `M_o = P M P`. Errors if `M` is not SPD or `P` is not a
/// projector.
pub fn constraint_inertia(
    mass: &DMatrix<f64>,
    projector: &DMatrix<f64>,
    policy: NuPolicy,
) -> Result<(DMatrix<f64>, f64, DMatrix<f64>)> {
    check_mass(mass)?;
    let n = mass.nrows();
    check_projector(n, projector)?;

    let mut mo = projector * mass * projector;
    symmetrize_in_place(&mut mo);
    let rank_p = projector_rank(projector);

    let nu = match policy {
        NuPolicy::Fixed(v) => {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid_input("fixed nu must be positive and finite"));
            }
            v
        }
        NuPolicy::GeometricMean => {
            // Bracket endpoints come from the nonzero spectrum of M_o, i.e.
            // its rank(P) largest eigenvalues; for P = 0 fall back to the
            // spectrum of M itself.
            let spectrum_src = if rank_p == 0 { mass.clone() } else { mo.clone() };
            let mut eigs: Vec<f64> = spectrum_src
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .collect();
            eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let take = if rank_p == 0 { n } else { rank_p };
            let hi = eigs[0];
            let lo = eigs[take - 1];
            if !(lo > 0.0) {
                return Err(Error::internal(format!(
                    "nonzero spectrum of constraint inertia collapsed (lo = {lo:.3e}); \
                     mass conditioning exceeds the rank cutoff"
                )));
            }
            (lo * hi).sqrt()
        }
    };

    let eye = DMatrix::identity(n, n);
    let mut mc = &mo + (&eye - projector) * nu;
    symmetrize_in_place(&mut mc);

    let chol = nalgebra::Cholesky::new(mc.clone()).ok_or_else(|| {
        Error::internal("constraint inertia is not positive definite after assembly")
    })?;
    let mut mo_pinv = chol.solve(projector);
    symmetrize_in_place(&mut mo_pinv);

    Ok((mc, nu, mo_pinv))
}

/// Builds the oblique projector `S = I − M_c⁻¹ P M` and the reflection
/// `R = I − 2S`.
pub fn oblique_projector(
    mass: &DMatrix<f64>,
    mc: &DMatrix<f64>,
    projector: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_mass(mass)?;
    let n = mass.nrows();
    check_projector(n, projector)?;
    check_square_symmetric("constraint inertia", mc)?;
    if mc.shape() != (n, n) {
        return Err(Error::invalid_input(format!(
            "constraint inertia shape {:?} does not match mass dimension {n}",
            mc.shape()
        )));
    }
    let chol = nalgebra::Cholesky::new(mc.clone())
        .ok_or_else(|| Error::invalid_input("constraint inertia is not positive definite"))?;
    let s = DMatrix::identity(n, n) - chol.solve(&(projector * mass));
    let r = DMatrix::identity(n, n) - &s * 2.0;
    Ok((s, r))
}

/// All projection operators for one active constraint set, built from one
/// SVD of the Jacobian plus one Cholesky of the constraint inertia.
#[derive(Debug, Clone)]
pub struct ProjectionBundle {
    /// Constraint Jacobian A (m-by-n).
    pub jac: DMatrix<f64>,
    /// Pseudo-inverse A⁺ (n-by-m), sharing the rank decision of `p`.
    pub jac_pinv: DMatrix<f64>,
    /// Numerical rank of A.
    pub rank: usize,
    /// Orthogonal projector P onto null(A).
    pub p: DMatrix<f64>,
    /// Rate term Λ = −A⁺ Ȧ P (zero when no Jacobian rate was supplied).
    pub lambda: DMatrix<f64>,
    /// Skew rate term Ω = Λ − Λᵀ.
    pub omega: DMatrix<f64>,
    /// Constraint inertia M_c.
    pub mc: DMatrix<f64>,
    /// Regularization weight used in M_c.
    pub nu: f64,
    /// M_o⁺ = M_c⁻¹ P, the constrained inverse inertia.
    pub mo_pinv: DMatrix<f64>,
    /// Oblique projector S = I − M_o⁺ M.
    pub s: DMatrix<f64>,
    /// Reflection R = I − 2S.
    pub r: DMatrix<f64>,
}

impl ProjectionBundle {
    /// Builds every operator for the active set described by `jac`.
    ///
    /// `jac_dot` is the time derivative of the Jacobian along the current
    /// motion; pass `None` for impulsive problems, where rate terms are
    /// irrelevant, and the rate operators come out zero.
    pub fn build(
        jac: &JacobianMatrix,
        jac_dot: Option<&DMatrix<f64>>,
        mass: &DMatrix<f64>,
        policy: NuPolicy,
    ) -> Result<Self> {
        let n = jac.ncols();
        if mass.nrows() != n {
            return Err(Error::invalid_input(format!(
                "mass dimension {} does not match jacobian columns {n}",
                mass.nrows()
            )));
        }
        let factors = jac.factorize()?;
        let (lambda, omega) = match jac_dot {
            Some(adot) => {
                crate::jacobian::jacobian_rate_terms(jac, adot, &factors.projector)?
            }
            None => (DMatrix::zeros(n, n), DMatrix::zeros(n, n)),
        };
        let (mc, nu, mo_pinv) = constraint_inertia(mass, &factors.projector, policy)?;
        let (s, r) = oblique_projector(mass, &mc, &factors.projector)?;
        Ok(ProjectionBundle {
            jac: jac.entries().clone(),
            jac_pinv: factors.pinv,
            rank: factors.rank,
            p: factors.projector,
            lambda,
            omega,
            mc,
            nu,
            mo_pinv,
            s,
            r,
        })
    }

    /// Number of generalized coordinates.
    pub fn nq(&self) -> usize {
        self.p.nrows()
    }

    /// Number of constraint rows.
    pub fn nc(&self) -> usize {
        self.jac.nrows()
    }

    /// Whether the constraint rows are independent, i.e. multipliers are
    /// unique.
    pub fn full_row_rank(&self) -> bool {
        self.rank == self.nc()
    }
}
