//! Constraint Jacobians, their pseudo-inverses, and the orthogonal projector
//! onto the feasible velocity space.
//!
//! A constraint Jacobian `A` is an m-by-n map from generalized velocities to
//! constraint rates. Admissible velocities satisfy `A q̇ = 0`, so everything
//! downstream is built from the orthogonal projector `P` onto `null(A)`.
//! The rank decision is made once, inside one SVD, by a relative singular
//! value cutoff; the pseudo-inverse, the projector, and the reported rank all
//! inherit that single decision, which keeps them mutually consistent even
//! for redundant (rank-deficient) constraint sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A constraint Jacobian with an explicit rank-truncation policy.
///
/// `rank_tol` is relative: singular values at or below
/// `rank_tol * sigma_max` are treated as zero. The default,
/// `max(m, n) * f64::EPSILON`, tracks the standard worst-case rounding of an
/// SVD. `m = 0` (no constraints) is legal and yields `P = I`.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    entries: DMatrix<f64>,
    rank_tol: Option<f64>,
}

/// Everything the single SVD of `A` decides: the pseudo-inverse, the null
/// space projector, and the numerical rank.
#[derive(Debug, Clone)]
pub(crate) struct JacobianFactors {
    pub pinv: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    pub rank: usize,
}

impl JacobianMatrix {
    /// Wraps `entries` with the default rank tolerance.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Self::with_rank_tol(entries, None)
    }

    /// Wraps `entries` with an explicit relative rank tolerance
    /// (`None` keeps the default).
    pub fn with_rank_tol(entries: DMatrix<f64>, rank_tol: Option<f64>) -> Result<Self> {
        if entries.ncols() == 0 {
            return Err(Error::invalid_input(
                "jacobian must have at least one column (n >= 1)",
            ));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid_input("jacobian entries must be finite"));
        }
        if let Some(tol) = rank_tol {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Error::invalid_input(
                    "rank_tol must be finite and nonnegative",
                ));
            }
        }
        Ok(JacobianMatrix { entries, rank_tol })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Number of constraint rows m.
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of generalized coordinates n.
    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// The relative cutoff actually in effect.
    pub fn effective_rank_tol(&self) -> f64 {
        self.rank_tol
            .unwrap_or_else(|| self.nrows().max(self.ncols()) as f64 * f64::EPSILON)
    }

    /// Numerical rank under the cutoff policy.
    pub fn rank(&self) -> Result<usize> {
        Ok(self.factorize()?.rank)
    }

    pub(crate) fn factorize(&self) -> Result<JacobianFactors> {
        let (m, n) = (self.nrows(), self.ncols());
        if m == 0 {
            return Ok(JacobianFactors {
                pinv: DMatrix::zeros(n, 0),
                projector: DMatrix::identity(n, n),
                rank: 0,
            });
        }
        let svd = one_sided_jacobi_svd(&self.entries);
        let u = &svd.u;
        let v_t = &svd.v_t;
        let sigma = &svd.sigma;
        let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = self.effective_rank_tol() * sigma_max;

        let mut pinv = DMatrix::zeros(n, m);
        let mut range_vt = DMatrix::zeros(n, n); // accumulates V_r V_r^T
        let mut rank = 0usize;
        for i in 0..sigma.len() {
            let s = sigma[i];
            if sigma_max > 0.0 && s > cutoff {
                rank += 1;
                let vi = v_t.row(i).transpose(); // n-vector
                let ui = u.column(i); // m-vector
                // pinv += v_i u_i^T / s
                for c in 0..m {
                    let w = ui[c] / s;
                    for r in 0..n {
                        pinv[(r, c)] += vi[r] * w;
                    }
                }
                // range_vt += v_i v_i^T (symmetric by summation order)
                for c in 0..n {
                    let w = vi[c];
                    for r in 0..n {
                        range_vt[(r, c)] += vi[r] * w;
                    }
                }
            }
        }
        let mut projector = DMatrix::identity(n, n) - range_vt;
        symmetrize_in_place(&mut projector);
        Ok(JacobianFactors { pinv, projector, rank })
    }
}

/// Thin SVD `A = U diag(sigma) V^T` with `q = min(m, n)` columns, singular
/// values sorted descending.
struct ThinSvd {
    u: DMatrix<f64>,       // m-by-q
    sigma: DVector<f64>,   // q
    v_t: DMatrix<f64>,     // q-by-n
}

/// One-sided Jacobi SVD on the tall orientation of `a`.
///
/// The bidiagonalization SVD shipped with the linear algebra crate can
/// silently lose accuracy on exactly rank-deficient inputs (reconstruction
/// errors near 1e-2 show up on random wide matrices carrying a zero
/// singular value), and every projector in this crate inherits whatever
/// the factorization gets wrong. Plane-rotation sweeps that orthogonalize
/// column pairs converge unconditionally, keep `U diag V^T` equal to the
/// input to rounding, and cost nothing at the problem sizes seen here.
fn one_sided_jacobi_svd(a: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = a.shape();
    let wide = m < n;
    // Work on b with at least as many rows as columns.
    let mut b = if wide { a.transpose() } else { a.clone() };
    let q = b.ncols();
    let p = b.nrows();
    let mut v = DMatrix::<f64>::identity(q, q);

    let tol = 1e-15_f64;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for k in 0..p {
                    let bi = b[(k, i)];
                    let bj = b[(k, j)];
                    alpha += bi * bi;
                    beta += bj * bj;
                    gamma += bi * bj;
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotation angle annihilating the (i, j) column product:
                // t^2 + 2 zeta t - 1 = 0, smaller root for stability.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..p {
                    let bi = b[(k, i)];
                    let bj = b[(k, j)];
                    b[(k, i)] = c * bi - s * bj;
                    b[(k, j)] = s * bi + c * bj;
                }
                for k in 0..q {
                    let vi = v[(k, i)];
                    let vj = v[(k, j)];
                    v[(k, i)] = c * vi - s * vj;
                    v[(k, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..q).collect();
    let norms: Vec<f64> = (0..q).map(|i| b.column(i).norm()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut u_b = DMatrix::zeros(p, q);
    let mut sigma = DVector::zeros(q);
    let mut v_b = DMatrix::zeros(q, q);
    for (slot, &idx) in order.iter().enumerate() {
        let s = norms[idx];
        sigma[slot] = s;
        if s > 0.0 {
            let col = b.column(idx) / s;
            u_b.set_column(slot, &col);
        }
        v_b.set_column(slot, &v.column(idx));
    }

    if wide {
        // a = b^T = v_b diag u_b^T.
        ThinSvd { u: v_b, sigma, v_t: u_b.transpose() }
    } else {
        ThinSvd { u: u_b, sigma, v_t: v_b.transpose() }
    }
}

/// Replaces `a` by `(a + a^T) / 2`. Used wherever a matrix is symmetric in
/// exact arithmetic so that downstream symmetric eigensolvers see exactly
/// symmetric input.
pub(crate) fn symmetrize_in_place(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Moore-Penrose pseudo-inverse of the Jacobian (n-by-m), via SVD with the
/// Jacobian's rank cutoff.
///
/// Satisfies the four Penrose conditions to rounding; for rank-deficient `A`
/// it yields the minimum-norm solution operator.
pub fn pseudo_inverse(jac: &JacobianMatrix) -> Result<DMatrix<f64>> {
    Ok(jac.factorize()?.pinv)
}

/// Orthogonal projector `P = I − A⁺A` onto `null(A)` (n-by-n).
///
/// Built as `I − V_r V_rᵀ` from the right singular vectors of the numerical
/// range, so it is symmetric and idempotent to rounding, `A P = 0`, and
/// `rank(P) = n − rank(A)`. Duplicated or dependent rows do not change `P`.
pub fn orthogonal_projector(jac: &JacobianMatrix) -> Result<DMatrix<f64>> {
    Ok(jac.factorize()?.projector)
}

/// Rate terms induced by a moving Jacobian: `Λ = −A⁺ Ȧ P` and the
/// skew-symmetric `Ω = Λ − Λᵀ`.
///
/// `Ṗ = Λ + Λᵀ`, and because `Λᵀ P = 0`, the two agree when applied to any
/// admissible velocity: `Ω q̇ = Λ q̇ = Ṗ q̇` whenever `P q̇ = q̇`. Ω is skew
/// exactly as constructed (IEEE subtraction is antisymmetric).
pub fn jacobian_rate_terms(
    jac: &JacobianMatrix,
    jac_dot: &DMatrix<f64>,
    projector: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, n) = (jac.nrows(), jac.ncols());
    if jac_dot.shape() != (m, n) {
        return Err(Error::invalid_input(format!(
            "jacobian rate shape {:?} does not match jacobian shape {:?}",
            jac_dot.shape(),
            (m, n)
        )));
    }
    if projector.shape() != (n, n) {
        return Err(Error::invalid_input(format!(
            "projector shape {:?} is not ({n}, {n})",
            projector.shape()
        )));
    }
    if jac_dot.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid_input("jacobian rate entries must be finite"));
    }
    let pinv = jac.factorize()?.pinv;
    let lambda = -(&pinv * (jac_dot * projector));
    let omega = &lambda - lambda.transpose();
    Ok((lambda, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let r = rows.len();
        let c = rows[0].len();
        DMatrix::from_fn(r, c, |i, j| rows[i][j])
    }

    #[test]
    fn pinv_zero_matrix_is_zero_transpose_shape() {
        let jac = JacobianMatrix::new(DMatrix::zeros(1, 2)).unwrap();
        let pinv = pseudo_inverse(&jac).unwrap();
        assert_eq!(pinv.shape(), (2, 1));
        assert_eq!(pinv, DMatrix::zeros(2, 1));
        assert_eq!(jac.rank().unwrap(), 0);
    }

    #[test]
    fn pinv_row_of_ones() {
        let jac = JacobianMatrix::new(mat(&[&[1.0, 1.0]])).unwrap();
        let pinv = pseudo_inverse(&jac).unwrap();
        assert_relative_eq!(pinv, mat(&[&[0.5], &[0.5]]), epsilon = 1e-14);
    }

    #[test]
    fn pinv_duplicated_rows_minimum_norm() {
        let jac = JacobianMatrix::new(mat(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap();
        let pinv = pseudo_inverse(&jac).unwrap();
        assert_relative_eq!(pinv, mat(&[&[0.5, 0.5], &[0.0, 0.0]]), epsilon = 1e-14);
        assert_eq!(jac.rank().unwrap(), 1);
    }

    #[test]
    fn projector_no_constraints_is_identity() {
        let jac = JacobianMatrix::new(DMatrix::zeros(0, 2)).unwrap();
        assert_eq!(
            orthogonal_projector(&jac).unwrap(),
            DMatrix::identity(2, 2)
        );
    }

    #[test]
    fn projector_single_row() {
        let jac = JacobianMatrix::new(mat(&[&[0.0, 1.0]])).unwrap();
        let p = orthogonal_projector(&jac).unwrap();
        assert_relative_eq!(p, mat(&[&[1.0, 0.0], &[0.0, 0.0]]), epsilon = 1e-14);
    }

    #[test]
    fn projector_ignores_duplicated_rows() {
        let jac = JacobianMatrix::new(mat(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap();
        let p = orthogonal_projector(&jac).unwrap();
        assert_relative_eq!(p, mat(&[&[0.0, 0.0], &[0.0, 1.0]]), epsilon = 1e-14);
    }

    #[test]
    fn rate_terms_vanish_for_static_jacobian() {
        let jac = JacobianMatrix::new(mat(&[&[1.0, 2.0]])).unwrap();
        let p = orthogonal_projector(&jac).unwrap();
        let (lambda, omega) =
            jacobian_rate_terms(&jac, &DMatrix::zeros(1, 2), &p).unwrap();
        assert_eq!(lambda, DMatrix::zeros(2, 2));
        assert_eq!(omega, DMatrix::zeros(2, 2));
    }

    #[test]
    fn rate_terms_circular_motion() {
        // Unit circle at q = (1, 0) with speed ω: A = [1, 0], Ȧ = [0, ω],
        // q̇ = (0, ω). The admissible acceleration is the centripetal one.
        let omega_s = 0.7;
        let jac = JacobianMatrix::new(mat(&[&[1.0, 0.0]])).unwrap();
        let p = orthogonal_projector(&jac).unwrap();
        let jac_dot = mat(&[&[0.0, omega_s]]);
        let (lambda, big_omega) = jacobian_rate_terms(&jac, &jac_dot, &p).unwrap();
        let qdot = DVector::from_row_slice(&[0.0, omega_s]);
        let acc = &big_omega * &qdot;
        assert_relative_eq!(acc[0], -omega_s * omega_s, epsilon = 1e-14);
        assert_relative_eq!(acc[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(&lambda * &qdot, acc, epsilon = 1e-14);
    }

    #[test]
    fn rate_terms_shape_mismatch_is_error() {
        let jac = JacobianMatrix::new(mat(&[&[1.0, 0.0]])).unwrap();
        let p = orthogonal_projector(&jac).unwrap();
        assert!(jacobian_rate_terms(&jac, &DMatrix::zeros(2, 2), &p).is_err());
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(JacobianMatrix::new(mat(&[&[f64::NAN, 0.0]])).is_err());
        assert!(JacobianMatrix::new(DMatrix::zeros(1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn penrose_conditions_hold(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=6usize);
            let m = rng.random_range(0..=n + 2);
            let rank_cap = m.min(n);
            let rank = if rank_cap == 0 { 0 } else { rng.random_range(0..=rank_cap) };
            // A = L R with inner dimension = rank gives exact rank deficiency.
            let l = DMatrix::from_fn(m, rank, |_, _| rng.random_range(-1.0..1.0));
            let r = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
            let a = &l * &r;
            let jac = JacobianMatrix::new(a.clone()).unwrap();
            let pinv = pseudo_inverse(&jac).unwrap();
            let p = orthogonal_projector(&jac).unwrap();

            let scale = 1.0 + a.norm();
            prop_assert!((&a * &pinv * &a - &a).norm() / scale < 1e-10);
            prop_assert!((&pinv * &a * &pinv - &pinv).norm() / (1.0 + pinv.norm()) < 1e-10);
            let aap = &a * &pinv;
            prop_assert!((&aap - aap.transpose()).norm() / (1.0 + aap.norm()) < 1e-10);
            let apa = &pinv * &a;
            prop_assert!((&apa - apa.transpose()).norm() / (1.0 + apa.norm()) < 1e-10);

            // Projector invariants under the same rank decision.
            prop_assert_eq!(p.clone(), p.transpose());
            prop_assert!((&p * &p - &p).norm() < 1e-12);
            prop_assert!((&a * &p).norm() / scale < 1e-10);
            let trace: f64 = p.diagonal().iter().sum();
            prop_assert!((trace - (n as f64 - jac.rank().unwrap() as f64)).abs() < 1e-8);
        }
    }
}
