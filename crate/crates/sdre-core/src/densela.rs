//! Dense linear-algebra kernel: Lyapunov solves, truncated SVD with an energy
//! criterion, orthonormalizing QR retraction, spectral quantities, and an
//! independent Hamiltonian-based Riccati oracle.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major storage).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vec64 = DVector<f64>;

/// Iteration cap handed to the Francis QR iteration, per matrix dimension.
const SCHUR_MAX_SWEEPS: usize = 75;

pub fn ensure_finite(m: &Mat) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteMatrix)
    }
}

fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn ensure_same_dim(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

// ── Real Schur form helpers ──────────────────────────────────────────

struct RealSchur {
    q: Mat,
    t: Mat,
}

fn real_schur(a: &Mat) -> Result<RealSchur> {
    let n = a.nrows();
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_SWEEPS * n)
        .ok_or(Error::NonConvergence)?;
    let (q, t) = schur.unpack();
    Ok(RealSchur { q, t })
}

/// Block starts of the quasi-triangular factor (1x1 or 2x2 diagonal blocks).
fn schur_blocks(t: &Mat) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let scale = t.norm().max(1.0);
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < n {
        let two = k + 1 < n && t[(k + 1, k)].abs() > f64::EPSILON * scale;
        let size = if two { 2 } else { 1 };
        blocks.push((k, size));
        k += size;
    }
    blocks
}

/// Maximum real part over the eigenvalues encoded in a real Schur factor.
fn schur_max_real(t: &Mat) -> f64 {
    let mut max_re = f64::NEG_INFINITY;
    for (k, size) in schur_blocks(t) {
        let re = if size == 1 {
            t[(k, k)]
        } else {
            let (a, b) = (t[(k, k)], t[(k, k + 1)]);
            let (c, d) = (t[(k + 1, k)], t[(k + 1, k + 1)]);
            let half_tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                half_tr + disc.sqrt()
            } else {
                half_tr
            }
        };
        max_re = max_re.max(re);
    }
    max_re
}

// ── Lyapunov ─────────────────────────────────────────────────────────

pub(crate) struct LyapOutcome {
    pub x: Mat,
    /// Spectral abscissa of the coefficient matrix, read off the Schur factor.
    pub coef_abscissa: f64,
}

/// Bartels–Stewart solve of `A^T X + X A = M` in the Schur frame of `A`.
pub(crate) fn lyap_bartels_stewart(a: &Mat, m: &Mat) -> Result<LyapOutcome> {
    let n = a.nrows();
    let RealSchur { q, t } = real_schur(a)?;
    let abscissa = schur_max_real(&t);
    let mut c = q.transpose() * m * &q;
    let blocks = schur_blocks(&t);
    let mut y = Mat::zeros(n, n);

    // Forward substitution over block columns, then block rows:
    // T_II^T Y_IJ + Y_IJ T_JJ = C_IJ - sum_{K<I} T_KI^T Y_KJ - sum_{K<J} Y_IK T_KJ.
    for (jb, &(j0, js)) in blocks.iter().enumerate() {
        for &(i0, is) in &blocks {
            let rhs = c.view((i0, j0), (is, js)).clone_owned();
            let tii = t.view((i0, i0), (is, is)).clone_owned();
            let tjj = t.view((j0, j0), (js, js)).clone_owned();
            let dim = is * js;
            let mut small = DMatrix::<f64>::zeros(dim, dim);
            // vec(T_II^T Y) = (I ⊗ T_II^T) vec Y;  vec(Y T_JJ) = (T_JJ^T ⊗ I) vec Y.
            for cj in 0..js {
                for ci in 0..is {
                    let col = cj * is + ci;
                    for ri in 0..is {
                        small[(cj * is + ri, col)] += tii[(ci, ri)];
                    }
                    for rj in 0..js {
                        small[(rj * is + ci, col)] += tjj[(cj, rj)];
                    }
                }
            }
            let rhs_vec = DVector::from_iterator(dim, rhs.iter().copied());
            let lu = small.lu();
            let sol = lu.solve(&rhs_vec).ok_or_else(|| {
                Error::SingularLyapunov(format!(
                    "eigenvalue-sum breakdown in block ({i0},{j0})"
                ))
            })?;
            if sol.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularLyapunov(
                    "solution overflow in block substitution".into(),
                ));
            }
            for cj in 0..js {
                for ci in 0..is {
                    y[(i0 + ci, j0 + cj)] = sol[cj * is + ci];
                }
            }
            // Push the T^T-coupling into later row blocks of this column.
            let yij = y.view((i0, j0), (is, js)).clone_owned();
            for &(k0, ks) in blocks.iter().filter(|&&(k0, _)| k0 > i0) {
                let tik = t.view((i0, k0), (is, ks)).clone_owned();
                let upd = tik.transpose() * &yij;
                let mut view = c.view_mut((k0, j0), (ks, js));
                view -= upd;
            }
        }
        // Push the Y T-coupling into later columns.
        let ycol = y.view((0, j0), (n, js)).clone_owned();
        for &(k0, ks) in blocks.iter().skip(jb + 1) {
            let tjk = t.view((j0, k0), (js, ks)).clone_owned();
            let upd = &ycol * tjk;
            let mut view = c.view_mut((0, k0), (n, ks));
            view -= upd;
        }
    }

    let x = &q * y * q.transpose();
    Ok(LyapOutcome {
        x,
        coef_abscissa: abscissa,
    })
}

/// Solve `A^T X + X A = M` for square `A` and symmetric `M`.
///
/// The result is accepted only if the relative residual
/// `||A^T X + X A - M|| / ||M||` is at or below `1e-10`.
pub fn lyap_solve(a: &Mat, m: &Mat) -> Result<Mat> {
    ensure_square(a, "A")?;
    ensure_same_dim(a, m, "A vs M")?;
    let out = lyap_bartels_stewart(a, m)?;
    let m_norm = m.norm();
    if m_norm > 0.0 {
        let residual = (a.transpose() * &out.x + &out.x * a - m).norm();
        if !(residual / m_norm <= 1e-10) {
            return Err(Error::SingularLyapunov(format!(
                "relative residual {:.3e} exceeds 1e-10",
                residual / m_norm
            )));
        }
    }
    Ok(out.x)
}

/// Kronecker-vectorized dense solve of `A^T X + X A = M`.
///
/// O(n^6); restricted to n <= 64. Kept as the small-scale cross-check route
/// for the Schur-based solver.
pub fn kron_lyap_solve(a: &Mat, m: &Mat) -> Result<Mat> {
    ensure_square(a, "A")?;
    ensure_same_dim(a, m, "A vs M")?;
    let n = a.nrows();
    if n > 64 {
        return Err(Error::DimensionMismatch(
            "Kronecker Lyapunov path is limited to n <= 64".into(),
        ));
    }
    let at = a.transpose();
    let eye = Mat::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, m.iter().copied());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularLyapunov("Kronecker system singular".into()))?;
    Ok(Mat::from_iterator(n, n, sol.iter().copied()))
}

// ── Spectral quantities ──────────────────────────────────────────────

/// Logarithmic 2-norm: largest eigenvalue of the symmetric part.
pub fn logm_norm(a: &Mat) -> Result<f64> {
    ensure_square(a, "A")?;
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .map(|svd| svd.singular_values.iter().copied().fold(0.0, f64::max))
        .unwrap_or(f64::NAN)
}

/// Maximum real part over the spectrum.
pub fn eig_max_real(a: &Mat) -> Result<f64> {
    ensure_square(a, "A")?;
    if a.nrows() == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let RealSchur { t, .. } = real_schur(a)?;
    Ok(schur_max_real(&t))
}

// ── Truncated SVD with energy criterion ──────────────────────────────

/// Left singular basis truncated by the relative-energy rule.
#[derive(Debug, Clone)]
pub struct SvdTruncation {
    /// First `retained_rank` left singular vectors, orthonormal columns.
    pub basis: Mat,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    pub retained_rank: usize,
    /// Retained energy fraction, strictly above the requested tolerance.
    pub energy_fraction: f64,
}

/// Truncate to the smallest rank whose squared singular values retain
/// strictly more than `tol` of the total energy.
pub fn svd_truncate(s: &Mat, tol: f64) -> Result<SvdTruncation> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidTolerance(tol));
    }
    ensure_finite(s)?;
    let total_sq = s.iter().map(|v| v * v).sum::<f64>();
    if total_sq == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let svd = s
        .clone()
        .try_svd(true, false, f64::EPSILON, 0)
        .ok_or(Error::NonConvergence)?;
    let u = svd.u.ok_or(Error::NonConvergence)?;
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let total: f64 = sigma.iter().map(|v| v * v).sum();
    let mut cum = 0.0;
    let mut rank = sigma.len();
    for (i, v) in sigma.iter().enumerate() {
        cum += v * v;
        if cum / total > tol {
            rank = i + 1;
            break;
        }
    }
    let energy: f64 = sigma[..rank].iter().map(|v| v * v).sum::<f64>() / total;
    Ok(SvdTruncation {
        basis: u.columns(0, rank).clone_owned(),
        singular_values: sigma,
        retained_rank: rank,
        energy_fraction: energy,
    })
}

// ── QR retraction ────────────────────────────────────────────────────

/// Thin QR with the positive-diagonal sign convention, used as the
/// orthonormalizing retraction for basis updates.
pub fn qr_retract(m: &Mat) -> Result<(Mat, Mat)> {
    if m.nrows() < m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "retraction expects a tall matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let norm = m.norm();
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..r.nrows() {
        let d = r[(k, k)];
        if d.abs() <= 1e-13 * norm {
            return Err(Error::RankDeficient { index: k, value: d });
        }
        if d < 0.0 {
            for j in k..r.ncols() {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..q.nrows() {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok((q, r))
}

// ── Hamiltonian sign-function Riccati oracle ─────────────────────────

/// Stabilizing solution of `A^T P + P A - P F P + Q = 0` via the matrix
/// sign function of the 2n x 2n Hamiltonian `[[A, -F], [-Q, -A^T]]`.
///
/// Independent of the Newton-Kleinman route; used to cross-check it.
pub fn hamiltonian_riccati_oracle(a: &Mat, f: &Mat, q: &Mat) -> Result<Mat> {
    ensure_square(a, "A")?;
    ensure_same_dim(a, f, "A vs F")?;
    ensure_same_dim(a, q, "A vs Q")?;
    let n = a.nrows();
    let dim = 2 * n;

    let mut ham = Mat::zeros(dim, dim);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-f));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    // Scaled Newton iteration for sign(H).
    let mut s = ham;
    let mut converged = false;
    for _ in 0..120 {
        let lu = s.clone().lu();
        let mut log_det = 0.0;
        for i in 0..dim {
            let u = lu.u()[(i, i)].abs();
            if u == 0.0 || !u.is_finite() {
                return Err(Error::NoStabilizingSolution(
                    "Hamiltonian has an eigenvalue on the imaginary axis".into(),
                ));
            }
            log_det += u.ln();
        }
        let inv = lu.try_inverse().ok_or_else(|| {
            Error::NoStabilizingSolution("Hamiltonian sign iteration broke down".into())
        })?;
        let c = (-log_det / dim as f64).exp();
        let next = (&s * c + &inv / c) * 0.5;
        let delta = (&next - &s).norm();
        let scale = s.norm();
        s = next;
        if delta <= 1e-13 * scale.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoStabilizingSolution(
            "sign iteration did not converge".into(),
        ));
    }

    // Stable invariant subspace = range of (I - sign(H)) / 2.
    let proj = (Mat::identity(dim, dim) - &s) * 0.5;
    let svd = proj
        .try_svd(true, false, f64::EPSILON, 0)
        .ok_or(Error::NonConvergence)?;
    let rank = svd.singular_values.iter().filter(|&&v| v > 0.5).count();
    if rank != n {
        return Err(Error::NoStabilizingSolution(format!(
            "stable subspace has dimension {rank}, expected {n}"
        )));
    }
    let w = svd.u.ok_or(Error::NonConvergence)?;
    let w1 = w.view((0, 0), (n, n)).clone_owned();
    let w2 = w.view((n, 0), (n, n)).clone_owned();
    // Subspace is spanned by [I; P]: P = W2 W1^{-1}.
    let p_t = w1.transpose().lu().solve(&w2.transpose()).ok_or_else(|| {
        Error::NoStabilizingSolution("subspace basis block is singular".into())
    })?;
    let p = symmetrize(&p_t.transpose());
    ensure_finite(&p)?;

    let min_eig = p
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-8 * p.norm().max(1.0) {
        return Err(Error::NoStabilizingSolution(format!(
            "solution is not positive semidefinite (min eig {min_eig:.3e})"
        )));
    }
    let abscissa = eig_max_real(&(a - f * &p))?;
    if abscissa >= 0.0 {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop not stable (max real eig {abscissa:.3e})"
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> Mat {
        Mat::from_diagonal(&DVector::from_row_slice(values))
    }

    #[test]
    fn lyap_diagonal_case() {
        let a = diag(&[-1.0, -2.0]);
        let m = diag(&[-1.0, -1.0]);
        let x = lyap_solve(&a, &m).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((x[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(x[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn lyap_identity_scaled_case() {
        let a = -Mat::identity(3, 3);
        let m = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 4.0]);
        let x = lyap_solve(&a, &m).unwrap();
        assert!((&x + &m * 0.5).norm() < 1e-13);
    }

    #[test]
    fn lyap_rejects_eigenvalue_sum_zero() {
        // a = diag(1, -1): eigenvalue pair sums to zero.
        let a = diag(&[1.0, -1.0]);
        let m = -Mat::identity(2, 2);
        assert!(matches!(
            lyap_solve(&a, &m),
            Err(Error::SingularLyapunov(_))
        ));
    }

    #[test]
    fn lyap_dimension_mismatch() {
        let a = Mat::zeros(3, 2);
        let m = Mat::zeros(3, 3);
        assert!(matches!(
            lyap_solve(&a, &m),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn logm_norm_cases() {
        assert!((logm_norm(&(-Mat::identity(4, 4))).unwrap() + 1.0).abs() < 1e-14);
        let skew = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(logm_norm(&skew).unwrap().abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&diag(&[3.0, -1.0])) - 3.0).abs() < 1e-13);
        // Orthonormal columns have unit spectral norm.
        let m = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((spectral_norm(&m) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn eig_max_real_diagonal() {
        assert!((eig_max_real(&diag(&[-3.0, 2.0, -1.0])).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eig_max_real_complex_pair() {
        // Rotation block shifted by -0.5: eigenvalues -0.5 ± i.
        let a = Mat::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.5]);
        assert!((eig_max_real(&a).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn svd_truncate_rank_one() {
        let u = DVector::from_row_slice(&[1.0, 2.0, 2.0]);
        let v = DVector::from_row_slice(&[3.0, 0.0, 4.0, 0.0]);
        let s = &u * v.transpose();
        let t = svd_truncate(&s, 0.5).unwrap();
        assert_eq!(t.retained_rank, 1);
        assert!((t.basis.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_truncate_equal_energies() {
        let t = svd_truncate(&Mat::identity(4, 4), 0.9999).unwrap();
        assert_eq!(t.retained_rank, 4);
        // And a lower tolerance keeps fewer directions: 0.6 -> 3 of 4 quarters.
        let t = svd_truncate(&Mat::identity(4, 4), 0.6).unwrap();
        assert_eq!(t.retained_rank, 3);
    }

    #[test]
    fn svd_truncate_rejects_bad_inputs() {
        assert!(matches!(
            svd_truncate(&Mat::identity(3, 3), 1.0),
            Err(Error::InvalidTolerance(_))
        ));
        assert!(matches!(
            svd_truncate(&Mat::zeros(3, 3), 0.5),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn qr_retract_identity_on_orthonormal() {
        let m = Mat::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let (q, r) = qr_retract(&m).unwrap();
        assert!((&q - &m).norm() < 1e-13);
        assert!((&r - Mat::identity(2, 2)).norm() < 1e-13);
    }

    #[test]
    fn qr_retract_column_scaling() {
        let m = Mat::from_row_slice(4, 2, &[2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let (q, r) = qr_retract(&m).unwrap();
        assert!((&q * &r - &m).norm() < 1e-13);
        assert!((&r - Mat::identity(2, 2) * 2.0).norm() < 1e-13);
    }

    #[test]
    fn qr_retract_rank_deficient() {
        let mut m = Mat::zeros(5, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1e-15;
        assert!(matches!(
            qr_retract(&m),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn oracle_scalar_closed_form() {
        // a=1, f=1, q=1: p = 1 + sqrt(2).
        let one = Mat::identity(1, 1);
        let p = hamiltonian_riccati_oracle(&one, &one, &one).unwrap();
        assert!((p[(0, 0)] - (1.0 + 2.0_f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn oracle_zero_q_stable_a() {
        let a = diag(&[-1.0, -3.0]);
        let f = Mat::identity(2, 2);
        let q = Mat::zeros(2, 2);
        let p = hamiltonian_riccati_oracle(&a, &f, &q).unwrap();
        assert!(p.norm() < 1e-10);
    }
}
