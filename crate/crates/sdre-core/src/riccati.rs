//! SDRE residual evaluation, Newton-Kleinman iteration, cascade sweeps over
//! ordered parameter sets, and feedback-gain extraction.
//!
//! Each Newton step solves one Lyapunov equation with the current closed-loop
//! matrix; the cascade variant warm-starts every solve with the previous
//! converged solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densela::{lyap_bartels_stewart, symmetrize, Mat};
use crate::error::{Error, Result};

/// Which engine solves a batch of SDREs at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Independent Newton-Kleinman from the trivial (zero) guess.
    Nk,
    /// Cascade Newton-Kleinman: warm starts along the ordered coefficients.
    Cnk,
    /// Direct Hamiltonian sign-function solve, no warm starts.
    Oracle,
}

/// Newton-Kleinman solver configuration.
#[derive(Debug, Clone)]
pub struct NkConfig {
    /// Frobenius-norm residual threshold.
    pub tol_nk: f64,
    pub max_iters: usize,
    /// Check stability of the closed-loop coefficient at every iteration and
    /// abort instead of iterating on a non-stabilizing guess.
    pub divergence_guard: bool,
}

impl Default for NkConfig {
    fn default() -> Self {
        Self {
            tol_nk: 1e-8,
            max_iters: 60,
            divergence_guard: true,
        }
    }
}

/// Converged Riccati solve plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct RiccatiReport {
    pub p: Mat,
    pub iterations: usize,
    pub final_residual: f64,
    /// Spectral abscissa of `A - F P`; negative on success.
    pub closed_loop_max_real_eig: f64,
    pub warm_started: bool,
    /// Residual norms observed before each Newton step, then at convergence.
    pub residual_history: Vec<f64>,
}

/// Residual `A^T P + P A - P F P + Q` of the SDRE.
pub fn sdre_residual(a: &Mat, p: &Mat, f: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    for (m, name) in [(a, "A"), (p, "P"), (f, "F"), (q, "Q")] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} must be {n}x{n}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    Ok(a.transpose() * p + p * a - p * f * p + q)
}

/// Newton-Kleinman: Lyapunov-step iteration on the SDRE residual.
///
/// Requires a stabilizing symmetric PSD initial guess; with the divergence
/// guard on, a non-stabilizing iterate aborts with diagnostics rather than
/// looping.
pub fn nk_solve(a: &Mat, f: &Mat, q: &Mat, p0: &Mat, cfg: &NkConfig) -> Result<RiccatiReport> {
    let mut report = nk_core(a, f, q, p0, cfg)?;
    fill_closed_loop_eig(a, f, &mut report)?;
    Ok(report)
}

/// Newton iteration without the final closed-loop eigenvalue, so sweeps can
/// batch those checks off the sequential cascade path.
pub(crate) fn nk_core(
    a: &Mat,
    f: &Mat,
    q: &Mat,
    p0: &Mat,
    cfg: &NkConfig,
) -> Result<RiccatiReport> {
    let warm_started = p0.norm() > 0.0;
    let mut p = symmetrize(p0);
    let mut iterations = 0usize;
    let mut history = Vec::new();
    loop {
        let residual = sdre_residual(a, &p, f, q)?;
        let res_norm = residual.norm();
        history.push(res_norm);
        if res_norm <= cfg.tol_nk {
            return Ok(RiccatiReport {
                p,
                iterations,
                final_residual: res_norm,
                closed_loop_max_real_eig: f64::NAN,
                warm_started,
                residual_history: history,
            });
        }
        if iterations >= cfg.max_iters {
            return Err(Error::MaxItersExceeded {
                max_iters: cfg.max_iters,
                residual: res_norm,
            });
        }
        let a_cl = a - f * &p;
        let rhs = -(&p * f * &p + q);
        let out = lyap_bartels_stewart(&a_cl, &rhs)?;
        if cfg.divergence_guard && out.coef_abscissa >= 0.0 {
            return Err(Error::NonStabilizingGuess {
                abscissa: out.coef_abscissa,
                iteration: iterations,
            });
        }
        p = symmetrize(&out.x);
        iterations += 1;
    }
}

/// Fill `closed_loop_max_real_eig` for a report produced by [`nk_core`] and
/// enforce that the converged solution is stabilizing.
pub(crate) fn fill_closed_loop_eig(a: &Mat, f: &Mat, report: &mut RiccatiReport) -> Result<()> {
    let abscissa = crate::densela::eig_max_real(&(a - f * &report.p))?;
    report.closed_loop_max_real_eig = abscissa;
    if abscissa >= 0.0 {
        return Err(Error::UnstableClosedLoop(abscissa));
    }
    Ok(())
}

/// Cascade Newton-Kleinman over an ordered set of states: the converged
/// solution at state k seeds the solve at state k+1.
pub fn cnk_sweep<S, AF>(
    a_of: AF,
    states: &[S],
    f: &Mat,
    q: &Mat,
    p_init: &Mat,
    cfg: &NkConfig,
) -> Result<Vec<RiccatiReport>>
where
    AF: Fn(&S) -> Mat,
{
    if states.is_empty() {
        return Err(Error::DimensionMismatch("empty state list".into()));
    }
    let mut reports = Vec::with_capacity(states.len());
    let mut guess = p_init.clone();
    for (k, state) in states.iter().enumerate() {
        let a = a_of(state);
        let report = nk_solve(&a, f, q, &guess, cfg)
            .map_err(|e| e.stage(format!("cascade index {k}")))?;
        guess = report.p.clone();
        reports.push(report);
    }
    Ok(reports)
}

/// Solve one time level's batch of SDREs given their coefficient matrices.
///
/// The cascade route chains warm starts sequentially and defers the per-solve
/// stability audits to a parallel pass; the independent routes parallelize
/// whole solves.
pub(crate) fn sdre_level(
    coeffs: &[Mat],
    f: &Mat,
    q: &Mat,
    guess: &Mat,
    cfg: &NkConfig,
    solver: SolverKind,
) -> Result<Vec<RiccatiReport>> {
    match solver {
        SolverKind::Cnk => {
            let mut reports = Vec::with_capacity(coeffs.len());
            let mut g = guess.clone();
            for a in coeffs {
                let rep = nk_core(a, f, q, &g, cfg)?;
                g = rep.p.clone();
                reports.push(rep);
            }
            reports
                .par_iter_mut()
                .zip(coeffs.par_iter())
                .try_for_each(|(rep, a)| fill_closed_loop_eig(a, f, rep))?;
            Ok(reports)
        }
        SolverKind::Nk => {
            let zero = Mat::zeros(q.nrows(), q.ncols());
            coeffs
                .par_iter()
                .map(|a| nk_solve(a, f, q, &zero, cfg))
                .collect()
        }
        SolverKind::Oracle => coeffs
            .par_iter()
            .map(|a| {
                let p = crate::densela::hamiltonian_riccati_oracle(a, f, q)?;
                let final_residual = sdre_residual(a, &p, f, q)?.norm();
                let mut rep = RiccatiReport {
                    p,
                    iterations: 0,
                    final_residual,
                    closed_loop_max_real_eig: f64::NAN,
                    warm_started: false,
                    residual_history: vec![final_residual],
                };
                fill_closed_loop_eig(a, f, &mut rep)?;
                Ok(rep)
            })
            .collect(),
    }
}

/// Feedback gain `K = R^{-1} B^T P`.
pub fn feedback_gain(p: &Mat, b: &Mat, r: &Mat) -> Result<Mat> {
    if b.nrows() != p.nrows() || r.nrows() != r.ncols() || r.nrows() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "P {}x{}, B {}x{}, R {}x{}",
            p.nrows(),
            p.ncols(),
            b.nrows(),
            b.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    if (r - r.transpose()).norm() > 1e-12 * r.norm().max(1.0) {
        return Err(Error::SingularR);
    }
    let chol = r.clone().cholesky().ok_or(Error::SingularR)?;
    Ok(chol.solve(&(b.transpose() * p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densela::Vec64;

    #[test]
    fn residual_zero_p_returns_q() {
        let a = Mat::identity(3, 3);
        let q = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        let r = sdre_residual(&a, &Mat::zeros(3, 3), &Mat::identity(3, 3), &q).unwrap();
        assert!((r - q).norm() < 1e-14);
    }

    #[test]
    fn residual_scalar_root() {
        let one = Mat::identity(1, 1);
        let p = Mat::identity(1, 1) * (1.0 + 2.0_f64.sqrt());
        let r = sdre_residual(&one, &p, &one, &one).unwrap();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn nk_scalar_converges_to_closed_form() {
        let one = Mat::identity(1, 1);
        let p0 = Mat::identity(1, 1) * 2.0; // a - f p0 = -1, stable
        let report = nk_solve(&one, &one, &one, &p0, &NkConfig::default()).unwrap();
        assert!((report.p[(0, 0)] - (1.0 + 2.0_f64.sqrt())).abs() < 1e-10);
        assert!(report.closed_loop_max_real_eig < 0.0);
        assert!(report.warm_started);
    }

    #[test]
    fn nk_zero_q_one_iteration() {
        let a = Mat::from_diagonal(&Vec64::from_row_slice(&[-1.0, -2.0]));
        let report = nk_solve(
            &a,
            &Mat::identity(2, 2),
            &Mat::zeros(2, 2),
            &Mat::zeros(2, 2),
            &NkConfig::default(),
        )
        .unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.p.norm() < 1e-14);
    }

    #[test]
    fn nk_rejects_unstable_trivial_guess() {
        let a = Mat::identity(2, 2); // unstable, P0 = 0 not stabilizing
        let f = Mat::identity(2, 2) * 1e-12;
        let q = Mat::identity(2, 2);
        let err = nk_solve(&a, &f, &q, &Mat::zeros(2, 2), &NkConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonStabilizingGuess { .. }));
    }

    #[test]
    fn cascade_single_element_matches_nk() {
        let one = Mat::identity(1, 1);
        let p0 = Mat::identity(1, 1) * 2.0;
        let direct = nk_solve(&one, &one, &one, &p0, &NkConfig::default()).unwrap();
        let swept = cnk_sweep(|_: &()| Mat::identity(1, 1), &[()], &one, &one, &p0, &NkConfig::default())
            .unwrap();
        assert_eq!(swept.len(), 1);
        assert!((swept[0].p[(0, 0)] - direct.p[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn feedback_gain_cases() {
        let p = Mat::from_fn(3, 3, |i, j| ((i + 1) * (j + 2)) as f64);
        let b = Mat::identity(3, 3);
        let r = Mat::identity(3, 3);
        let k = feedback_gain(&p, &b, &r).unwrap();
        assert!((&k - &p).norm() < 1e-13);
        let zero = feedback_gain(&Mat::zeros(3, 3), &b, &r).unwrap();
        assert!(zero.norm() == 0.0);
    }

    #[test]
    fn feedback_gain_rejects_indefinite_r() {
        let p = Mat::identity(2, 2);
        let b = Mat::identity(2, 2);
        let r = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(feedback_gain(&p, &b, &r), Err(Error::SingularR)));
    }
}
