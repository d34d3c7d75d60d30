//! Dynamical low-rank approximation of the controlled parametric ensemble:
//! factor initialization, the controlled factor right-hand sides, the
//! orthogonality-preserving midpoint step, and the DLRA / P-DLRA / K-DLRA
//! drivers.
//!
//! The ensemble `Y(t) ∈ R^{N_h x p}` is represented as `U Ztil` with `U`
//! orthonormal (`N_h x r`) and coefficients `Ztil` (`r x p`); the gauge
//! `U^T U̇ = 0` fixes the factor dynamics.

use std::time::Instant;

use rayon::prelude::*;

use crate::densela::{qr_retract, svd_truncate, Mat};
use crate::error::{Error, Result};
use crate::fom::{SweepConfig, SweepStats, Trajectory};
use crate::models::{initial_state, ParamGrid, QuadraticModel};
use crate::riccati::{feedback_gain, sdre_level};
use crate::rom::pod::{enrich_basis, enrichment_source, reduce_operators, Enrichment, ReducedOperators};

/// Orthonormal basis factor and coefficient factor of the ensemble.
#[derive(Debug, Clone)]
pub struct LowRankState {
    pub u: Mat,
    pub ztil: Mat,
}

impl LowRankState {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.ztil.ncols()
    }

    /// Dense reconstruction `U Ztil`; test and export use only.
    pub fn reconstruct(&self) -> Mat {
        &self.u * &self.ztil
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.rank();
        (self.u.transpose() * &self.u - Mat::identity(r, r)).norm()
    }
}

/// Coefficient Gramian `C = Ztil Ztil^T` with the regularization actually
/// applied to keep it invertible as trajectories stabilize toward zero.
#[derive(Debug, Clone)]
pub struct DlraGramian {
    pub c: Mat,
    pub regularization: f64,
}

impl DlraGramian {
    pub fn new(ztil: &Mat) -> Self {
        let c = ztil * ztil.transpose();
        let regularization = 1e-12 * c.trace().max(1.0);
        DlraGramian { c, regularization }
    }

    fn regularized(&self) -> Mat {
        let r = self.c.nrows();
        &self.c + Mat::identity(r, r) * self.regularization
    }
}

/// Rank-truncated SVD initialization `U = left singular vectors`,
/// `Ztil = U^T Y0`.
pub fn dlra_init(y0: &Mat, tol: f64) -> Result<LowRankState> {
    let trunc = svd_truncate(y0, tol)?;
    let ztil = trunc.basis.transpose() * y0;
    Ok(LowRankState {
        u: trunc.basis,
        ztil,
    })
}

fn fixed_rank_basis(y0: &Mat, rank: usize) -> Result<Mat> {
    let svd = y0
        .clone()
        .try_svd(true, false, f64::EPSILON, 0)
        .ok_or(Error::NonConvergence)?;
    let u = svd.u.ok_or(Error::NonConvergence)?;
    if rank == 0 || rank > u.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "rank {rank} outside 1..={}",
            u.ncols()
        )));
    }
    Ok(u.columns(0, rank).clone_owned())
}

/// Controlled factor right-hand sides.
///
/// `F_U = (I - U U^T)(A U + T(U ⊗ U) V(Ztil) - S(Ztil)(C + εI)^{-1})` and
/// `F_Z = A_r Ztil + T_r V_⊗(Ztil) - F_r P_Z`, with `P_Z` the column-wise
/// application of the per-parameter reduced Riccati solutions. Cost stays at
/// `O(N_h (r^2 + r m) + p r^3)`; the dense ensemble is never assembled.
pub fn dlra_rhs(
    state: &LowRankState,
    model: &QuadraticModel,
    ops: &ReducedOperators,
    p_list: &[Mat],
) -> Result<(Mat, Mat)> {
    let r = state.rank();
    let p = state.param_count();
    if p_list.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} Riccati solutions for {p} parameters",
            p_list.len()
        )));
    }
    if ops.rank() != r {
        return Err(Error::DimensionMismatch(format!(
            "operators rank {} vs state rank {r}",
            ops.rank()
        )));
    }
    let gram = DlraGramian::new(&state.ztil);
    let creg = gram.regularized();
    let eigs = creg.clone().symmetric_eigen().eigenvalues;
    let (cmax, cmin) = eigs
        .iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &v| {
            (hi.max(v), lo.min(v))
        });
    if cmin <= 0.0 || cmax / cmin > 1.0 / gram.regularization {
        return Err(Error::SingularGramian);
    }
    let chol = creg.cholesky().ok_or(Error::SingularGramian)?;

    // P_Z: column j = P_j Ztil_j.
    let mut pz = Mat::zeros(r, p);
    for j in 0..p {
        let col = &p_list[j] * state.ztil.column(j);
        pz.set_column(j, &col);
    }
    // V_⊗: column j = Ztil_j ⊗ Ztil_j (index a*r + b holds z_a z_b).
    let mut v_kron = Mat::zeros(r * r, p);
    for j in 0..p {
        let z = state.ztil.column(j);
        for a in 0..r {
            for bb in 0..r {
                v_kron[(a * r + bb, j)] = z[a] * z[bb];
            }
        }
    }
    // V = V_⊗ Ztil^T (C + εI)^{-1}.
    let zt_cinv = chol.solve(&state.ztil).transpose(); // p x r
    let v_mat = &v_kron * &zt_cinv;
    // S = B R^{-1} B_r^T P_Z Ztil^T.
    let rchol = ops.r_mat.clone().cholesky().ok_or(Error::SingularR)?;
    let w = rchol.solve(&(ops.b_r.transpose() * &pz)); // m x p
    let s_mat = &model.b * (&w * state.ztil.transpose()); // N x r
    let s_cinv = chol.solve(&s_mat.transpose()).transpose(); // N x r

    let g = &model.a * &state.u + &ops.quad_basis * &v_mat - s_cinv;
    let f_u = &g - &state.u * (state.u.transpose() * &g);
    let f_z = &ops.a_r * &state.ztil + &ops.t_r * &v_kron - &ops.f_r * &pz;
    Ok((f_u, f_z))
}

/// One explicit-midpoint step of the factor dynamics with the Riccati
/// solutions and reduced operators frozen over the step. Each basis update
/// is retracted through the positive-diagonal QR and the coefficients are
/// compensated by the corresponding triangular factor, so the reconstruction
/// `U Ztil` stays continuous and `U` orthonormal.
pub fn stiefel_step(
    state: &LowRankState,
    model: &QuadraticModel,
    ops: &ReducedOperators,
    p_list: &[Mat],
    dt: f64,
) -> Result<LowRankState> {
    let (k1_u, k1_z) = dlra_rhs(state, model, ops, p_list)?;
    let (uh, rh) = qr_retract(&(&state.u + &k1_u * (dt / 2.0)))?;
    let half = LowRankState {
        u: uh,
        ztil: &rh * (&state.ztil + &k1_z * (dt / 2.0)),
    };
    let (k2_u, k2_z) = dlra_rhs(&half, model, ops, p_list)?;
    let (u_new, r_new) = qr_retract(&(&state.u + &k2_u * dt))?;
    let next = LowRankState {
        u: u_new,
        ztil: &r_new * (&state.ztil + &k2_z * dt),
    };
    let defect = next.orthonormality_defect();
    if defect > 1e-10 {
        return Err(Error::NonOrthonormalBasis(defect));
    }
    if next.ztil.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(next)
}

/// Full DLRA run output: factor checkpoints, lifted trajectories, and cost
/// counters.
pub struct DlraRunResult {
    pub checkpoints: Vec<LowRankState>,
    pub trajectories: Vec<Trajectory>,
    pub stats: SweepStats,
    pub rank: usize,
    /// Basis size from the initial-condition SVD.
    pub r1: usize,
    /// Additional enrichment directions.
    pub r2: usize,
}

/// Evolve the controlled parametric ensemble at low rank. Per time level the
/// reduced operators are rebuilt from the current basis, the reduced SDREs
/// are solved with cascade warm starts (restarting from the first
/// parameter's solution), and one orthogonality-preserving midpoint step
/// advances the factors. `P`/`K` enrichment augments the initial basis with
/// Riccati or gain information before the time loop.
#[allow(clippy::too_many_arguments)]
pub fn dlra_run(
    model: &QuadraticModel,
    grid: &ParamGrid,
    sweep: &SweepConfig,
    energy_tol: f64,
    enrich: Enrichment,
    enrich_count: usize,
    rank_override: Option<usize>,
) -> Result<DlraRunResult> {
    let started = Instant::now();
    if grid.is_empty() {
        return Err(Error::DegenerateBox("empty parameter grid".into()));
    }
    if sweep.dt <= 0.0 || sweep.t_final < sweep.dt {
        return Err(Error::DimensionMismatch("need 0 < dt <= t_final".into()));
    }
    let n_steps = (sweep.t_final / sweep.dt).round() as usize;
    if sweep.store_every == 0 || n_steps % sweep.store_every != 0 {
        return Err(Error::GridMismatch(format!(
            "store_every {} does not divide {n_steps} steps",
            sweep.store_every
        )));
    }

    let p = grid.len();
    let n = model.n();
    let mut y0 = Mat::zeros(n, p);
    for (j, &mu) in grid.values.iter().enumerate() {
        y0.set_column(j, &initial_state(model.problem, mu, &model.grid)?);
    }

    let u0 = match rank_override {
        Some(rank) => fixed_rank_basis(&y0, rank)?,
        None => svd_truncate(&y0, energy_tol)?.basis,
    };
    let r1 = u0.ncols();
    let u0 = match enrichment_source(model, grid, enrich, enrich_count, &sweep.nk)
        .map_err(|e| e.stage("enrichment"))?
    {
        Some(source) => enrich_basis(&u0, &source, energy_tol)?,
        None => u0,
    };
    let r2 = u0.ncols() - r1;
    let rank = u0.ncols();

    let mut state = LowRankState {
        ztil: u0.transpose() * &y0,
        u: u0,
    };

    let mut trajectories: Vec<Trajectory> = (0..p)
        .map(|j| Trajectory {
            times: vec![0.0],
            states: vec![&state.u * state.ztil.column(j)],
            controls: Vec::new(),
            riccati_iters: Vec::new(),
            wall_time: 0.0,
        })
        .collect();
    let mut checkpoints = vec![state.clone()];
    let mut stats = SweepStats::default();
    let mut guess = Mat::zeros(rank, rank);

    for level in 0..=n_steps {
        let t = level as f64 * sweep.dt;
        let ops = reduce_operators(model, &state.u).map_err(|e| e.at(t, 0))?;
        let coeffs: Vec<Mat> = (0..p)
            .map(|j| ops.sdc(&state.ztil.column(j).clone_owned()))
            .collect();
        let riccati_start = Instant::now();
        let reports = sdre_level(&coeffs, &ops.f_r, &ops.q_r, &guess, &sweep.nk, sweep.solver)
            .map_err(|e| e.at(t, 0))?;
        stats.riccati_seconds += riccati_start.elapsed().as_secs_f64();
        stats.nk_solves += p;
        stats.lyapunov_solves += reports.iter().map(|r| r.iterations).sum::<usize>();

        if level % sweep.store_every == 0 {
            let gains: Vec<Mat> = reports
                .par_iter()
                .map(|rep| feedback_gain(&rep.p, &ops.b_r, &ops.r_mat))
                .collect::<Result<_>>()?;
            for (j, traj) in trajectories.iter_mut().enumerate() {
                traj.controls.push(-(&gains[j] * state.ztil.column(j)));
                traj.riccati_iters.push(reports[j].iterations);
            }
        }

        if level < n_steps {
            let p_list: Vec<Mat> = reports.iter().map(|rep| rep.p.clone()).collect();
            state = stiefel_step(&state, model, &ops, &p_list, sweep.dt).map_err(|e| e.at(t, 0))?;
            if (level + 1) % sweep.store_every == 0 {
                for (j, traj) in trajectories.iter_mut().enumerate() {
                    traj.times.push((level + 1) as f64 * sweep.dt);
                    traj.states.push(&state.u * state.ztil.column(j));
                }
                checkpoints.push(state.clone());
            }
        }
        guess = reports.into_iter().next().unwrap().p;
    }

    stats.mean_iterations = stats.lyapunov_solves as f64 / stats.nk_solves.max(1) as f64;
    stats.wall_seconds = started.elapsed().as_secs_f64();
    let per = stats.wall_seconds / p as f64;
    for traj in &mut trajectories {
        traj.wall_time = per;
    }
    Ok(DlraRunResult {
        checkpoints,
        trajectories,
        stats,
        rank,
        r1,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_rank_one() {
        let u = Vec64::from_row_slice(&[3.0, 0.0, 4.0]);
        let w = Vec64::from_row_slice(&[1.0, 2.0]);
        let y0 = &u * w.transpose();
        let state = dlra_init(&y0, 0.5).unwrap();
        assert_eq!(state.rank(), 1);
        assert!((state.reconstruct() - y0).norm() < 1e-12);
    }

    #[test]
    fn gramian_regularization_floor() {
        let g = DlraGramian::new(&Mat::zeros(3, 5));
        assert!(g.regularization >= 1e-12);
        assert!(g.regularized().cholesky().is_some());
    }
}
