//! Builders for the benchmark problems as semilinear-quadratic models
//! `f(y) = A y + T(y ⊗ y)`, their state-dependent coefficient (SDC)
//! factorizations, parametric initial conditions, and cascade-ordered
//! parameter grids.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::densela::{Mat, Vec64};
use crate::error::{Error, Result};

/// Benchmark problem selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Burgers1d,
    Burgers2d,
    ReactionDiffusion,
}

impl Problem {
    /// Admissible parameter box for the problem's initial-condition family.
    pub fn param_box(self) -> [[f64; 2]; 2] {
        match self {
            Problem::Burgers1d => [[0.1, 0.5], [0.2, 1.5]],
            Problem::Burgers2d => [[0.01, 0.05], [0.1, 0.3]],
            // Scalar parameter family; the second coordinate is unused.
            Problem::ReactionDiffusion => [[1.0, 10.0], [0.0, 10.0]],
        }
    }
}

/// Spatial grid metadata. Nodes are stored with 2D coordinates; 1D problems
/// keep the second coordinate at zero.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    /// Spacing per axis (uniform).
    pub h: f64,
    pub coords: Vec<[f64; 2]>,
    pub n_per_axis: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Quadrature weight of one node (h in 1D, h^2 in 2D).
    pub fn weight(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
}

/// Structure of the quadratic term.
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    /// `quad(y, z) = -y ∘ (D z)`; the SDC subtracts `diag(D y)`.
    Advection { d: Mat },
    /// Pointwise reaction whose SDC adds `diag(y ∘ y)`, so the dynamics is
    /// `A y + (y ∘ y) ∘ y`. The bilinear pairing is `quad(y, z) = y ∘ z`;
    /// the reaction enters the coefficient quadratically, so the
    /// `A y + quad(y, y)` identity does not apply to this variant.
    CubicReaction,
}

/// Semilinear model with control injection and cost weights.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub a: Mat,
    pub nonlinearity: Nonlinearity,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    /// `F = B R^{-1} B^T`, precomputed.
    pub f: Mat,
    pub grid: Grid,
    pub control_nodes: Vec<usize>,
    pub obs_nodes: Vec<usize>,
    pub problem: Problem,
}

impl QuadraticModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Bilinear pairing `T(y ⊗ z)`.
    pub fn quad(&self, y: &Vec64, z: &Vec64) -> Vec64 {
        match &self.nonlinearity {
            Nonlinearity::Advection { d } => {
                let dz = d * z;
                Vec64::from_fn(y.len(), |i, _| -y[i] * dz[i])
            }
            Nonlinearity::CubicReaction => Vec64::from_fn(y.len(), |i, _| y[i] * z[i]),
        }
    }

    /// Uncontrolled right-hand side `f(y) = 𝒜(y) y`.
    pub fn rhs(&self, y: &Vec64) -> Vec64 {
        match &self.nonlinearity {
            Nonlinearity::Advection { d } => {
                let dy = d * y;
                let mut out = &self.a * y;
                for i in 0..y.len() {
                    out[i] -= y[i] * dy[i];
                }
                out
            }
            Nonlinearity::CubicReaction => {
                let mut out = &self.a * y;
                for i in 0..y.len() {
                    out[i] += y[i] * y[i] * y[i];
                }
                out
            }
        }
    }
}

/// State-dependent coefficient `𝒜(y)` with `𝒜(y) y = f(y)`.
pub fn sdc_matrix(model: &QuadraticModel, y: &Vec64) -> Result<Mat> {
    if y.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "state length {} vs model dimension {}",
            y.len(),
            model.n()
        )));
    }
    let mut m = model.a.clone();
    match &model.nonlinearity {
        Nonlinearity::Advection { d } => {
            let dy = d * y;
            for i in 0..y.len() {
                m[(i, i)] -= dy[i];
            }
        }
        Nonlinearity::CubicReaction => {
            for i in 0..y.len() {
                m[(i, i)] += y[i] * y[i];
            }
        }
    }
    Ok(m)
}

/// First-order upwind derivative matrix on a uniform 1D grid.
///
/// Interior/outflow rows take backward differences; the inflow row uses a
/// zero-inflow ghost value, which keeps the advection operator strictly
/// stable (a Neumann-consistent closure leaves a neutral constant mode that
/// no interior control can reach).
fn upwind_d1(n: usize, h: f64) -> Mat {
    let mut d = Mat::zeros(n, n);
    d[(0, 0)] = 1.0 / h;
    for i in 1..n {
        d[(i, i)] = 1.0 / h;
        d[(i, i - 1)] = -1.0 / h;
    }
    d
}

fn nodes_in_intervals(xs: &[f64], intervals: &[(f64, f64)]) -> Vec<usize> {
    let eps = 1e-12;
    xs.iter()
        .enumerate()
        .filter(|(_, &x)| intervals.iter().any(|&(lo, hi)| x >= lo - eps && x <= hi + eps))
        .map(|(i, _)| i)
        .collect()
}

fn injection_matrix(n: usize, nodes: &[usize]) -> Mat {
    let mut b = Mat::zeros(n, nodes.len());
    for (j, &i) in nodes.iter().enumerate() {
        b[(i, j)] = 1.0;
    }
    b
}

fn cost_weights(
    n: usize,
    weight: f64,
    control_weight: f64,
    control_nodes: &[usize],
    obs_nodes: &[usize],
) -> (Mat, Mat, Mat, Mat) {
    let b = injection_matrix(n, control_nodes);
    let mut q = Mat::zeros(n, n);
    for &i in obs_nodes {
        q[(i, i)] = weight;
    }
    let m = control_nodes.len();
    let r = Mat::identity(m, m) * (control_weight * weight);
    // F = B R^{-1} B^T: diagonal injection with weight 1 / (control_weight * h^dim).
    let mut f = Mat::zeros(n, n);
    for &i in control_nodes {
        f[(i, i)] = 1.0 / (control_weight * weight);
    }
    (b, q, r, f)
}

/// 1D generalized inviscid Burgers model on `domain`, advection-dominated.
pub fn build_burgers1d(
    n_h: usize,
    domain: (f64, f64),
    advect: f64,
    control_weight: f64,
    omega_c: &[(f64, f64)],
    omega_o: &[(f64, f64)],
) -> Result<QuadraticModel> {
    if n_h < 8 {
        return Err(Error::DimensionMismatch("N_h must be at least 8".into()));
    }
    let (a0, b0) = domain;
    let h = (b0 - a0) / (n_h - 1) as f64;
    let xs: Vec<f64> = (0..n_h).map(|i| a0 + h * i as f64).collect();
    let d = upwind_d1(n_h, h);
    let a = -advect * &d;

    let control_nodes = nodes_in_intervals(&xs, omega_c);
    if control_nodes.is_empty() {
        return Err(Error::EmptyMask("omega_c".into()));
    }
    let obs_nodes = nodes_in_intervals(&xs, omega_o);
    if obs_nodes.is_empty() {
        return Err(Error::EmptyMask("omega_o".into()));
    }
    let (b, q, r, f) = cost_weights(n_h, h, control_weight, &control_nodes, &obs_nodes);

    Ok(QuadraticModel {
        a,
        nonlinearity: Nonlinearity::Advection { d },
        b,
        q,
        r,
        f,
        grid: Grid {
            dim: 1,
            h,
            coords: xs.iter().map(|&x| [x, 0.0]).collect(),
            n_per_axis: n_h,
        },
        control_nodes,
        obs_nodes,
        problem: Problem::Burgers1d,
    })
}

/// 2D generalized inviscid Burgers model on a square tensor grid.
pub fn build_burgers2d(
    n_per_axis: usize,
    domain: (f64, f64),
    advect: f64,
    control_weight: f64,
    omega_c: [(f64, f64); 2],
    omega_o: [(f64, f64); 2],
) -> Result<QuadraticModel> {
    if n_per_axis < 4 {
        return Err(Error::DimensionMismatch(
            "n_per_axis must be at least 4".into(),
        ));
    }
    let n = n_per_axis * n_per_axis;
    let (a0, b0) = domain;
    let h = (b0 - a0) / (n_per_axis - 1) as f64;
    let axis: Vec<f64> = (0..n_per_axis).map(|i| a0 + h * i as f64).collect();
    // Node k = ix + iy * n_per_axis.
    let mut coords = Vec::with_capacity(n);
    for iy in 0..n_per_axis {
        for ix in 0..n_per_axis {
            coords.push([axis[ix], axis[iy]]);
        }
    }
    let mut d = Mat::zeros(n, n);
    for iy in 0..n_per_axis {
        for ix in 0..n_per_axis {
            let k = ix + iy * n_per_axis;
            // x-derivative
            d[(k, k)] += 1.0 / h;
            if ix > 0 {
                d[(k, k - 1)] -= 1.0 / h;
            }
            // y-derivative
            d[(k, k)] += 1.0 / h;
            if iy > 0 {
                d[(k, k - n_per_axis)] -= 1.0 / h;
            }
        }
    }
    let a = -advect * &d;

    let in_box = |c: &[f64; 2], bx: &[(f64, f64); 2]| {
        let eps = 1e-12;
        c[0] >= bx[0].0 - eps && c[0] <= bx[0].1 + eps && c[1] >= bx[1].0 - eps && c[1] <= bx[1].1 + eps
    };
    let control_nodes: Vec<usize> = coords
        .iter()
        .enumerate()
        .filter(|(_, c)| in_box(c, &omega_c))
        .map(|(i, _)| i)
        .collect();
    if control_nodes.is_empty() {
        return Err(Error::EmptyMask("omega_c".into()));
    }
    let obs_nodes: Vec<usize> = coords
        .iter()
        .enumerate()
        .filter(|(_, c)| in_box(c, &omega_o))
        .map(|(i, _)| i)
        .collect();
    if obs_nodes.is_empty() {
        return Err(Error::EmptyMask("omega_o".into()));
    }
    let (b, q, r, f) = cost_weights(n, h * h, control_weight, &control_nodes, &obs_nodes);

    Ok(QuadraticModel {
        a,
        nonlinearity: Nonlinearity::Advection { d },
        b,
        q,
        r,
        f,
        grid: Grid {
            dim: 2,
            h,
            coords,
            n_per_axis,
        },
        control_nodes,
        obs_nodes,
        problem: Problem::Burgers2d,
    })
}

/// Nonlinear reaction-diffusion model with Neumann Laplacian, full control
/// injection (`B = I`), and quadrature-scaled weights so `F = (1/h) I`.
pub fn build_reaction_diffusion(n_h: usize, domain: (f64, f64), sigma: f64) -> Result<QuadraticModel> {
    if n_h < 8 {
        return Err(Error::DimensionMismatch("N_h must be at least 8".into()));
    }
    let (a0, b0) = domain;
    let h = (b0 - a0) / (n_h - 1) as f64;
    let xs: Vec<f64> = (0..n_h).map(|i| a0 + h * i as f64).collect();
    let mut lap = Mat::zeros(n_h, n_h);
    for i in 0..n_h {
        lap[(i, i)] = -2.0;
        if i > 0 {
            lap[(i, i - 1)] = 1.0;
        }
        if i + 1 < n_h {
            lap[(i, i + 1)] = 1.0;
        }
    }
    // Neumann rows: mirror ghost value, first-order zero-flux closure.
    lap[(0, 0)] = -1.0;
    lap[(n_h - 1, n_h - 1)] = -1.0;
    lap /= h * h;
    let a = sigma * lap;

    let all: Vec<usize> = (0..n_h).collect();
    let b = Mat::identity(n_h, n_h);
    let q = Mat::identity(n_h, n_h) * h;
    let r = Mat::identity(n_h, n_h) * h;
    let f = Mat::identity(n_h, n_h) / h;

    Ok(QuadraticModel {
        a,
        nonlinearity: Nonlinearity::CubicReaction,
        b,
        q,
        r,
        f,
        grid: Grid {
            dim: 1,
            h,
            coords: xs.iter().map(|&x| [x, 0.0]).collect(),
            n_per_axis: n_h,
        },
        control_nodes: all.clone(),
        obs_nodes: all,
        problem: Problem::ReactionDiffusion,
    })
}

/// Nodal evaluation of the problem's parametric initial condition.
pub fn initial_state(problem: Problem, mu: [f64; 2], grid: &Grid) -> Result<Vec64> {
    let bx = problem.param_box();
    let eps = 1e-12;
    let in_box = mu[0] >= bx[0][0] - eps
        && mu[0] <= bx[0][1] + eps
        && (problem == Problem::ReactionDiffusion
            || (mu[1] >= bx[1][0] - eps && mu[1] <= bx[1][1] + eps));
    if !in_box {
        return Err(Error::OutOfBounds(mu));
    }
    let values = grid.coords.iter().map(|c| match problem {
        Problem::Burgers1d => mu[0] * (-mu[1] * c[0] * c[0]).exp(),
        Problem::Burgers2d => {
            let dx = c[0] + 2.0;
            let dy = c[1] + 2.0;
            mu[0] * (-mu[1] * (dx * dx + dy * dy)).exp()
        }
        Problem::ReactionDiffusion => mu[0] * (std::f64::consts::PI * c[0]).sin(),
    });
    Ok(DVector::from_iterator(grid.len(), values))
}

/// Cascade-ordered tensor grid over a 2D parameter box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGrid {
    /// Ordered so the second coordinate sweeps fastest within a fixed first
    /// coordinate.
    pub values: Vec<[f64; 2]>,
    pub bounds: [[f64; 2]; 2],
    pub counts: [usize; 2],
}

impl ParamGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform tensor grid over `bounds`, endpoints included.
pub fn make_param_grid(bounds: [[f64; 2]; 2], n1: usize, n2: usize) -> Result<ParamGrid> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::DegenerateBox("counts must be at least 1".into()));
    }
    for (k, &[lo, hi]) in bounds.iter().enumerate() {
        if lo > hi {
            return Err(Error::DegenerateBox(format!("axis {k}: {lo} > {hi}")));
        }
        let n = if k == 0 { n1 } else { n2 };
        if n > 1 && lo == hi {
            return Err(Error::DegenerateBox(format!(
                "axis {k} collapses to a point but has {n} samples"
            )));
        }
    }
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        }
    };
    let a1 = axis(bounds[0][0], bounds[0][1], n1);
    let a2 = axis(bounds[1][0], bounds[1][1], n2);
    let mut values = Vec::with_capacity(n1 * n2);
    for &v1 in &a1 {
        for &v2 in &a2 {
            values.push([v1, v2]);
        }
    }
    Ok(ParamGrid {
        values,
        bounds,
        counts: [n1, n2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn burgers_default(n: usize) -> QuadraticModel {
        build_burgers1d(
            n,
            (-5.0, 30.0),
            20.0,
            0.1,
            &[(-1.0, 1.0), (5.0, 7.0)],
            &[(2.0, 4.0), (8.0, 10.0)],
        )
        .unwrap()
    }

    #[test]
    fn burgers1d_cell_size() {
        let m = burgers_default(100);
        assert!((m.grid.h - 35.0 / 99.0).abs() < 1e-14);
    }

    #[test]
    fn burgers1d_control_mask_counts_nodes() {
        let m = burgers_default(100);
        let expected = m
            .grid
            .coords
            .iter()
            .filter(|c| (c[0] >= -1.0 && c[0] <= 1.0) || (c[0] >= 5.0 && c[0] <= 7.0))
            .count();
        assert_eq!(m.m(), expected);
        assert!(m.m() > 0);
    }

    #[test]
    fn burgers1d_quad_vanishes_on_constants_interior() {
        let m = burgers_default(64);
        let c = Vec64::from_element(64, 3.7);
        let q = m.quad(&c, &c);
        // Away from the inflow closure the derivative of a constant vanishes.
        for i in 1..64 {
            assert!(q[i].abs() < 1e-12, "node {i}: {}", q[i]);
        }
    }

    #[test]
    fn burgers1d_empty_mask_rejected() {
        let r = build_burgers1d(100, (-5.0, 30.0), 20.0, 0.1, &[(100.0, 101.0)], &[(2.0, 4.0)]);
        assert!(matches!(r, Err(Error::EmptyMask(_))));
    }

    #[test]
    fn burgers2d_dimension() {
        let m = build_burgers2d(
            20,
            (-10.0, 10.0),
            20.0,
            0.1,
            [(-5.0, 0.0), (-5.0, 0.0)],
            [(0.0, 5.0), (0.0, 5.0)],
        )
        .unwrap();
        assert_eq!(m.n(), 400);
        assert_eq!(m.grid.dim, 2);
    }

    #[test]
    fn reaction_diffusion_f_is_identity_over_h() {
        let m = build_reaction_diffusion(50, (0.0, 2.0), 1e-3).unwrap();
        let expected = Mat::identity(50, 50) / m.grid.h;
        assert!((&m.f - expected).norm() < 1e-12);
        // zero state is an equilibrium
        let z = Vec64::zeros(50);
        assert!(m.rhs(&z).norm() == 0.0);
    }

    #[test]
    fn reaction_diffusion_sdc_form() {
        let m = build_reaction_diffusion(50, (0.0, 2.0), 1e-3).unwrap();
        let y = initial_state(Problem::ReactionDiffusion, [1.0, 0.0], &m.grid).unwrap();
        let s = sdc_matrix(&m, &y).unwrap();
        let expected = &m.a + Mat::from_diagonal(&y.component_mul(&y));
        assert!((s - expected).norm() < 1e-13);
    }

    #[test]
    fn sdc_identity_matches_rhs() {
        let m = burgers_default(32);
        let y = Vec64::from_fn(32, |i, _| (0.3 * i as f64).sin() * 0.2);
        let s = sdc_matrix(&m, &y).unwrap();
        let via_sdc = s * &y;
        let direct = m.rhs(&y);
        assert!((via_sdc - &direct).norm() < 1e-12 * (1.0 + y.norm_squared()));
        // For the quadratic kind, rhs also equals A y + quad(y, y).
        let alt = &m.a * &y + m.quad(&y, &y);
        assert!((alt - direct).norm() < 1e-13);
    }

    #[test]
    fn initial_state_values() {
        let m = burgers_default(100);
        // Peak value at x = 0.
        let y = initial_state(Problem::Burgers1d, [0.1, 0.2], &m.grid).unwrap();
        let i0 = m
            .grid
            .coords
            .iter()
            .position(|c| c[0].abs() < 1e-9)
            .expect("x = 0 is a grid node for N_h = 100 on [-5, 30]");
        assert!((y[i0] - 0.1).abs() < 1e-14);

        let rd = build_reaction_diffusion(49, (0.0, 2.0), 1e-3).unwrap();
        let y = initial_state(Problem::ReactionDiffusion, [1.0, 0.0], &rd.grid).unwrap();
        let ih = rd
            .grid
            .coords
            .iter()
            .position(|c| (c[0] - 0.5).abs() < 1e-9)
            .expect("x = 0.5 on the 49-node grid");
        assert!((y[ih] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_state_2d_shift_center() {
        let m = build_burgers2d(
            20,
            (-10.0, 10.0),
            20.0,
            0.1,
            [(-5.0, 0.0), (-5.0, 0.0)],
            [(0.0, 5.0), (0.0, 5.0)],
        )
        .unwrap();
        let y = initial_state(Problem::Burgers2d, [0.01, 0.1], &m.grid).unwrap();
        let center = m
            .grid
            .coords
            .iter()
            .position(|c| (c[0] + 2.0).abs() < 1e-9 && (c[1] + 2.0).abs() < 1e-9);
        if let Some(k) = center {
            assert!((y[k] - 0.01).abs() < 1e-14);
        } else {
            // (-2, -2) need not be a node for every n_per_axis; the peak is
            // still bounded by mu_1.
            assert!(y.iter().all(|&v| v <= 0.01 + 1e-14));
        }
    }

    #[test]
    fn initial_state_out_of_bounds() {
        let m = burgers_default(16);
        assert!(matches!(
            initial_state(Problem::Burgers1d, [0.9, 0.2], &m.grid),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn param_grid_cascade_order() {
        let g = make_param_grid([[0.0, 1.0], [0.0, 1.0]], 2, 2).unwrap();
        assert_eq!(
            g.values,
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
        );
    }

    #[test]
    fn param_grid_paper_counts() {
        let g = make_param_grid([[0.1, 0.5], [0.2, 1.5]], 20, 20).unwrap();
        assert_eq!(g.len(), 400);
        assert_eq!(g.values[0], [0.1, 0.2]);
    }

    #[test]
    fn param_grid_single_point_and_degenerate() {
        let g = make_param_grid([[0.25, 0.5], [0.3, 1.0]], 1, 1).unwrap();
        assert_eq!(g.values, vec![[0.25, 0.3]]);
        assert!(matches!(
            make_param_grid([[1.0, 0.0], [0.0, 1.0]], 2, 2),
            Err(Error::DegenerateBox(_))
        ));
        assert!(matches!(
            make_param_grid([[0.5, 0.5], [0.0, 1.0]], 2, 2),
            Err(Error::DegenerateBox(_))
        ));
    }
}
