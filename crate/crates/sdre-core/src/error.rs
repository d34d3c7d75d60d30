use thiserror::Error;

/// Errors surfaced by the numerical kernels and drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains a non-finite entry")]
    NonFiniteMatrix,

    #[error("Lyapunov equation is singular: {0}")]
    SingularLyapunov(String),

    #[error("initial guess is not stabilizing: max real closed-loop eigenvalue {abscissa:.3e} at iteration {iteration}")]
    NonStabilizingGuess { abscissa: f64, iteration: usize },

    #[error("Newton-Kleinman did not converge within {max_iters} iterations (residual {residual:.3e})")]
    MaxItersExceeded { max_iters: usize, residual: f64 },

    #[error("R is not symmetric positive definite")]
    SingularR,

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("tolerance {0} outside (0, 1)")]
    InvalidTolerance(f64),

    #[error("rank-deficient factor: |R[{index},{index}]| = {value:.3e} below threshold")]
    RankDeficient { index: usize, value: f64 },

    #[error("eigenvalue iteration failed to converge")]
    NonConvergence,

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("mask {0} selects no grid node")]
    EmptyMask(String),

    #[error("parameter {0:?} outside the admissible box")]
    OutOfBounds([f64; 2]),

    #[error("degenerate parameter box: {0}")]
    DegenerateBox(String),

    #[error("non-finite state during time integration")]
    NonFinite,

    #[error("time/parameter grids do not match: {0}")]
    GridMismatch(String),

    #[error("basis is not orthonormal: ||V^T V - I|| = {0:.3e}")]
    NonOrthonormalBasis(f64),

    #[error("coefficient Gramian is numerically singular (condition above 1/eps after regularization)")]
    SingularGramian,

    #[error("closed-loop matrix is not stable: max real eigenvalue {0:.3e}")]
    UnstableClosedLoop(f64),

    #[error("trajectories coincide at sample {0}; Lipschitz quotient undefined")]
    CoincidentStates(usize),

    #[error("at t = {time:.6}, parameter index {param}: {source}")]
    At {
        time: f64,
        param: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach sweep coordinates to a propagated failure.
    pub fn at(self, time: f64, param: usize) -> Self {
        Error::At {
            time,
            param,
            source: Box::new(self),
        }
    }

    /// Attach a pipeline stage label.
    pub fn stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
