//! Nonlinear feedback synthesis for parametric semilinear systems via
//! state-dependent Riccati equations, with full-order, POD, and
//! dynamical low-rank solution engines plus the cascade sensitivity
//! machinery that justifies warm-started Newton-Kleinman solves.

pub mod densela;
pub mod error;
pub mod fom;
pub mod io;
pub mod models;
pub mod riccati;
pub mod rom;
pub mod sensitivity;

pub use densela::{Mat, SvdTruncation, Vec64};
pub use error::{Error, Result};
pub use fom::{ErrorSeries, SolverKind, SweepConfig, Trajectory};
pub use models::{ParamGrid, Problem, QuadraticModel};
pub use riccati::{NkConfig, RiccatiReport};
