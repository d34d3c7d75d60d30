//! Reduced-order engines: snapshot POD with fixed bases and dynamical
//! low-rank approximation with evolving bases, both with optional
//! Riccati-information enrichment of the initial basis.

pub mod dlra;
pub mod pod;

pub use dlra::{dlra_init, dlra_rhs, dlra_run, stiefel_step, DlraGramian, DlraRunResult, LowRankState};
pub use pod::{
    collect_snapshots, enrich_basis, pod_basis, pod_run, reduce_operators, Enrichment,
    ReducedOperators, RomRunResult, SnapshotSet,
};
