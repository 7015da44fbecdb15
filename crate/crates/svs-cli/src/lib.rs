//! Metrics, plots and pipeline orchestration behind the `svs` binary.

pub mod eval;
pub mod pipeline;
pub mod plot;
