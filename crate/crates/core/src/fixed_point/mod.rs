//! The outer map `(phi, mu) -> (u, law of X)`, its damped Picard iteration,
//! truncation-ladder continuation and multi-start exploration.

mod config;
mod continuation;
mod iteration;

pub use config::{Caps, SolverConfig};
pub use continuation::{
    continuation_solve, multi_start, ContinuationOutcome, LevelRecord, MultiStartResult,
};
pub use iteration::{
    blend_flows, default_init, gaussian_flow, phi_map, solve, write_history_csv, Diagnostics, Init,
    IterationRecord, IterationState, PhiOutput, SolutionBundle,
};
