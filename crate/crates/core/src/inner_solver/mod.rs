//! The frozen-flow FBSDE: backward grid induction for the decoupling field,
//! forward particles for the law, and `Z` from the field's gradient.

mod backward;
mod diagnostics;
mod export;
mod field;
mod forward;
mod grid;

pub use backward::{solve_backward, solve_backward_with, BackwardOptions};
pub use diagnostics::{bsde_residual, stability_gap, StabilityGap, StabilityRun};
pub use export::{
    read_paths_binary, write_paths_binary, write_paths_summary_csv, PATHS_MAGIC, PATHS_VERSION,
};
pub use field::{DecouplingField, GradientField};
pub use forward::{
    simulate_forward, z_field, ForwardConfig, ParticlePaths, ZField, MAX_REFLECTED_SHARE,
};
pub use grid::{Axis, Boundary, GridSpec, DEFAULT_CFL_SHARE};
