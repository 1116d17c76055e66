//! Core value types: spatial grids, system states, target profiles, and the
//! state-space norm. All types are immutable value objects after
//! construction and all operations are pure functions.

mod grid;
mod state;
mod target;

pub use grid::{gradient, SpatialGrid};
pub use state::{total_mass, x_norm_distance, SystemState};
pub use target::{
    make_linear_target, make_quadratic_target, read_table_csv, validate_target, CheckResult,
    TargetForm, TargetProfile, ValidationReport,
};
