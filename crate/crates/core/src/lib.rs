//! Simulation and control synthesis for two-state repairable systems.
//!
//! A repairable system alternates between a good mode (probability `p0(t)`)
//! and a failure mode described by a density `p1(x, t)` over the elapsed
//! repair time `x ∈ [0, L]`. The dynamics couple a transport equation for
//! `p1` with an integro-differential balance for `p0`:
//!
//! ```text
//! dp0/dt           = -λ p0(t) + ∫₀ᴸ μ(x) p1(x,t) dx
//! ∂p1/∂t + ∂p1/∂x  = -μ(x) p1(x,t)
//! p1(0,t)          =  λ p0(t)
//! ```
//!
//! where `λ` is the failure rate and `μ` the repair (hazard) rate, with
//! `∫₀ᴸ μ = ∞` so every repair completes by age `L`.
//!
//! The crate provides:
//!
//! - [`domain`]: grids, states, target profiles and their validation, the
//!   state-space norm `|p0| + ‖p1‖_{L¹}`.
//! - [`control`]: synthesis of the static repair rate that makes a desired
//!   profile the steady state, and of the staged bilinear feedback law that
//!   steers the system to the profile exactly at a prescribed final time.
//! - [`charsolver`]: exact solvers built from the method of characteristics
//!   for the open-loop and closed-loop systems, plus the staged driver.
//! - [`fvsolver`]: independent first-order upwind finite-volume schemes used
//!   to cross-validate the exact solvers.
//! - [`diagnostics`]: conservation/positivity audits, exponential decay-rate
//!   fitting, and the staged decay-envelope check.

// validations use `!(x > 0.0)` so NaN fails them along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charsolver;
pub mod control;
pub mod diagnostics;
pub mod domain;
mod error;
pub mod fvsolver;

pub use charsolver::{
    build_travel_map, closed_loop_stage_solve, open_loop_solve, staged_control_solve,
    steady_state, StageMark, StagedRun, StateDiagnostics, StopReason, Trajectory, TravelMap,
};
pub use control::{
    build_schedule, evaluate_feedback_mu, mu_boundedness_scan, select_alpha, static_repair_rate,
    PlanDescriptor, RepairRatePlan, StageSchedule, StageSupremum, TargetDescriptor,
};
pub use diagnostics::{
    audit_invariants, calibrate_stage1, check_stage_envelope, fit_decay, stage_envelope_value,
    DecayFit, EnvelopeRow, InvariantReport,
};
pub use domain::{
    gradient, make_linear_target, make_quadratic_target, read_table_csv, total_mass,
    validate_target, x_norm_distance, CheckResult, SpatialGrid, SystemState, TargetForm,
    TargetProfile, ValidationReport,
};
pub use error::{Error, Result};
