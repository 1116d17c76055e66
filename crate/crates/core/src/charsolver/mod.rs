//! Exact solvers built on the method of characteristics: the open-loop
//! solution, the steady state of a static design, the per-stage closed-loop
//! solution through the travel map, and the staged controllability driver.

mod closed_loop;
mod open_loop;
mod staged;
mod trajectory;
mod travel;

pub use closed_loop::closed_loop_stage_solve;
pub use open_loop::open_loop_solve;
pub use staged::{staged_control_solve, StageEndError, StagedRun, StopReason};
pub use trajectory::{StageMark, StateDiagnostics, Trajectory};
pub use travel::{build_travel_map, TravelMap};

use crate::control::RepairRatePlan;
use crate::domain::{SpatialGrid, SystemState};
use crate::error::{Error, Result};

/// Steady state of the open loop under a static design:
/// `p1_ss(x) = λ p0_ss S(x)` with `p0_ss = 1/(1 + λ ∫₀ᴸ S)`, normalized by
/// the same quadrature the rest of the crate uses, so the returned state
/// has total mass exactly 1 on this grid.
pub fn steady_state(
    plan: &RepairRatePlan,
    lambda: f64,
    grid: &SpatialGrid,
) -> Result<SystemState> {
    let design = plan
        .as_static()
        .ok_or_else(|| Error::InvalidParameter("steady state needs a static plan".into()))?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let survival: Vec<f64> = grid.nodes().iter().map(|&x| design.survival(x)).collect();
    let p0 = 1.0 / (1.0 + lambda * grid.integrate_samples(&survival));
    let p1 = survival.iter().map(|s| lambda * p0 * s).collect();
    Ok(SystemState { p0, p1, t: 0.0 })
}
