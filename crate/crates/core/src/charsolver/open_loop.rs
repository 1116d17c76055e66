//! Exact open-loop solver.
//!
//! The transport equation is solved along characteristics:
//!
//! ```text
//! p1(x,t) = λ p0(t-x) S(x)            for x < t   (inflow branch)
//! p1(x,t) = p10(x-t) S(x)/S(x-t)      for x >= t  (initial-data branch)
//! ```
//!
//! with `S` the closed-form survival function of the static plan; the ratio
//! form avoids integrating the hazard, which is not integrable up to `L`.
//! The good-mode probability obeys the renewal recursion
//!
//! ```text
//! p0(t+h) = p0(t) e^{-λh} + ∫₀ʰ e^{-λ(h-s)} R(t+s) ds,
//! R(τ) = ∫₀ᴸ μ(x) p1(x,τ) dx
//! ```
//!
//! advanced over substeps with exponential-time-differencing weights
//! (exact for a constant flux, so the steady state is a discrete fixed
//! point), with `R` quadratured through the bounded completion density
//! `f = μS` and a seam split at the characteristic front `x = τ`.

use crate::charsolver::{steady_state, StateDiagnostics, Trajectory};
use crate::control::RepairRatePlan;
use crate::domain::{total_mass, x_norm_distance, SpatialGrid, SystemState};
use crate::error::{Error, Result};

/// Substeps of the `p0` recursion per recorded frame.
const P0_SUBSTEPS: usize = 4;
/// Relative tolerance on the unit-mass precondition.
const MASS_GATE: f64 = 1e-4;

/// Quadrature weights for `∫₀ʰ e^{-λ(h-s)} R(s) ds` with `R` linear on the
/// substep: `wa · R(0) + wb · R(h)`. Exact when `R` is constant, which makes
/// the steady state a fixed point of the discrete recursion.
fn etd_weights(lambda: f64, h: f64) -> (f64, f64) {
    let z = lambda * h;
    if z < 1e-5 {
        // series guards the cancellation in (1 - e^{-z}(1+z))/z²
        let wa = h * (0.5 - z / 3.0 + z * z / 8.0);
        let wb = h * (0.5 - z / 6.0 + z * z / 24.0);
        (wa, wb)
    } else {
        let e = (-z).exp();
        let total = (1.0 - e) / lambda;
        let wa = (1.0 - e * (1.0 + z)) / (lambda * lambda * h);
        (wa, total - wa)
    }
}

pub fn open_loop_solve(
    initial: &SystemState,
    plan: &RepairRatePlan,
    lambda: f64,
    t_end: f64,
    dt: f64,
    grid: &SpatialGrid,
) -> Result<Trajectory> {
    let design = plan
        .as_static()
        .ok_or_else(|| Error::InvalidParameter("open-loop solver needs a static plan".into()))?;
    if initial.p1.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: initial.p1.len(),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(
            "t_end and dt must be positive".into(),
        ));
    }
    if dt > grid.min_dx() * (1.0 + 1e-12) {
        return Err(Error::StepSize(format!(
            "dt = {dt} exceeds the smallest cell {}; a characteristic would \
             cross more than one cell per step",
            grid.min_dx()
        )));
    }
    let frames = (t_end / dt).round();
    if frames < 1.0 || (frames * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::StepSize(format!(
            "dt = {dt} does not divide t_end = {t_end}"
        )));
    }
    let frames = frames as usize;
    let mass0 = total_mass(initial, grid);
    if (mass0 - 1.0).abs() > MASS_GATE {
        return Err(Error::InvalidInitial(format!(
            "initial mass {mass0} is not 1"
        )));
    }

    let reference = steady_state(plan, lambda, grid)?;
    let length = grid.length();
    let h = dt / P0_SUBSTEPS as f64;
    let decay = (-lambda * h).exp();

    // p0 history on the substep lattice; linear interpolation preserves
    // nonnegativity when the samples are nonnegative.
    let mut hist = Vec::with_capacity(frames * P0_SUBSTEPS + 1);
    hist.push(initial.p0);
    let p0_at = |hist: &[f64], t: f64| -> f64 {
        let idx = t / h;
        let j = (idx.floor() as usize).min(hist.len() - 1);
        let k = (j + 1).min(hist.len() - 1);
        let theta = (idx - j as f64).clamp(0.0, 1.0);
        hist[j] + theta * (hist[k] - hist[j])
    };

    let q = |x: f64| grid.interp(&initial.p1, x);
    // p1(s)/S(s) stays bounded for admissible data; at s = L both vanish
    // and the ratio is taken one cell inside (only reachable at τ = 0).
    let density_over_survival = |s: f64| -> f64 {
        let sv = design.survival(s);
        if sv > 0.0 {
            q(s) / sv
        } else {
            let eps = 0.5 * grid.min_dx();
            q(length - eps) / design.survival(length - eps)
        }
    };

    // Repair-return flux R(τ) = ∫ μ p1 dx with p0(τ) := v, so the implicit
    // trapezoid step can exploit that R is affine in p0(τ) (only the x = 0
    // node samples the current time).
    let return_flux = |hist: &[f64], tau: f64, v: f64| -> f64 {
        let inflow = |x: f64| {
            let p0 = if x == 0.0 { v } else { p0_at(hist, tau - x) };
            lambda * p0 * design.completion_density(x)
        };
        let from_initial =
            |x: f64| density_over_survival(x - tau) * design.completion_density(x);
        if tau >= length {
            grid.integrate(inflow)
        } else {
            grid.integrate_with_seam(tau, inflow, from_initial)
        }
    };

    let eval_p1 = |hist: &[f64], x: f64, t: f64| -> f64 {
        if x < t {
            lambda * p0_at(hist, t - x) * design.survival(x)
        } else {
            let s = x - t;
            let denom = design.survival(s);
            if denom > 0.0 {
                q(s) * design.survival(x) / denom
            } else {
                // only x = L at t = 0; the endpoint carries no density
                0.0
            }
        }
    };

    let mut traj = Trajectory::empty();
    let record =
        |traj: &mut Trajectory, hist: &Vec<f64>, p0: f64, t: f64| -> Result<()> {
            let p1: Vec<f64> = if t == 0.0 {
                initial.p1.clone()
            } else {
                grid.nodes().iter().map(|&x| eval_p1(hist, x, t)).collect()
            };
            let state = SystemState { p0, p1, t };
            let mass = if t == 0.0 {
                total_mass(&state, grid)
            } else {
                p0 + grid.integrate_with_seam(
                    t,
                    |x| lambda * p0_at(hist, t - x) * design.survival(x),
                    |x| eval_p1(hist, x, t),
                )
            };
            let min_p1 = state.p1.iter().copied().fold(f64::INFINITY, f64::min);
            let dist = x_norm_distance(&state, &reference, grid)?;
            traj.push(
                state,
                StateDiagnostics {
                    mass,
                    min_p1,
                    dist_to_reference: dist,
                },
            );
            Ok(())
        };

    record(&mut traj, &hist, initial.p0, 0.0)?;

    let (wa, wb) = etd_weights(lambda, h);
    let mut p0 = initial.p0;
    let mut flux = return_flux(&hist, 0.0, p0);
    for step in 1..=frames * P0_SUBSTEPS {
        let tau = step as f64 * h;
        // R(τ) is affine in p0(τ): only the x = 0 node samples the new time
        let b = return_flux(&hist, tau, 0.0);
        let a = return_flux(&hist, tau, 1.0) - b;
        let denom = 1.0 - wb * a;
        if denom <= 0.5 {
            return Err(Error::StepSize(format!(
                "return-flux weight too large at t = {tau}; reduce dt"
            )));
        }
        p0 = (p0 * decay + wa * flux + wb * b) / denom;
        flux = a * p0 + b;
        hist.push(p0);
        if step % P0_SUBSTEPS == 0 {
            let frame = step / P0_SUBSTEPS;
            record(&mut traj, &hist, p0, frame as f64 * dt)?;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charsolver::steady_state;
    use crate::control::static_repair_rate;
    use crate::domain::make_linear_target;
    use approx::assert_relative_eq;

    #[test]
    fn steady_state_is_a_fixed_point() {
        let grid = SpatialGrid::uniform(1.0, 128).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let plan = static_repair_rate(&target).unwrap();
        let ss = steady_state(&plan, 1.0, &grid).unwrap();
        let traj = open_loop_solve(&ss, &plan, 1.0, 1.0, 1.0 / 128.0, &grid).unwrap();
        for (state, diag) in traj.states.iter().zip(&traj.diagnostics) {
            assert!(
                diag.dist_to_reference <= 1e-8 * (1.0 + state.t),
                "drift {} at t = {}",
                diag.dist_to_reference,
                state.t
            );
        }
    }

    #[test]
    fn survival_ratio_branch_by_hand() {
        // constant initial density c with μ = 1/(1-x):
        // p1(0.8, 0.3) = c S(0.8)/S(0.5) = c (0.2/0.5) = 0.4 c
        let grid = SpatialGrid::uniform(1.0, 500).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let plan = static_repair_rate(&target).unwrap();
        let c = 0.75;
        let initial = SystemState {
            p0: 0.25,
            p1: vec![c; grid.len()],
            t: 0.0,
        };
        let traj = open_loop_solve(&initial, &plan, 1.0, 0.3, 1e-3, &grid).unwrap();
        let state = traj.final_state();
        assert_relative_eq!(state.t, 0.3, epsilon = 1e-12);
        let j = (0.8 * 500.0_f64).round() as usize;
        assert_relative_eq!(state.p1[j], 0.4 * c, epsilon = 1e-12);
    }

    #[test]
    fn endpoint_density_vanishes() {
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let plan = static_repair_rate(&target).unwrap();
        let initial = SystemState::point_mass_good(&grid);
        let traj = open_loop_solve(&initial, &plan, 1.0, 2.0, 1.0 / 64.0, &grid).unwrap();
        for state in &traj.states {
            assert!(state.endpoint_density().abs() <= 1e-10);
        }
    }

    #[test]
    fn rejects_oversized_and_nondividing_steps() {
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let plan = static_repair_rate(&target).unwrap();
        let initial = SystemState::point_mass_good(&grid);
        assert!(matches!(
            open_loop_solve(&initial, &plan, 1.0, 1.0, 0.1, &grid),
            Err(Error::StepSize(_))
        ));
        assert!(matches!(
            open_loop_solve(&initial, &plan, 1.0, 1.0, 0.0123, &grid),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn rejects_non_unit_mass() {
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let plan = static_repair_rate(&target).unwrap();
        let initial = SystemState {
            p0: 0.5,
            p1: vec![0.0; grid.len()],
            t: 0.0,
        };
        assert!(matches!(
            open_loop_solve(&initial, &plan, 1.0, 1.0, 1.0 / 64.0, &grid),
            Err(Error::InvalidInitial(_))
        ));
    }
}
