//! First-order upwind finite-volume schemes, kept deliberately simple: they
//! exist to cross-validate the exact characteristic solvers, not to compete
//! with them.
//!
//! The open-loop scheme advects cell averages at unit speed with the
//! inflow `p1(0,t) = λ p0(t)` and treats the stiff sink `-μ p1` by exact
//! per-cell survival ratios (an integrating factor; explicit treatment is
//! unstable near `L` where `μ` is unbounded). Every unit of mass a cell
//! loses to the sink, plus the outflux through `x = L`, is credited to the
//! good mode in the same step, so the discrete total mass is conserved
//! exactly.
//!
//! The closed-loop scheme works in the travel coordinate `y = p̃(x)`, where
//! the stage velocity `α i g(x)` becomes exactly 1 (in `x` coordinates `g`
//! blows up at `L` and would force `dt → 0`); the transported quantity is
//! `φ = α i g p1`, mapped back to `p1 = φ p1*/(α i)` for reporting.

use crate::charsolver::{build_travel_map, steady_state, StageMark, StateDiagnostics, Trajectory};
use crate::control::RepairRatePlan;
use crate::domain::{x_norm_distance, SpatialGrid, SystemState, TargetProfile};
use crate::error::{Error, Result};

/// Finite-volume run configuration.
#[derive(Debug, Clone, Copy)]
pub struct FvConfig {
    pub cells: usize,
    pub cfl: f64,
    pub t_end: f64,
}

impl FvConfig {
    pub fn new(cells: usize, cfl: f64, t_end: f64) -> Result<Self> {
        if cells < 16 {
            return Err(Error::InvalidParameter(format!(
                "need at least 16 cells, got {cells}"
            )));
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cfl must lie in (0, 1], got {cfl}"
            )));
        }
        if !(t_end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be positive, got {t_end}"
            )));
        }
        Ok(Self { cells, cfl, t_end })
    }
}

/// One upwind step at Courant number `c` with the given inflow ghost value.
/// Returns the pre-step value of the last cell (the outflux donor).
/// With `c = 1` the scheme shifts the field exactly one cell.
pub(crate) fn upwind_step(u: &mut [f64], inflow: f64, c: f64) -> f64 {
    let last = *u.last().unwrap();
    for j in (1..u.len()).rev() {
        u[j] += c * (u[j - 1] - u[j]);
    }
    u[0] += c * (inflow - u[0]);
    last
}

/// How many frames a finite-volume trajectory records at most.
const MAX_FRAMES: usize = 256;

pub fn open_loop_fv(
    initial: &SystemState,
    plan: &RepairRatePlan,
    lambda: f64,
    cfg: FvConfig,
) -> Result<Trajectory> {
    let design = plan
        .as_static()
        .ok_or_else(|| Error::InvalidParameter("open-loop scheme needs a static plan".into()))?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let length = design.target().length();
    let grid = SpatialGrid::uniform(length, cfg.cells)?;
    if initial.p1.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: initial.p1.len(),
        });
    }
    let dx = length / cfg.cells as f64;
    let steps = (cfg.t_end / (cfg.cfl * dx) - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.t_end / steps as f64;
    let c = dt / dx;
    if dt * lambda >= 1.0 {
        return Err(Error::StepSize(format!(
            "dt λ = {} >= 1 makes the explicit good-mode update unstable",
            dt * lambda
        )));
    }

    // cell averages from node samples
    let mut u: Vec<f64> = initial
        .p1
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let mut p0 = initial.p0;

    // survival ratio over one step per cell center; clamped at 0 so the
    // first cell never looks left of the origin
    let ratios: Vec<f64> = (0..cfg.cells)
        .map(|j| {
            let xc = (j as f64 + 0.5) * dx;
            let from = design.survival((xc - dt).max(0.0));
            if from > 0.0 {
                design.survival(xc) / from
            } else {
                0.0
            }
        })
        .collect();

    let reference = steady_state(plan, lambda, &grid)?;
    let record_every = (steps / MAX_FRAMES).max(1);
    let mut traj = Trajectory::empty();
    record_fv(&mut traj, &grid, &u, p0, 0.0, lambda, dx, &reference)?;

    for step in 1..=steps {
        let ghost = lambda * p0;
        let outflux_cell = upwind_step(&mut u, ghost, c);
        let mut returned = 0.0;
        for (v, r) in u.iter_mut().zip(&ratios) {
            returned += *v * (1.0 - r) * dx;
            *v *= r;
        }
        // sink losses and the endpoint outflux are completed repairs:
        // they re-enter the good mode in the same step, so the discrete
        // total mass is exact
        p0 = p0 - dt * lambda * p0 + returned + dt * outflux_cell;
        if step % record_every == 0 || step == steps {
            record_fv(
                &mut traj,
                &grid,
                &u,
                p0,
                step as f64 * dt,
                lambda,
                dx,
                &reference,
            )?;
        }
    }
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn record_fv(
    traj: &mut Trajectory,
    grid: &SpatialGrid,
    u: &[f64],
    p0: f64,
    t: f64,
    lambda: f64,
    dx: f64,
    reference: &SystemState,
) -> Result<()> {
    let n = grid.len();
    let mut p1 = vec![0.0; n];
    p1[0] = lambda * p0; // inflow boundary value
    for j in 1..n - 1 {
        p1[j] = 0.5 * (u[j - 1] + u[j]);
    }
    p1[n - 1] = 0.0; // repairs never outlive the age bound
    let state = SystemState { p0, p1, t };
    let mass = p0 + u.iter().sum::<f64>() * dx;
    let min_p1 = state.p1.iter().copied().fold(f64::INFINITY, f64::min);
    let dist = x_norm_distance(&state, reference, grid)?;
    traj.push(
        state,
        StateDiagnostics {
            mass,
            min_p1,
            dist_to_reference: dist,
        },
    );
    Ok(())
}

pub fn closed_loop_fv_transformed(
    initial: &SystemState,
    target: &TargetProfile,
    alpha: f64,
    stage: usize,
    cfg: FvConfig,
) -> Result<Trajectory> {
    let length = target.length();
    let grid = SpatialGrid::uniform(length, cfg.cells)?;
    if initial.p1.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: initial.p1.len(),
        });
    }
    let map = build_travel_map(target, alpha, stage, &grid)?;
    let weight = alpha * stage as f64;
    let inflow_coef = weight * target.lambda() / target.p1_star(0.0);
    let horizon = map.horizon();

    let m = cfg.cells;
    let dy = horizon / m as f64;
    let steps = (cfg.t_end / (cfg.cfl * dy) - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.t_end / steps as f64;
    let c = dt / dy;
    if dt * inflow_coef >= 1.0 {
        return Err(Error::StepSize(format!(
            "dt α i g(0) λ = {} >= 1 makes the explicit good-mode update unstable",
            dt * inflow_coef
        )));
    }

    // φ = α i g p1 at the y-cell centers
    let mut phi: Vec<f64> = (0..m)
        .map(|j| {
            let y = (j as f64 + 0.5) * dy;
            let x = map.inverse(y);
            weight * grid.interp(&initial.p1, x) / target.p1_star(x)
        })
        .collect();
    let mut p0 = initial.p0;

    // forward-map values of the x nodes, for mapping φ back to p1
    let y_of_node: Vec<f64> = (0..grid.len()).map(|j| map.forward_at_node(j)).collect();
    let phi_at = |phi: &[f64], y: f64| -> f64 {
        let pos = (y / dy - 0.5).clamp(0.0, (m - 1) as f64);
        let j = pos.floor() as usize;
        let k = (j + 1).min(m - 1);
        let theta = pos - j as f64;
        phi[j] + theta * (phi[k] - phi[j])
    };

    let reference = target.as_state(&grid, 0.0);
    let record_every = (steps / MAX_FRAMES).max(1);
    let mut traj = Trajectory::empty();

    let record = |traj: &mut Trajectory, phi: &[f64], p0: f64, t: f64| -> Result<()> {
        let n = grid.len();
        let mut p1 = vec![0.0; n];
        for j in 0..n {
            // p1*(L) = 0 zeroes the endpoint sample automatically
            p1[j] = phi_at(phi, y_of_node[j]) * target.p1_star(grid.nodes()[j]) / weight;
        }
        let state = SystemState { p0, p1, t };
        let mass = p0 + phi.iter().sum::<f64>() * dy;
        let min_p1 = state.p1.iter().copied().fold(f64::INFINITY, f64::min);
        let dist = x_norm_distance(&state, &reference, &grid)?;
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

    record(&mut traj, &phi, p0, 0.0)?;
    for step in 1..=steps {
        let ghost = inflow_coef * p0;
        // the donor cell sheds c · u_last · dy = dt · u_last of mass,
        // i.e. a rate of u_last, all of it returned to the good mode
        let outflux = upwind_step(&mut phi, ghost, c);
        p0 += dt * (outflux - ghost);
        if step % record_every == 0 || step == steps {
            record(&mut traj, &phi, p0, step as f64 * dt)?;
        }
    }
    traj.stage_marks.push(StageMark {
        stage,
        t_start: 0.0,
        t_end: cfg.t_end,
    });
    Ok(traj)
}
