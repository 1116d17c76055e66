//! Exact per-stage closed-loop solver.
//!
//! With the feedback hazard in place, stage `i` of the closed loop reduces
//! to transport of `φ = α i g p1` (`g = 1/p1*`) at speed `α i g(x)`, which
//! the travel map `p̃(x)` rectifies to unit speed. Along characteristics:
//!
//! ```text
//! p1(x,t) = p1*(x) · p1(ψ,0)/p1*(ψ),  ψ = p̃⁻¹(p̃(x) - t),   t <= p̃(x)
//! p1(x,t) = p1*(x) · g(0) λ p0(t - p̃(x)),                   t >  p̃(x)
//! ```
//!
//! so the endpoint value is exactly zero (factor `p1*(L) = 0`). The
//! good-mode probability follows the delay balance
//!
//! ```text
//! dp0/dt = φ_out(t) - α i g(0) λ p0(t),
//! φ_out(t) = α i p1(ψ(L,t),0)/p1*(ψ(L,t))      t <= p̃(L)
//! φ_out(t) = α i g(0) λ p0(t - p̃(L))           t >  p̃(L)
//! ```
//!
//! advanced by trapezoid on a substep lattice fine enough to resolve the
//! delay `p̃(L)`, with the delayed term read from a uniform history buffer
//! by linear interpolation. Before the horizon, `φ_out` is not integrated
//! pointwise: its time integral over `[0, t]` is exactly the initial mass
//! between `ψ(L,t)` and `L`, and using that closed form sidesteps the
//! square-root kink `φ_out` inherits from the degenerate transport speed
//! at `x = L`.

use crate::charsolver::{build_travel_map, StageMark, StateDiagnostics, Trajectory, TravelMap};
use crate::domain::{total_mass, x_norm_distance, SpatialGrid, SystemState, TargetProfile};
use crate::error::{Error, Result};

/// The frame step must resolve the delay by at least this factor.
const MIN_STEPS_PER_DELAY: f64 = 4.0;
/// Substep target: `h <= horizon / DELAY_RESOLUTION`.
const DELAY_RESOLUTION: f64 = 256.0;
const MASS_GATE: f64 = 1e-4;

struct StageSolver<'a> {
    grid: &'a SpatialGrid,
    target: &'a TargetProfile,
    map: TravelMap,
    weight: f64,
    /// `α i g(0) λ`, the inflow gain of the transformed system.
    inflow_coef: f64,
    initial_p1: Vec<f64>,
    /// Cumulative trapezoid of the initial density at the grid nodes.
    initial_mass_cum: Vec<f64>,
    h: f64,
    hist: Vec<f64>,
}

impl<'a> StageSolver<'a> {
    fn p0_at(&self, t: f64) -> f64 {
        let idx = t / self.h;
        let j = (idx.floor().max(0.0) as usize).min(self.hist.len() - 1);
        let k = (j + 1).min(self.hist.len() - 1);
        let theta = (idx - j as f64).clamp(0.0, 1.0);
        self.hist[j] + theta * (self.hist[k] - self.hist[j])
    }

    /// `p1(ψ,0)/p1*(ψ)`; at `ψ = L` (reachable only at `t = 0`) both
    /// vanish for admissible data and the ratio is taken one half-cell
    /// inside.
    fn ratio(&self, psi: f64) -> f64 {
        let ps = self.target.p1_star(psi);
        if ps > 0.0 {
            self.grid.interp(&self.initial_p1, psi) / ps
        } else {
            let x = self.grid.length() - 0.5 * self.grid.min_dx();
            self.grid.interp(&self.initial_p1, x) / self.target.p1_star(x)
        }
    }

    fn initial_branch(&self, x: f64, t: f64) -> f64 {
        let psi = self.map.inverse(self.map.forward(x) - t);
        self.target.p1_star(x) * self.ratio(psi)
    }

    fn boundary_branch(&self, x: f64, t: f64) -> f64 {
        let delay = self.map.forward(x);
        self.target.p1_star(x) * self.inflow_coef / self.weight * self.p0_at(t - delay)
    }

    fn eval_at_node(&self, j: usize, t: f64) -> f64 {
        let x = self.grid.nodes()[j];
        if t <= self.map.forward_at_node(j) {
            self.initial_branch(x, t)
        } else {
            self.boundary_branch(x, t)
        }
    }

    /// Initial mass below `x`: nodal cumulative plus a partial cell.
    fn initial_mass_below(&self, x: f64) -> f64 {
        let nodes = self.grid.nodes();
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.grid.length() {
            return *self.initial_mass_cum.last().unwrap();
        }
        let j = nodes.partition_point(|&v| v <= x) - 1;
        let q_end = self.grid.interp(&self.initial_p1, x);
        self.initial_mass_cum[j] + 0.5 * (x - nodes[j]) * (self.initial_p1[j] + q_end)
    }

    /// `∫ₐᵇ φ_out dτ` over one substep. Before the horizon the outflow by
    /// time `t` is exactly the initial mass between `ψ(L,t)` and `L`;
    /// after it, the delayed inflow echo is integrated by trapezoid.
    fn outflux_increment(&self, a: f64, b: f64) -> f64 {
        let horizon = self.map.horizon();
        let swept = |t: f64| -> f64 {
            let psi = self.map.inverse(horizon - t);
            *self.initial_mass_cum.last().unwrap() - self.initial_mass_below(psi)
        };
        let echo = |a: f64, b: f64| -> f64 {
            0.5 * (b - a)
                * self.inflow_coef
                * (self.p0_at(a - horizon) + self.p0_at(b - horizon))
        };
        if b <= horizon {
            swept(b) - swept(a)
        } else if a >= horizon {
            echo(a, b)
        } else {
            (swept(horizon) - swept(a)) + echo(horizon, b)
        }
    }

    /// Quadrature of the represented density at time `t`. The
    /// initial-branch share equals the untransported initial mass below
    /// `ψ(L,t)` exactly (change of variables along characteristics), so
    /// only the inflow-fed region is integrated numerically.
    fn mass(&self, p0: f64, t: f64) -> f64 {
        let horizon = self.map.horizon();
        if t >= horizon {
            return p0 + self.grid.integrate(|x| self.boundary_branch(x, t));
        }
        let seam = self.map.inverse(t);
        let nodes = self.grid.nodes();
        let boundary_share: f64 = {
            // trapezoid over [0, seam] with the seam as a breakpoint
            let mut total = 0.0;
            let mut prev_x = 0.0;
            let mut prev_v = self.boundary_branch(0.0, t);
            for &x in nodes.iter().skip(1) {
                let stop = x >= seam;
                let here = if stop { seam } else { x };
                let v = self.boundary_branch(here, t);
                total += 0.5 * (here - prev_x) * (prev_v + v);
                if stop {
                    break;
                }
                prev_x = here;
                prev_v = v;
            }
            total
        };
        let transported = self.initial_mass_below(self.map.inverse(horizon - t));
        p0 + boundary_share + transported
    }
}

pub fn closed_loop_stage_solve(
    initial: &SystemState,
    target: &TargetProfile,
    alpha: f64,
    stage: usize,
    duration: f64,
    dt: f64,
    grid: &SpatialGrid,
) -> Result<Trajectory> {
    if initial.p1.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: initial.p1.len(),
        });
    }
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(
            "duration and dt must be positive".into(),
        ));
    }
    let mass0 = total_mass(initial, grid);
    if (mass0 - 1.0).abs() > MASS_GATE {
        return Err(Error::InvalidInitial(format!(
            "initial mass {mass0} is not 1"
        )));
    }
    let map = build_travel_map(target, alpha, stage, grid)?;
    let horizon = map.horizon();
    if dt > horizon / MIN_STEPS_PER_DELAY * (1.0 + 1e-12) {
        return Err(Error::StepSize(format!(
            "dt = {dt} does not resolve the stage delay {horizon}; \
             need dt <= horizon/{MIN_STEPS_PER_DELAY}"
        )));
    }

    let frames = (duration / dt - 1e-9).ceil().max(1.0) as usize;
    let dt = duration / frames as f64;
    let n_sub = ((DELAY_RESOLUTION * dt / horizon).ceil() as usize).clamp(1, 1 << 14);
    let h = dt / n_sub as f64;

    let weight = alpha * stage as f64;
    let inflow_coef = weight * target.lambda() / target.p1_star(0.0);
    let mut initial_mass_cum = Vec::with_capacity(grid.len());
    initial_mass_cum.push(0.0);
    for (w, q) in grid.nodes().windows(2).zip(initial.p1.windows(2)) {
        let prev = *initial_mass_cum.last().unwrap();
        initial_mass_cum.push(prev + 0.5 * (w[1] - w[0]) * (q[0] + q[1]));
    }

    let mut solver = StageSolver {
        grid,
        target,
        map,
        weight,
        inflow_coef,
        initial_p1: initial.p1.clone(),
        initial_mass_cum,
        h,
        hist: vec![initial.p0],
    };

    let mut traj = Trajectory::empty();
    if let Some(w) = vanishing_data_warning(&initial.p1) {
        traj.warnings.push(w);
    }
    let reference = target.as_state(grid, 0.0);

    let record = |traj: &mut Trajectory, solver: &StageSolver, p0: f64, t: f64| -> Result<()> {
        let (p1, mass) = if t == 0.0 {
            let p1 = initial.p1.clone();
            let mass = p0 + grid.integrate_samples(&p1);
            (p1, mass)
        } else {
            let p1: Vec<f64> = (0..grid.len())
                .map(|j| solver.eval_at_node(j, t))
                .collect();
            (p1, solver.mass(p0, t))
        };
        let state = SystemState { p0, p1, t };
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

    record(&mut traj, &solver, initial.p0, 0.0)?;

    let mut p0 = initial.p0;
    let gain = 0.5 * h * inflow_coef;
    for step in 1..=frames * n_sub {
        let tau = step as f64 * h;
        let out = solver.outflux_increment(tau - h, tau);
        p0 = (p0 * (1.0 - gain) + out) / (1.0 + gain);
        solver.hist.push(p0);
        if step % n_sub == 0 {
            record(&mut traj, &solver, p0, (step / n_sub) as f64 * dt)?;
        }
    }

    traj.stage_marks.push(StageMark {
        stage,
        t_start: 0.0,
        t_end: duration,
    });
    Ok(traj)
}

/// Initial densities that vanish on interior regions (but not identically)
/// make the transported ratio `p1/p1*` ill-conditioned; flag them.
fn vanishing_data_warning(p1: &[f64]) -> Option<String> {
    let n = p1.len();
    if p1.iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut run = 0usize;
    let mut worst = 0usize;
    for &v in &p1[1..n - 1] {
        if v == 0.0 {
            run += 1;
            worst = worst.max(run);
        } else {
            run = 0;
        }
    }
    (worst >= 2).then(|| {
        format!(
            "initial density vanishes on {worst} consecutive interior nodes; \
             the transported ratio p1/p1* is untested for such data"
        )
    })
}
