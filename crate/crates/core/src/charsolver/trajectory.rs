use std::io::{self, Write};

use crate::domain::{total_mass, x_norm_distance, SpatialGrid, SystemState};
use crate::error::{Error, Result};

/// Per-state solver diagnostics.
///
/// `mass` is the solver's own quadrature of the represented solution
/// (seam-aware across characteristic fronts), which can be sharper than
/// re-integrating the node samples when the solution carries a propagating
/// discontinuity from incompatible initial data.
#[derive(Debug, Clone, Copy)]
pub struct StateDiagnostics {
    pub mass: f64,
    pub min_p1: f64,
    pub dist_to_reference: f64,
}

/// Time window covered by one feedback stage.
#[derive(Debug, Clone, Copy)]
pub struct StageMark {
    pub stage: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Time-ordered solver output: states, stage windows, per-state
/// diagnostics, and any precondition warnings raised during the solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SystemState>,
    pub stage_marks: Vec<StageMark>,
    pub diagnostics: Vec<StateDiagnostics>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub(crate) fn empty() -> Self {
        Self {
            states: Vec::new(),
            stage_marks: Vec::new(),
            diagnostics: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Build a trajectory from bare states, recomputing diagnostics by
    /// plain composite quadrature (`dist_to_reference` against `reference`
    /// when given, else 0). Times must be strictly increasing.
    pub fn from_states(
        states: Vec<SystemState>,
        grid: &SpatialGrid,
        reference: Option<&SystemState>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidTrajectory("no states".into()));
        }
        if !states.windows(2).all(|w| w[1].t > w[0].t) {
            return Err(Error::InvalidTrajectory(
                "state times must be strictly increasing".into(),
            ));
        }
        let mut diagnostics = Vec::with_capacity(states.len());
        for s in &states {
            let dist = match reference {
                Some(r) => x_norm_distance(s, r, grid)?,
                None => 0.0,
            };
            diagnostics.push(StateDiagnostics {
                mass: total_mass(s, grid),
                min_p1: s.p1.iter().copied().fold(f64::INFINITY, f64::min),
                dist_to_reference: dist,
            });
        }
        Ok(Self {
            states,
            stage_marks: Vec::new(),
            diagnostics,
            warnings: Vec::new(),
        })
    }

    pub(crate) fn push(&mut self, state: SystemState, diag: StateDiagnostics) {
        debug_assert!(self.states.last().is_none_or(|s| state.t > s.t));
        self.states.push(state);
        self.diagnostics.push(diag);
    }

    pub fn final_state(&self) -> &SystemState {
        self.states.last().expect("trajectory is never empty")
    }

    /// Stage index containing `t`, or 0 when the trajectory has no stages.
    pub fn stage_of(&self, t: f64) -> usize {
        for mark in &self.stage_marks {
            // stage windows share endpoints; attribute the seam leftward
            if t >= mark.t_start && t <= mark.t_end {
                return mark.stage;
            }
        }
        0
    }

    /// Write the trajectory in the plot-ready CSV contract:
    /// `t,stage,p0,mass,min_p1,dist_to_target`, one row per recorded state,
    /// numbers in round-trip scientific notation.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "t,stage,p0,mass,min_p1,dist_to_target")?;
        for (s, d) in self.states.iter().zip(&self.diagnostics) {
            writeln!(
                out,
                "{:e},{},{:e},{:e},{:e},{:e}",
                s.t,
                self.stage_of(s.t),
                s.p0,
                d.mass,
                d.min_p1,
                d.dist_to_reference
            )?;
        }
        Ok(())
    }

    /// Write wide per-node density snapshots at the recorded states closest
    /// to each requested time: header `t,p0,x=...`, one row per snapshot.
    pub fn write_snapshots_csv(
        &self,
        grid: &SpatialGrid,
        times: &[f64],
        out: &mut impl Write,
    ) -> io::Result<()> {
        write!(out, "t,p0")?;
        for x in grid.nodes() {
            write!(out, ",x={x:e}")?;
        }
        writeln!(out)?;
        for &t in times {
            let state = self
                .states
                .iter()
                .min_by(|a, b| {
                    (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap()
                })
                .expect("trajectory is never empty");
            write!(out, "{:e},{:e}", state.t, state.p0)?;
            for v in &state.p1 {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpatialGrid {
        SpatialGrid::uniform(1.0, 8).unwrap()
    }

    #[test]
    fn from_states_rejects_unordered_times() {
        let g = grid();
        let a = SystemState::point_mass_good(&g);
        let mut b = SystemState::point_mass_good(&g);
        b.t = 0.0;
        assert!(Trajectory::from_states(vec![a, b], &g, None).is_err());
    }

    #[test]
    fn csv_contract_shape() {
        let g = grid();
        let a = SystemState::point_mass_good(&g);
        let mut b = SystemState::point_mass_good(&g);
        b.t = 1.0;
        let traj = Trajectory::from_states(vec![a, b], &g, None).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,stage,p0,mass,min_p1,dist_to_target");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn snapshot_picks_nearest_state() {
        let g = grid();
        let mut a = SystemState::point_mass_good(&g);
        a.p0 = 0.25;
        let mut b = SystemState::point_mass_good(&g);
        b.t = 1.0;
        b.p0 = 0.75;
        let traj = Trajectory::from_states(vec![a, b], &g, None).unwrap();
        let mut buf = Vec::new();
        traj.write_snapshots_csv(&g, &[0.9], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("1e0,7.5e-1"));
    }
}
