use crate::domain::SpatialGrid;
use crate::error::{Error, Result};

/// Probability state of the two-state system at one instant: the good-mode
/// probability `p0` and the failure-mode density `p1` sampled at the grid
/// nodes.
///
/// Construction is permissive (audits and validators need to represent
/// off-invariant states); solvers only ever produce states with
/// `p0 >= 0`, `p1 >= 0` and total mass 1 up to quadrature tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub p0: f64,
    pub p1: Vec<f64>,
    pub t: f64,
}

impl SystemState {
    pub fn new(p0: f64, p1: Vec<f64>, t: f64, grid: &SpatialGrid) -> Result<Self> {
        if p1.len() != grid.len() {
            return Err(Error::IncompatibleGrids {
                expected: grid.len(),
                got: p1.len(),
            });
        }
        Ok(Self { p0, p1, t })
    }

    /// State with all probability in the good mode.
    pub fn point_mass_good(grid: &SpatialGrid) -> Self {
        Self {
            p0: 1.0,
            p1: vec![0.0; grid.len()],
            t: 0.0,
        }
    }

    /// State with all probability in the failure mode, uniform over repair
    /// ages: `p1 = 1/L`. Note this violates `p1(L) = 0` at `t = 0`; the
    /// density is swept out through `x = L` immediately afterwards.
    pub fn uniform_failure(grid: &SpatialGrid) -> Self {
        let c = 1.0 / grid.length();
        Self {
            p0: 0.0,
            p1: vec![c; grid.len()],
            t: 0.0,
        }
    }

    pub fn min_sample(&self) -> f64 {
        self.p1.iter().copied().fold(self.p0, f64::min)
    }

    pub fn endpoint_density(&self) -> f64 {
        *self.p1.last().unwrap()
    }
}

/// Total probability mass `p0 + ∫₀ᴸ p1 dx` by composite trapezoid.
pub fn total_mass(s: &SystemState, grid: &SpatialGrid) -> f64 {
    s.p0 + grid.integrate_samples(&s.p1)
}

/// Distance in the state norm `|Δp0| + ‖Δp1‖_{L¹}`, the metric for all
/// convergence statements about this system.
pub fn x_norm_distance(a: &SystemState, b: &SystemState, grid: &SpatialGrid) -> Result<f64> {
    if a.p1.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: a.p1.len(),
        });
    }
    if b.p1.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: b.p1.len(),
        });
    }
    let l1 = grid
        .weights()
        .iter()
        .zip(a.p1.iter().zip(&b.p1))
        .map(|(w, (x, y))| w * (x - y).abs())
        .sum::<f64>();
    Ok((a.p0 - b.p0).abs() + l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_linear_target;
    use approx::assert_relative_eq;

    fn grid() -> SpatialGrid {
        SpatialGrid::uniform(1.0, 64).unwrap()
    }

    #[test]
    fn mass_of_point_mass_good_is_one() {
        let g = grid();
        assert_eq!(total_mass(&SystemState::point_mass_good(&g), &g), 1.0);
    }

    #[test]
    fn mass_of_half_good_state() {
        let g = grid();
        let s = SystemState::new(0.5, vec![0.0; g.len()], 0.0, &g).unwrap();
        assert_relative_eq!(total_mass(&s, &g), 0.5);
    }

    #[test]
    fn mass_of_linear_target_state() {
        let g = grid();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let s = target.as_state(&g, 0.0);
        // trapezoid is exact for the linear profile
        assert_relative_eq!(total_mass(&s, &g), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn x_norm_identity_and_scalar_part() {
        let g = grid();
        let a = SystemState::point_mass_good(&g);
        let b = SystemState::new(0.0, vec![0.0; g.len()], 0.0, &g).unwrap();
        assert_eq!(x_norm_distance(&a, &a, &g).unwrap(), 0.0);
        assert_relative_eq!(x_norm_distance(&a, &b, &g).unwrap(), 1.0);
    }

    #[test]
    fn x_norm_density_part_by_hand_integration() {
        let g = grid();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let a = target.as_state(&g, 0.0);
        let b = SystemState::new(a.p0, vec![0.0; g.len()], 0.0, &g).unwrap();
        // ∫₀¹ (2/3)(1-x) dx = 1/3
        assert_relative_eq!(
            x_norm_distance(&a, &b, &g).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn x_norm_rejects_mismatched_states() {
        let g = grid();
        let a = SystemState::point_mass_good(&g);
        let b = SystemState {
            p0: 0.0,
            p1: vec![0.0; 7],
            t: 0.0,
        };
        assert!(matches!(
            x_norm_distance(&a, &b, &g),
            Err(crate::Error::IncompatibleGrids { .. })
        ));
    }
}
