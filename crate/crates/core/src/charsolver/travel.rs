use crate::domain::{SpatialGrid, TargetProfile};
use crate::error::{Error, Result};

/// Width tolerance of the monotone inversion, relative to `L`.
const INVERT_REL_TOL: f64 = 1e-13;

/// The travel map `p̃*_i(x) = (1/(α i)) ∫₀ˣ p1*(s) ds` of stage `i`: it
/// converts a spatial position into the time a closed-loop characteristic
/// needs to reach it from the inflow boundary. Strictly increasing because
/// `p1* > 0` on the open interval, hence invertible.
#[derive(Debug, Clone)]
pub struct TravelMap {
    alpha_i: f64,
    nodes: Vec<f64>,
    /// Cumulative trapezoid of `p1*/(α i)` at the grid nodes.
    cumulative: Vec<f64>,
    target: TargetProfile,
}

impl TravelMap {
    pub fn alpha_i(&self) -> f64 {
        self.alpha_i
    }

    /// Total travel time `p̃*_i(L) = ‖p1*‖_{L¹}/(α i)`.
    pub fn horizon(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Forward map at a grid node.
    pub fn forward_at_node(&self, j: usize) -> f64 {
        self.cumulative[j]
    }

    /// Forward map anywhere in `[0, L]`: node value plus a partial-cell
    /// trapezoid, the continuous extension of the nodal rule (exact for
    /// linear targets).
    pub fn forward(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let n = self.nodes.len();
        if x >= self.nodes[n - 1] {
            return self.horizon();
        }
        let j = self.nodes.partition_point(|&v| v <= x) - 1;
        let a = self.nodes[j];
        let mean = 0.5 * (self.target.p1_star(a) + self.target.p1_star(x));
        self.cumulative[j] + (x - a) * mean / self.alpha_i
    }

    /// Inverse of the forward map on `[0, horizon]` by monotone bracketing
    /// on the nodal values plus bisection inside the bracketed cell.
    pub fn inverse(&self, tau: f64) -> f64 {
        let h = self.horizon();
        if tau <= 0.0 {
            return 0.0;
        }
        if tau >= h {
            return *self.nodes.last().unwrap();
        }
        let j = self.cumulative.partition_point(|&v| v <= tau) - 1;
        let mut lo = self.nodes[j];
        let mut hi = self.nodes[j + 1];
        let tol = INVERT_REL_TOL * *self.nodes.last().unwrap();
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.forward(mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Build the travel map of stage `i` with gain `alpha` on `grid`.
pub fn build_travel_map(
    target: &TargetProfile,
    alpha: f64,
    stage: usize,
    grid: &SpatialGrid,
) -> Result<TravelMap> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if stage < 1 {
        return Err(Error::InvalidParameter("stage index must be >= 1".into()));
    }
    let alpha_i = alpha * stage as f64;
    let nodes = grid.nodes().to_vec();
    let mut cumulative = Vec::with_capacity(nodes.len());
    cumulative.push(0.0);
    for w in nodes.windows(2) {
        let mean = 0.5 * (target.p1_star(w[0]) + target.p1_star(w[1]));
        let prev = *cumulative.last().unwrap();
        cumulative.push(prev + (w[1] - w[0]) * mean / alpha_i);
    }
    Ok(TravelMap {
        alpha_i,
        nodes,
        cumulative,
        target: target.clone(),
    })
}
