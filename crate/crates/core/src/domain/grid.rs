use crate::error::{Error, Result};

/// Minimum number of cells needed for the composite quadrature to be
/// meaningful.
const MIN_CELLS: usize = 8;

/// Partition of the repair-time interval `[0, L]`.
///
/// Nodes are strictly increasing with `nodes[0] = 0` and `nodes[N] = L`.
/// The grid may be nonuniform; all quadrature in this crate is composite
/// trapezoid on these nodes, which is second order and exact for piecewise
/// linear integrands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SpatialGrid {
    /// Uniform grid with `cells` cells over `[0, length]`.
    pub fn uniform(length: f64, cells: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid length must be positive and finite, got {length}"
            )));
        }
        let nodes = (0..=cells)
            .map(|j| length * j as f64 / cells as f64)
            .collect();
        Self::from_nodes(nodes)
    }

    /// Grid from an explicit node sequence `0 = x0 < x1 < ... < xN = L`.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < MIN_CELLS + 1 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least {MIN_CELLS} cells, got {}",
                nodes.len().saturating_sub(1)
            )));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "grid must start at x = 0".to_string(),
            ));
        }
        if !nodes.windows(2).all(|w| w[1] > w[0] && w[1].is_finite()) {
            return Err(Error::InvalidParameter(
                "grid nodes must be strictly increasing and finite".to_string(),
            ));
        }
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        weights[0] = 0.5 * (nodes[1] - nodes[0]);
        weights[n - 1] = 0.5 * (nodes[n - 1] - nodes[n - 2]);
        for j in 1..n - 1 {
            weights[j] = 0.5 * (nodes[j + 1] - nodes[j - 1]);
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of nodes `N + 1`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Right endpoint `L`.
    pub fn length(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn min_dx(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Composite-trapezoid weights matching `nodes`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Composite trapezoid of node samples.
    pub fn integrate_samples(&self, samples: &[f64]) -> f64 {
        debug_assert_eq!(samples.len(), self.nodes.len());
        self.weights
            .iter()
            .zip(samples)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Composite trapezoid of a function evaluated at the nodes.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.nodes)
            .map(|(w, &x)| w * f(x))
            .sum()
    }

    /// Composite trapezoid of a piecewise-smooth function with a single
    /// interior breakpoint. Nodes strictly left of `seam` use `left`,
    /// the rest use `right`; the cell containing the seam is split so
    /// both one-sided limits enter the rule. Used by the solvers to keep
    /// quadrature accurate across a characteristic front.
    pub fn integrate_with_seam(
        &self,
        seam: f64,
        left: impl Fn(f64) -> f64,
        right: impl Fn(f64) -> f64,
    ) -> f64 {
        let n = self.nodes.len();
        let l = self.length();
        if seam <= 0.0 {
            return self.integrate(right);
        }
        if seam >= l {
            return self.integrate(left);
        }
        // cells entirely below the seam take the left branch at BOTH ends
        // (the seam may coincide with a node; its left cell still sees the
        // left limit), cells above take the right branch, the straddling
        // cell is split at the seam with one-sided limits
        let mut total = 0.0;
        for j in 0..n - 1 {
            let (a, b) = (self.nodes[j], self.nodes[j + 1]);
            if b <= seam {
                total += 0.5 * (b - a) * (left(a) + left(b));
            } else if a >= seam {
                total += 0.5 * (b - a) * (right(a) + right(b));
            } else {
                total += 0.5 * (seam - a) * (left(a) + left(seam));
                total += 0.5 * (b - seam) * (right(seam) + right(b));
            }
        }
        total
    }

    /// Linear interpolation of node samples at `x` (clamped to `[0, L]`).
    pub fn interp(&self, samples: &[f64], x: f64) -> f64 {
        debug_assert_eq!(samples.len(), self.nodes.len());
        if x <= 0.0 {
            return samples[0];
        }
        if x >= self.length() {
            return *samples.last().unwrap();
        }
        let j = match self
            .nodes
            .binary_search_by(|n| n.partial_cmp(&x).unwrap())
        {
            Ok(j) => return samples[j],
            Err(j) => j - 1,
        };
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        let theta = (x - a) / (b - a);
        samples[j] + theta * (samples[j + 1] - samples[j])
    }
}

/// Finite-difference gradient of node samples: central differences at
/// interior nodes, one-sided at the boundaries. Second order on uniform
/// grids, consistent with the trapezoid quadrature.
pub fn gradient(grid: &SpatialGrid, samples: &[f64]) -> Vec<f64> {
    let x = grid.nodes();
    let n = x.len();
    debug_assert_eq!(samples.len(), n);
    let mut out = vec![0.0; n];
    out[0] = (samples[1] - samples[0]) / (x[1] - x[0]);
    out[n - 1] = (samples[n - 1] - samples[n - 2]) / (x[n - 1] - x[n - 2]);
    for j in 1..n - 1 {
        out[j] = (samples[j + 1] - samples[j - 1]) / (x[j + 1] - x[j - 1]);
    }
    out
}
