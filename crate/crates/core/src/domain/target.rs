use std::path::Path;

use serde::Serialize;

use crate::domain::{SpatialGrid, SystemState};
use crate::error::{Error, Result};

/// Relative floor used to test the strict inequalities `p1* > 0` and
/// `dp1*/dx < 0` at interior nodes; strictness at exactly zero is not
/// machine-testable.
const STRICTNESS_FLOOR: f64 = 1e-12;

/// Functional form of a target density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetForm {
    LinearDecay,
    QuadraticDecay,
    Tabulated,
}

#[derive(Debug, Clone)]
enum Shape {
    /// `p1*(x) = coeff (L - x)`
    Linear { coeff: f64 },
    /// `p1*(x) = coeff (1 - x/L)^2`
    Quadratic { coeff: f64 },
    /// Monotone piecewise-linear interpolant of `(x, p1*)` samples; the
    /// derivative is taken piecewise constant so interpolation preserves
    /// the monotonicity invariants.
    Tabulated {
        xs: Vec<f64>,
        ys: Vec<f64>,
        slopes: Vec<f64>,
    },
}

/// A desired distribution `(p0*, p1*(x))` the controller should reach.
///
/// Admissible targets satisfy the boundary compatibility `p1*(0) = λ p0*`,
/// vanish at `x = L`, are strictly positive and strictly decreasing on the
/// open interval, and carry unit total mass. [`validate_target`] measures
/// each of these conditions on a grid.
#[derive(Debug, Clone)]
pub struct TargetProfile {
    lambda: f64,
    length: f64,
    p0_star: f64,
    shape: Shape,
}

impl TargetProfile {
    /// Canonical linear-decay family: `p1*(x) = C (L - x)` with
    /// `C = λ p0* / L` and `p0* = 1 / (1 + λL/2)`, which satisfies every
    /// admissibility condition in closed form.
    pub fn linear(lambda: f64, length: f64) -> Result<Self> {
        check_rate_and_length(lambda, length)?;
        let p0_star = 1.0 / (1.0 + lambda * length / 2.0);
        let coeff = lambda * p0_star / length;
        Ok(Self {
            lambda,
            length,
            p0_star,
            shape: Shape::Linear { coeff },
        })
    }

    /// Quadratic-decay family: `p1*(x) = C (1 - x/L)^2` with `C = λ p0*`
    /// and `p0* = 1 / (1 + λL/3)`.
    pub fn quadratic(lambda: f64, length: f64) -> Result<Self> {
        check_rate_and_length(lambda, length)?;
        let p0_star = 1.0 / (1.0 + lambda * length / 3.0);
        let coeff = lambda * p0_star;
        Ok(Self {
            lambda,
            length,
            p0_star,
            shape: Shape::Quadratic { coeff },
        })
    }

    /// Tabulated target from `(x, p1*)` samples, `x` ascending from 0 to
    /// `L`. The good-mode probability is derived from the boundary
    /// compatibility, `p0* = p1*(0)/λ`; all other admissibility conditions
    /// are left to [`validate_target`] so distorted tables can be
    /// represented and reported on.
    pub fn tabulated(lambda: f64, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let p0_star = ys.first().copied().unwrap_or(0.0) / lambda;
        Self::tabulated_with_p0(lambda, p0_star, xs, ys)
    }

    /// Tabulated target with an explicit `p0*`, which may violate the
    /// boundary compatibility; used to represent inadmissible profiles for
    /// validation reporting.
    pub fn tabulated_with_p0(
        lambda: f64,
        p0_star: f64,
        xs: Vec<f64>,
        ys: Vec<f64>,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::TableFormat(format!(
                "table needs >= 2 rows with matching columns, got {} x {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs[0] != 0.0 {
            return Err(Error::TableFormat("table must start at x = 0".into()));
        }
        if !xs.windows(2).all(|w| w[1] > w[0] && w[1].is_finite()) {
            return Err(Error::TableFormat(
                "table x column must be strictly ascending and finite".into(),
            ));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::TableFormat("table p1 column must be finite".into()));
        }
        let length = *xs.last().unwrap();
        let slopes = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        Ok(Self {
            lambda,
            length,
            p0_star,
            shape: Shape::Tabulated { xs, ys, slopes },
        })
    }

    /// Tabulated target from a two-column CSV `(x, p1_star)` with a header
    /// row and `x` ascending from 0 to `L`.
    pub fn from_csv_path(lambda: f64, path: impl AsRef<Path>) -> Result<Self> {
        let (xs, ys) = read_table_csv(path)?;
        Self::tabulated(lambda, xs, ys)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn p0_star(&self) -> f64 {
        self.p0_star
    }

    pub fn form(&self) -> TargetForm {
        match self.shape {
            Shape::Linear { .. } => TargetForm::LinearDecay,
            Shape::Quadratic { .. } => TargetForm::QuadraticDecay,
            Shape::Tabulated { .. } => TargetForm::Tabulated,
        }
    }

    /// Target density `p1*(x)`.
    pub fn p1_star(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Linear { coeff } => coeff * (self.length - x),
            Shape::Quadratic { coeff } => {
                let r = 1.0 - x / self.length;
                coeff * r * r
            }
            Shape::Tabulated { xs, ys, slopes } => {
                let (j, _) = locate(xs, x);
                ys[j] + slopes[j] * (x - xs[j])
            }
        }
    }

    /// Target density derivative `d p1*/dx`.
    pub fn dp1_star(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Linear { coeff } => -coeff,
            Shape::Quadratic { coeff } => -2.0 * coeff * (1.0 - x / self.length) / self.length,
            Shape::Tabulated { xs, slopes, .. } => {
                let (j, _) = locate(xs, x);
                slopes[j]
            }
        }
    }

    /// The target as a sampled state on `grid` (time-stamped `t`).
    pub fn as_state(&self, grid: &SpatialGrid, t: f64) -> SystemState {
        SystemState {
            p0: self.p0_star,
            p1: grid.nodes().iter().map(|&x| self.p1_star(x)).collect(),
            t,
        }
    }

    /// `‖p1*‖_{L¹}` by composite trapezoid on `grid`.
    pub fn l1_norm(&self, grid: &SpatialGrid) -> f64 {
        grid.integrate(|x| self.p1_star(x))
    }
}

fn check_rate_and_length(lambda: f64, length: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "L must be positive and finite, got {length}"
        )));
    }
    Ok(())
}

/// Cell index containing `x` (clamped), and the clamped coordinate.
fn locate(xs: &[f64], x: f64) -> (usize, f64) {
    if x <= xs[0] {
        return (0, xs[0]);
    }
    if x >= xs[xs.len() - 1] {
        return (xs.len() - 2, xs[xs.len() - 1]);
    }
    let j = xs.partition_point(|&n| n <= x) - 1;
    (j, x)
}

/// Read a two-column numeric CSV with a header row.
pub fn read_table_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::TableFormat(format!(
                "expected 2 columns, got {}",
                record.len()
            )));
        }
        let parse = |field: &str| {
            field
                .parse::<f64>()
                .map_err(|_| Error::TableFormat(format!("non-numeric field {field:?}")))
        };
        xs.push(parse(&record[0])?);
        ys.push(parse(&record[1])?);
    }
    Ok((xs, ys))
}

/// Canonical linear-decay target. See [`TargetProfile::linear`].
pub fn make_linear_target(lambda: f64, length: f64) -> Result<TargetProfile> {
    TargetProfile::linear(lambda, length)
}

/// Quadratic-decay target. See [`TargetProfile::quadratic`].
pub fn make_quadratic_target(lambda: f64, length: f64) -> Result<TargetProfile> {
    TargetProfile::quadratic(lambda, length)
}

/// Outcome of a single admissibility check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Per-condition admissibility report; `passed` iff every check passes.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Measure the admissibility conditions of a target on a grid:
/// boundary compatibility `p1*(0) = λ p0*`, endpoint vanishing
/// `p1*(L) = 0`, strict positivity and strict monotone decrease at the
/// interior nodes, and unit total mass by composite quadrature.
/// Failures are reported, never thrown.
pub fn validate_target(target: &TargetProfile, grid: &SpatialGrid, tol: f64) -> ValidationReport {
    let nodes = grid.nodes();
    let interior = &nodes[1..nodes.len() - 1];
    let peak = nodes
        .iter()
        .map(|&x| target.p1_star(x))
        .fold(0.0_f64, f64::max);
    let floor = STRICTNESS_FLOOR * peak;

    let boundary_residual = (target.p1_star(0.0) - target.lambda * target.p0_star).abs();
    let endpoint_residual = target.p1_star(target.length).abs();

    let min_interior = interior
        .iter()
        .map(|&x| target.p1_star(x))
        .fold(f64::INFINITY, f64::min);
    let positivity_residual = (floor - min_interior).max(0.0);

    let max_slope = interior
        .iter()
        .map(|&x| target.dp1_star(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone_residual = (max_slope + floor).max(0.0);

    let mass = target.p0_star + target.l1_norm(grid);
    let mass_residual = (mass - 1.0).abs();

    let checks = vec![
        CheckResult {
            name: "boundary-compatibility".into(),
            residual: boundary_residual,
            tolerance: tol,
            passed: boundary_residual <= tol,
        },
        CheckResult {
            name: "endpoint-vanishing".into(),
            residual: endpoint_residual,
            tolerance: tol,
            passed: endpoint_residual <= tol,
        },
        CheckResult {
            name: "positivity".into(),
            residual: positivity_residual,
            tolerance: 0.0,
            passed: positivity_residual <= 0.0,
        },
        CheckResult {
            name: "monotone-decrease".into(),
            residual: monotone_residual,
            tolerance: 0.0,
            passed: monotone_residual <= 0.0,
        },
        CheckResult {
            name: "unit-mass".into(),
            residual: mass_residual,
            tolerance: tol,
            passed: mass_residual <= tol,
        },
    ];
    ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn grid() -> SpatialGrid {
        SpatialGrid::uniform(1.0, 64).unwrap()
    }

    #[test]
    fn linear_target_closed_form() {
        // p0*(1 + λL/2) = 1  =>  p0* = 2/3 for λ = L = 1
        let t = make_linear_target(1.0, 1.0).unwrap();
        assert_relative_eq!(t.p0_star(), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.p1_star(0.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.p1_star(0.0), t.lambda() * t.p0_star(), epsilon = 1e-15);
        assert_relative_eq!(t.p1_star(0.25), 0.5, epsilon = 1e-15);
        assert_eq!(t.p1_star(1.0), 0.0);
        assert_relative_eq!(t.dp1_star(0.5), -2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_target_with_doubled_rate() {
        // λL/2 = 1  =>  p0* = 1/2 and p1*(x) = 1 - x
        let t = make_linear_target(2.0, 1.0).unwrap();
        assert_relative_eq!(t.p0_star(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(t.p1_star(0.3), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_target_closed_form() {
        let t = make_quadratic_target(1.0, 1.0).unwrap();
        assert_relative_eq!(t.p0_star(), 0.75, epsilon = 1e-15);
        assert_relative_eq!(t.p1_star(0.0), 0.75, epsilon = 1e-15);
        assert_relative_eq!(t.p1_star(0.5), 0.75 * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(make_linear_target(0.0, 1.0).is_err());
        assert!(make_linear_target(1.0, -2.0).is_err());
        assert!(make_quadratic_target(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn canonical_family_validates_cleanly() {
        let report = validate_target(&make_linear_target(1.0, 1.0).unwrap(), &grid(), 1e-10);
        assert!(report.passed);
        for check in &report.checks {
            assert!(check.residual < 1e-12, "{}: {}", check.name, check.residual);
        }
    }

    #[test]
    fn broken_boundary_compatibility_is_reported() {
        // densities scaled to 0.9 of the compatible value while p0* is kept
        let base = make_linear_target(1.0, 1.0).unwrap();
        let g = grid();
        let xs: Vec<f64> = g.nodes().to_vec();
        let ys: Vec<f64> = xs.iter().map(|&x| 0.9 * base.p1_star(x)).collect();
        let t = TargetProfile::tabulated_with_p0(1.0, base.p0_star(), xs, ys).unwrap();
        let report = validate_target(&t, &g, 1e-10);
        assert!(!report.passed);
        assert!(!report.check("boundary-compatibility").unwrap().passed);
    }

    #[test]
    fn broken_monotonicity_is_reported() {
        let base = make_linear_target(1.0, 1.0).unwrap();
        let g = grid();
        let xs: Vec<f64> = g.nodes().to_vec();
        let mut ys: Vec<f64> = xs.iter().map(|&x| base.p1_star(x)).collect();
        ys[20] = ys[19] + 0.05; // one interior sample above its left neighbor
        let t = TargetProfile::tabulated(1.0, xs, ys).unwrap();
        let report = validate_target(&t, &g, 1e-10);
        assert!(!report.passed);
        assert!(!report.check("monotone-decrease").unwrap().passed);
    }

    #[test]
    fn broken_endpoint_is_reported() {
        let g = grid();
        let xs: Vec<f64> = g.nodes().to_vec();
        let ys: Vec<f64> = xs.iter().map(|&x| 1.0 - 0.5 * x).collect();
        let t = TargetProfile::tabulated(1.0, xs, ys).unwrap();
        let report = validate_target(&t, &g, 1e-10);
        assert!(!report.check("endpoint-vanishing").unwrap().passed);
    }

    #[test]
    fn tabulated_roundtrip_through_csv() {
        let base = make_linear_target(1.0, 1.0).unwrap();
        let g = grid();
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x,p1_star").unwrap();
        for &x in g.nodes() {
            writeln!(file, "{:e},{:e}", x, base.p1_star(x)).unwrap();
        }
        file.flush().unwrap();
        let t = TargetProfile::from_csv_path(1.0, file.path()).unwrap();
        assert_eq!(t.form(), TargetForm::Tabulated);
        assert_relative_eq!(t.p0_star(), 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(t.p1_star(0.517), base.p1_star(0.517), epsilon = 1e-14);
        assert!(validate_target(&t, &g, 1e-10).passed);
    }

    #[test]
    fn csv_rejects_bad_tables() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x,p1_star").unwrap();
        writeln!(file, "0.0,1.0").unwrap();
        writeln!(file, "0.5,oops").unwrap();
        file.flush().unwrap();
        assert!(TargetProfile::from_csv_path(1.0, file.path()).is_err());

        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x,p1_star").unwrap();
        writeln!(file, "0.1,1.0").unwrap();
        writeln!(file, "0.5,0.2").unwrap();
        file.flush().unwrap();
        assert!(TargetProfile::from_csv_path(1.0, file.path()).is_err());
    }
}
