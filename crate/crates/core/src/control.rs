//! Repair-rate synthesis.
//!
//! Two designs are produced here:
//!
//! - The static design `μ(x) = -(ln p1*(x))' = -p1*'(x)/p1*(x)`, which makes
//!   the desired profile the steady state of the open-loop system. Its
//!   survival function has the closed form `S(x) = p1*(x)/p1*(0)`, which the
//!   solvers use directly instead of integrating the hazard (the hazard is
//!   not integrable up to `L`).
//!
//! - The staged feedback law
//!   `μ(x,t) = -p1_x/p1 + α i (g(x) p1)_x / p1`, `g = 1/p1*`, applied on the
//!   stage `t ∈ [t_{i-1}, t_i)` of a schedule with `t_i = c0 Σ_{k<=i} 1/k²`
//!   and `c0 = 6 t_f / π²`. Each stage contracts the distance to the target
//!   at rate `α i ε0`; the harmonic divergence of the accumulated exponents
//!   forces exact arrival at `t_f`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::charsolver::Trajectory;
use crate::domain::{SpatialGrid, SystemState, TargetForm, TargetProfile};
use crate::error::{Error, Result};

/// Static repair-rate design derived from a target profile.
///
/// Exposes the hazard `μ`, the survival function `S(x) = exp(-∫₀ˣ μ)`, and
/// the repair-completion density `f = μ S = -S'`. All three come from the
/// target in closed form, so the non-integrable singularity of `μ` at `L`
/// never has to be quadratured.
#[derive(Debug, Clone)]
pub struct StaticDesign {
    target: TargetProfile,
}

impl StaticDesign {
    /// Hazard `μ(x) = -p1*'(x)/p1*(x)`; diverges as `x → L`.
    pub fn hazard(&self, x: f64) -> f64 {
        -self.target.dp1_star(x) / self.target.p1_star(x)
    }

    /// Survival `S(x) = p1*(x)/p1*(0)`, extended by 0 past `L` (every
    /// repair has completed) and 1 before 0.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x >= self.target.length() {
            return 0.0;
        }
        self.target.p1_star(x) / self.target.p1_star(0.0)
    }

    /// Repair-completion density `f(x) = μ(x)S(x) = -p1*'(x)/p1*(0)`,
    /// bounded even where the hazard diverges.
    pub fn completion_density(&self, x: f64) -> f64 {
        if x < 0.0 || x > self.target.length() {
            return 0.0;
        }
        -self.target.dp1_star(x) / self.target.p1_star(0.0)
    }

    pub fn target(&self) -> &TargetProfile {
        &self.target
    }
}

/// Time partition of `[0, t_f]` into stages of length `c0/i²` with
/// `c0 = 6 t_f / π²`, so the stage endpoints converge upward to `t_f`.
#[derive(Debug, Clone, Serialize)]
pub struct StageSchedule {
    pub t_f: f64,
    pub c0: f64,
    /// `endpoints[i-1] = t_i = c0 Σ_{k<=i} 1/k²`, strictly below `t_f`.
    pub endpoints: Vec<f64>,
    pub i_max: usize,
}

impl StageSchedule {
    /// Schedule with custom stage endpoints (strictly increasing, below
    /// `t_f`). Hook for alternative weightings; only the canonical
    /// `c0/i²` partition is exercised by the synthesis pipeline.
    pub fn custom(t_f: f64, endpoints: Vec<f64>) -> Result<Self> {
        if !(t_f > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_f must be positive, got {t_f}"
            )));
        }
        if endpoints.is_empty() {
            return Err(Error::InvalidParameter("schedule needs >= 1 stage".into()));
        }
        let increasing = endpoints.windows(2).all(|w| w[1] > w[0]);
        if !increasing || endpoints[0] <= 0.0 || *endpoints.last().unwrap() >= t_f {
            return Err(Error::InvalidParameter(
                "stage endpoints must be strictly increasing in (0, t_f)".into(),
            ));
        }
        let c0 = 6.0 * t_f / (PI * PI);
        let i_max = endpoints.len();
        Ok(Self {
            t_f,
            c0,
            endpoints,
            i_max,
        })
    }

    pub fn stage_start(&self, i: usize) -> f64 {
        if i <= 1 {
            0.0
        } else {
            self.endpoints[i - 2]
        }
    }

    pub fn stage_end(&self, i: usize) -> f64 {
        self.endpoints[i - 1]
    }

    pub fn stage_len(&self, i: usize) -> f64 {
        self.stage_end(i) - self.stage_start(i)
    }

    /// 1-based index of the stage containing `t`, i.e. `t ∈ [t_{i-1}, t_i)`.
    pub fn stage_index(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t >= *self.endpoints.last().unwrap() {
            return None;
        }
        Some(self.endpoints.partition_point(|&e| e <= t) + 1)
    }
}

/// Build the canonical schedule: `c0 = 6 t_f / π²` and exact partial sums
/// `t_i = c0 Σ_{k<=i} 1/k²` for `i = 1..=i_max`.
pub fn build_schedule(t_f: f64, i_max: usize) -> Result<StageSchedule> {
    if !(t_f > 0.0) || !t_f.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "t_f must be positive and finite, got {t_f}"
        )));
    }
    if i_max < 1 {
        return Err(Error::InvalidParameter("i_max must be >= 1".into()));
    }
    let c0 = 6.0 * t_f / (PI * PI);
    let mut endpoints = Vec::with_capacity(i_max);
    let mut sum = 0.0;
    for k in 1..=i_max {
        sum += 1.0 / (k as f64 * k as f64);
        endpoints.push(c0 * sum);
    }
    Ok(StageSchedule {
        t_f,
        c0,
        endpoints,
        i_max,
    })
}

/// Partial harmonic sum `H_i = Σ_{k<=i} 1/k`, the accumulated exponent of
/// the staged decay envelope.
pub fn harmonic(i: usize) -> f64 {
    (1..=i).map(|k| 1.0 / k as f64).sum()
}

/// Staged bilinear feedback plan: weight `α i` on stage `i` of `schedule`,
/// steering toward `target`.
#[derive(Debug, Clone)]
pub struct StagedFeedbackPlan {
    pub alpha: f64,
    pub schedule: StageSchedule,
    pub target: TargetProfile,
}

/// A repair-rate control: either the static hazard design or the staged
/// bilinear feedback law.
#[derive(Debug, Clone)]
pub enum RepairRatePlan {
    Static(StaticDesign),
    StagedFeedback(StagedFeedbackPlan),
}

impl RepairRatePlan {
    /// Staged plan; requires `alpha >= p1*(0)` so the feedback hazard keeps
    /// the divergent-integral property of an admissible repair rate.
    pub fn staged(alpha: f64, schedule: StageSchedule, target: TargetProfile) -> Result<Self> {
        let min = target.p1_star(0.0);
        if !(alpha >= min) {
            return Err(Error::AlphaTooSmall { alpha, min });
        }
        Ok(Self::StagedFeedback(StagedFeedbackPlan {
            alpha,
            schedule,
            target,
        }))
    }

    pub fn target(&self) -> &TargetProfile {
        match self {
            Self::Static(design) => design.target(),
            Self::StagedFeedback(plan) => &plan.target,
        }
    }

    pub fn as_static(&self) -> Option<&StaticDesign> {
        match self {
            Self::Static(design) => Some(design),
            Self::StagedFeedback(_) => None,
        }
    }

    pub fn as_staged(&self) -> Option<&StagedFeedbackPlan> {
        match self {
            Self::Static(_) => None,
            Self::StagedFeedback(plan) => Some(plan),
        }
    }

    /// Serializable description of the plan for JSON artifacts.
    pub fn descriptor(&self, table_path: Option<String>) -> PlanDescriptor {
        let target = self.target();
        let target_desc = TargetDescriptor {
            form: target.form(),
            p0_star: target.p0_star(),
            table_path,
        };
        match self {
            Self::Static(_) => PlanDescriptor {
                kind: "static",
                lambda: target.lambda(),
                length: target.length(),
                alpha: None,
                c0: None,
                endpoints: None,
                target: target_desc,
            },
            Self::StagedFeedback(plan) => PlanDescriptor {
                kind: "staged-feedback",
                lambda: target.lambda(),
                length: target.length(),
                alpha: Some(plan.alpha),
                c0: Some(plan.schedule.c0),
                endpoints: Some(plan.schedule.endpoints.clone()),
                target: target_desc,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetDescriptor {
    pub form: TargetForm,
    pub p0_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_path: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanDescriptor {
    pub kind: &'static str,
    pub lambda: f64,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<Vec<f64>>,
    pub target: TargetDescriptor,
}

/// Static design `μ = -p1*'/p1*` whose steady state is the target.
///
/// Fails if the target density vanishes away from `L` (the hazard would be
/// singular inside the domain) or does not vanish at `L` (the hazard would
/// stay integrable, so repairs could outlive the age bound).
pub fn static_repair_rate(target: &TargetProfile) -> Result<RepairRatePlan> {
    let peak = target.p1_star(0.0);
    if !(peak > 0.0) {
        return Err(Error::SingularTarget { x: 0.0 });
    }
    if target.p1_star(target.length()).abs() > 1e-12 * peak {
        return Err(Error::InvalidParameter(
            "target density must vanish at x = L".into(),
        ));
    }
    if let TargetForm::Tabulated = target.form() {
        // interior table zeros make the hazard singular inside the domain
        const SCAN_CELLS: usize = 4096;
        for j in 1..SCAN_CELLS {
            let x = target.length() * j as f64 / SCAN_CELLS as f64;
            if target.p1_star(x) <= 0.0 {
                return Err(Error::SingularTarget { x });
            }
        }
    }
    Ok(RepairRatePlan::Static(StaticDesign {
        target: target.clone(),
    }))
}

/// Smallest admissible feedback gain
/// `α = max{ p1*(0), 1/c0, 1/(c0 ε0) }`: the first term keeps the hazard
/// admissible, the last two keep the feedback hazard bounded on compact
/// subsets of `[0, L)`.
pub fn select_alpha(target: &TargetProfile, c0: f64, eps0: f64) -> Result<f64> {
    if !(eps0 > 0.0) || !eps0.is_finite() {
        return Err(Error::InvalidRate(format!(
            "decay rate must be positive and finite, got {eps0}"
        )));
    }
    if !(c0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "c0 must be positive, got {c0}"
        )));
    }
    Ok(target
        .p1_star(0.0)
        .max(1.0 / c0)
        .max(1.0 / (c0 * eps0)))
}

/// Evaluate the staged feedback hazard
/// `μ(x,t) = -p1_x/p1 + α i (g' p1 + g p1_x)/p1` at the interior nodes,
/// with `g = 1/p1*` and `g' = -p1*'/p1*²`.
///
/// Returns one entry per node: `None` at the boundary nodes and wherever
/// `p1 <= 0` (the hazard is undefined there). Diagnostic only: the
/// closed-loop solvers work on the transformed system directly.
pub fn evaluate_feedback_mu(
    state: &SystemState,
    dstate_dx: &[f64],
    plan: &RepairRatePlan,
    t: f64,
    grid: &SpatialGrid,
) -> Result<Vec<Option<f64>>> {
    let plan = plan
        .as_staged()
        .ok_or_else(|| Error::InvalidParameter("feedback hazard needs a staged plan".into()))?;
    if state.p1.len() != grid.len() || dstate_dx.len() != grid.len() {
        return Err(Error::IncompatibleGrids {
            expected: grid.len(),
            got: state.p1.len().min(dstate_dx.len()),
        });
    }
    let stage = plan.schedule.stage_index(t).ok_or_else(|| {
        Error::InvalidParameter(format!("t = {t} is not inside any scheduled stage"))
    })?;
    let weight = plan.alpha * stage as f64;
    let target = &plan.target;
    let n = grid.len();
    let mut out = vec![None; n];
    for j in 1..n - 1 {
        let p1 = state.p1[j];
        if p1 <= 0.0 {
            continue; // undefined hazard at this node
        }
        let x = grid.nodes()[j];
        let ps = target.p1_star(x);
        let dps = target.dp1_star(x);
        let g = 1.0 / ps;
        let dg = -dps / (ps * ps);
        let d = dstate_dx[j];
        out[j] = Some(-d / p1 + weight * (dg * p1 + g * d) / p1);
    }
    Ok(out)
}

/// Per-stage supremum of the feedback correction term, with the matching
/// theoretical ceiling.
#[derive(Debug, Clone, Serialize)]
pub struct StageSupremum {
    pub stage: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// `sup_{x <= l} |α i (g p1)_x|` over the stage's recorded states.
    pub sup: f64,
    /// `2 α² i (g(0)λ)² ‖P(t - 2 p̃_i(L)) - P*‖` with the delayed distance
    /// read from the trajectory itself (clamped at the initial state).
    pub bound: f64,
}

/// Scan a staged trajectory for the boundedness of the feedback correction
/// `α i (g p1)_x` on `[0, l_frac · L]`.
///
/// Requires `t_f > 2 ‖p1*‖_{L¹}`; outside that hypothesis the estimate
/// backing the ceiling does not apply and the scan refuses to run.
pub fn mu_boundedness_scan(
    traj: &Trajectory,
    plan: &RepairRatePlan,
    l_frac: f64,
    grid: &SpatialGrid,
) -> Result<Vec<StageSupremum>> {
    let plan = plan
        .as_staged()
        .ok_or_else(|| Error::InvalidParameter("boundedness scan needs a staged plan".into()))?;
    if !(0.0 < l_frac && l_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "l_frac must lie in (0, 1), got {l_frac}"
        )));
    }
    let target = &plan.target;
    let l1 = target.l1_norm(grid);
    if !(plan.schedule.t_f > 2.0 * l1) {
        return Err(Error::HypothesisNotSatisfied(format!(
            "need t_f > 2 ||p1*||_L1 = {:.6}, got t_f = {:.6}",
            2.0 * l1,
            plan.schedule.t_f
        )));
    }
    if traj.stage_marks.is_empty() {
        return Err(Error::InvalidTrajectory(
            "trajectory has no stage markers".into(),
        ));
    }
    let nodes = grid.nodes();
    let cutoff = l_frac * grid.length();
    let j_max = nodes.partition_point(|&x| x <= cutoff) - 1;
    let g0_lambda = target.lambda() / target.p1_star(0.0);

    let mut out = Vec::with_capacity(traj.stage_marks.len());
    for mark in &traj.stage_marks {
        let weight = plan.alpha * mark.stage as f64;
        let horizon = l1 / weight;
        let mut sup = 0.0_f64;
        let mut delayed_dist = 0.0_f64;
        for state in &traj.states {
            if state.t < mark.t_start - 1e-12 || state.t > mark.t_end + 1e-12 {
                continue;
            }
            // w = g p1 = p1 / p1*, finite on [0, cutoff] away from L
            for j in 0..=j_max {
                let dw = scaled_density_slope(state, target, nodes, j);
                sup = sup.max((weight * dw).abs());
            }
            let delayed_t = state.t - 2.0 * horizon;
            delayed_dist = delayed_dist.max(dist_at_or_before(traj, delayed_t));
        }
        let bound =
            2.0 * plan.alpha * plan.alpha * mark.stage as f64 * g0_lambda * g0_lambda * delayed_dist;
        out.push(StageSupremum {
            stage: mark.stage,
            t_start: mark.t_start,
            t_end: mark.t_end,
            sup,
            bound,
        });
    }
    Ok(out)
}

/// Central difference of `p1/p1*` at node `j`, one-sided at the ends and
/// next to `L` (where `p1*` vanishes and the ratio is not formed).
fn scaled_density_slope(
    state: &SystemState,
    target: &TargetProfile,
    nodes: &[f64],
    j: usize,
) -> f64 {
    let n = nodes.len();
    let w = |k: usize| state.p1[k] / target.p1_star(nodes[k]);
    let lo = j.saturating_sub(1);
    let hi = (j + 1).min(n - 2); // node n-1 sits at L
    if hi == lo {
        return 0.0;
    }
    (w(hi) - w(lo)) / (nodes[hi] - nodes[lo])
}

/// Recorded distance-to-target of the last state at or before `t`
/// (clamped to the first record).
fn dist_at_or_before(traj: &Trajectory, t: f64) -> f64 {
    let mut latest = traj.diagnostics[0].dist_to_reference;
    for (state, diag) in traj.states.iter().zip(&traj.diagnostics) {
        if state.t <= t {
            latest = diag.dist_to_reference;
        } else {
            break;
        }
    }
    latest
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_linear_target, make_quadratic_target};
    use approx::assert_relative_eq;

    #[test]
    fn static_design_on_linear_target() {
        let plan = static_repair_rate(&make_linear_target(1.0, 1.0).unwrap()).unwrap();
        let design = plan.as_static().unwrap();
        // μ(x) = 1/(1-x)
        assert_relative_eq!(design.hazard(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(design.hazard(0.5), 2.0, epsilon = 1e-14);
        // S(x) = 1 - x
        assert_relative_eq!(design.survival(0.0), 1.0);
        assert_relative_eq!(design.survival(0.5), 0.5, epsilon = 1e-14);
        assert_eq!(design.survival(1.0), 0.0);
        // strictly decreasing survival, nonnegative hazard
        let mut prev = design.survival(0.0);
        for j in 1..=32 {
            let x = j as f64 / 32.0;
            let s = design.survival(x);
            assert!(s < prev, "S must strictly decrease, stalled at x = {x}");
            assert!(design.hazard(x.min(0.999)) >= 0.0);
            prev = s;
        }
        // f = μ S = 1 on [0, 1]
        assert_relative_eq!(design.completion_density(0.9), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn static_design_on_quadratic_target() {
        let plan = static_repair_rate(&make_quadratic_target(1.0, 1.0).unwrap()).unwrap();
        let design = plan.as_static().unwrap();
        // μ(x) = 2/(1-x)
        assert_relative_eq!(design.hazard(0.0), 2.0, epsilon = 1e-14);
        assert_relative_eq!(design.hazard(0.5), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn static_design_rejects_interior_zero() {
        let xs: Vec<f64> = (0..=16).map(|j| j as f64 / 16.0).collect();
        let mut ys: Vec<f64> = xs.iter().map(|&x| 1.0 - x).collect();
        ys[8] = 0.0;
        let t = TargetProfile::tabulated(1.5, xs, ys).unwrap();
        assert!(matches!(
            static_repair_rate(&t),
            Err(Error::SingularTarget { .. })
        ));
    }

    #[test]
    fn schedule_partial_sums() {
        // t_f = π²/6 gives c0 = 1 and endpoints equal to the raw sums
        let s = build_schedule(PI * PI / 6.0, 3).unwrap();
        assert_relative_eq!(s.c0, 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.endpoints[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.endpoints[1], 1.25, epsilon = 1e-14);
        assert_relative_eq!(s.endpoints[2], 49.0 / 36.0, epsilon = 1e-12);
    }

    #[test]
    fn schedule_c0_for_unit_final_time() {
        let s = build_schedule(1.0, 5).unwrap();
        assert_relative_eq!(s.c0, 0.6079271018540267, epsilon = 1e-12);
        // first stage length is exactly c0
        assert_relative_eq!(s.stage_len(1), s.c0);
    }

    #[test]
    fn schedule_endpoints_stay_below_t_f() {
        let s = build_schedule(2.0, 60).unwrap();
        assert!(s.endpoints.windows(2).all(|w| w[1] > w[0]));
        assert!(*s.endpoints.last().unwrap() < s.t_f);
        for i in 1..=s.i_max {
            assert_relative_eq!(
                s.stage_len(i),
                s.c0 / (i as f64 * i as f64),
                epsilon = 1e-12
            );
        }
        // truncation tail: t_f sits within the leftover series mass
        let tail: f64 = (61..10_000).map(|k| 1.0 / (k as f64 * k as f64)).sum();
        assert!(s.t_f < s.endpoints.last().unwrap() + s.c0 * (tail + 1e-2));
    }

    #[test]
    fn stage_lookup() {
        let s = build_schedule(PI * PI / 6.0, 4).unwrap();
        assert_eq!(s.stage_index(0.0), Some(1));
        assert_eq!(s.stage_index(0.999), Some(1));
        assert_eq!(s.stage_index(1.0), Some(2));
        assert_eq!(s.stage_index(1.3), Some(3));
        assert_eq!(s.stage_index(5.0), None);
        assert_eq!(s.stage_index(-0.1), None);
    }

    #[test]
    fn alpha_selection() {
        let t = make_linear_target(1.0, 1.0).unwrap(); // p1*(0) = 2/3
        assert_relative_eq!(select_alpha(&t, 1.0, 0.5).unwrap(), 2.0);
        assert_relative_eq!(select_alpha(&t, 1.0, 2.0).unwrap(), 1.0);
        assert!(select_alpha(&t, 1.0, 0.0).is_err());
        assert!(select_alpha(&t, 1.0, -1.0).is_err());

        // dominant first argument
        let t3 = make_linear_target(12.0, 1.0).unwrap();
        assert!(t3.p1_star(0.0) > 1.0);
        assert_relative_eq!(
            select_alpha(&t3, 1.0, 10.0).unwrap(),
            t3.p1_star(0.0)
        );
    }

    #[test]
    fn staged_plan_enforces_alpha_floor() {
        let t = make_linear_target(1.0, 1.0).unwrap();
        let s = build_schedule(2.0, 4).unwrap();
        assert!(RepairRatePlan::staged(0.5, s.clone(), t.clone()).is_err());
        assert!(RepairRatePlan::staged(0.7, s, t).is_ok());
    }

    #[test]
    fn feedback_mu_at_target_equals_static_design() {
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let schedule = build_schedule(2.0, 4).unwrap();
        let plan = RepairRatePlan::staged(1.0, schedule, target.clone()).unwrap();
        let state = target.as_state(&grid, 0.1);
        let d: Vec<f64> = grid.nodes().iter().map(|&x| target.dp1_star(x)).collect();
        let mu = evaluate_feedback_mu(&state, &d, &plan, 0.1, &grid).unwrap();
        let design = static_repair_rate(&target).unwrap();
        let design = design.as_static().unwrap();
        for (j, &x) in grid.nodes().iter().enumerate().skip(1).take(grid.len() - 2) {
            let value = mu[j].expect("interior hazard defined at the target");
            // (g p1*)_x vanishes identically, so only the static term is left
            assert_relative_eq!(value, design.hazard(x), epsilon = 1e-10);
        }
    }

    #[test]
    fn feedback_mu_scale_invariance() {
        let grid = SpatialGrid::uniform(1.0, 32).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let schedule = build_schedule(2.0, 4).unwrap();
        let plan = RepairRatePlan::staged(1.0, schedule, target.clone()).unwrap();
        let base = target.as_state(&grid, 0.0);
        let doubled = SystemState {
            p0: base.p0,
            p1: base.p1.iter().map(|v| 2.0 * v).collect(),
            t: base.t,
        };
        let d: Vec<f64> = grid.nodes().iter().map(|&x| target.dp1_star(x)).collect();
        let d2: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let a = evaluate_feedback_mu(&base, &d, &plan, 0.0, &grid).unwrap();
        let b = evaluate_feedback_mu(&doubled, &d2, &plan, 0.0, &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Some(x), Some(y)) => assert_relative_eq!(x, y, epsilon = 1e-10),
                (None, None) => {}
                _ => panic!("defined-ness must agree"),
            }
        }
    }

    #[test]
    fn feedback_mu_flags_zero_density() {
        let grid = SpatialGrid::uniform(1.0, 16).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let schedule = build_schedule(2.0, 4).unwrap();
        let plan = RepairRatePlan::staged(1.0, schedule, target.clone()).unwrap();
        let mut state = target.as_state(&grid, 0.0);
        state.p1[5] = 0.0;
        let d = vec![0.0; grid.len()];
        let mu = evaluate_feedback_mu(&state, &d, &plan, 0.0, &grid).unwrap();
        assert!(mu[5].is_none());
        assert!(mu[4].is_some());
        assert!(mu[0].is_none()); // boundary nodes are never reported
    }

    #[test]
    fn harmonic_partial_sums() {
        assert_relative_eq!(harmonic(1), 1.0);
        assert_relative_eq!(harmonic(2), 1.5);
        assert_relative_eq!(harmonic(3), 11.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn custom_schedule_hook_validates_endpoints() {
        assert!(StageSchedule::custom(2.0, vec![0.5, 1.0, 1.5]).is_ok());
        assert!(StageSchedule::custom(2.0, vec![]).is_err());
        assert!(StageSchedule::custom(2.0, vec![0.5, 0.4]).is_err());
        assert!(StageSchedule::custom(2.0, vec![0.5, 2.0]).is_err());
    }

    #[test]
    fn feedback_mu_needs_a_scheduled_time() {
        let grid = SpatialGrid::uniform(1.0, 16).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let schedule = build_schedule(2.0, 2).unwrap();
        let last = *schedule.endpoints.last().unwrap();
        let plan = RepairRatePlan::staged(1.0, schedule, target.clone()).unwrap();
        let state = target.as_state(&grid, 0.0);
        let d = vec![0.0; grid.len()];
        assert!(evaluate_feedback_mu(&state, &d, &plan, last + 0.1, &grid).is_err());
    }

    #[test]
    fn scan_of_a_trajectory_at_the_target_is_identically_zero() {
        use crate::charsolver::{StageMark, Trajectory};
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let schedule = build_schedule(2.0, 3).unwrap();
        let mut states = Vec::new();
        for stage in 1..=3 {
            states.push(target.as_state(&grid, schedule.stage_end(stage)));
        }
        let mut traj =
            Trajectory::from_states(states, &grid, Some(&target.as_state(&grid, 0.0))).unwrap();
        for stage in 1..=3 {
            traj.stage_marks.push(StageMark {
                stage,
                t_start: schedule.stage_start(stage),
                t_end: schedule.stage_end(stage),
            });
        }
        let plan = RepairRatePlan::staged(1.0, schedule, target).unwrap();
        let rows = mu_boundedness_scan(&traj, &plan, 0.9, &grid).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            // (g p1*)_x vanishes identically at the target
            assert!(r.sup <= 1e-12, "stage {} sup {}", r.stage, r.sup);
        }
    }

    #[test]
    fn scan_requires_the_final_time_hypothesis() {
        use crate::charsolver::{StageMark, Trajectory};
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        // t_f = 0.5 < 2 ||p1*|| = 2/3
        let schedule = build_schedule(0.5, 2).unwrap();
        let states = vec![target.as_state(&grid, schedule.stage_end(1))];
        let mut traj = Trajectory::from_states(states, &grid, None).unwrap();
        traj.stage_marks.push(StageMark {
            stage: 1,
            t_start: 0.0,
            t_end: schedule.stage_end(1),
        });
        let plan = RepairRatePlan::staged(1.0, schedule, target).unwrap();
        assert!(matches!(
            mu_boundedness_scan(&traj, &plan, 0.9, &grid),
            Err(Error::HypothesisNotSatisfied(_))
        ));
    }

    #[test]
    fn scan_requires_stage_marks() {
        use crate::charsolver::Trajectory;
        let grid = SpatialGrid::uniform(1.0, 64).unwrap();
        let target = make_linear_target(1.0, 1.0).unwrap();
        let schedule = build_schedule(2.0, 2).unwrap();
        let states = vec![target.as_state(&grid, 0.1)];
        let traj = Trajectory::from_states(states, &grid, None).unwrap();
        let plan = RepairRatePlan::staged(1.0, schedule, target).unwrap();
        assert!(matches!(
            mu_boundedness_scan(&traj, &plan, 0.9, &grid),
            Err(Error::InvalidTrajectory(_))
        ));
    }

    #[test]
    fn descriptor_carries_schedule() {
        let t = make_linear_target(1.0, 1.0).unwrap();
        let s = build_schedule(2.0, 3).unwrap();
        let plan = RepairRatePlan::staged(1.0, s, t).unwrap();
        let d = plan.descriptor(None);
        assert_eq!(d.kind, "staged-feedback");
        assert_eq!(d.endpoints.as_ref().unwrap().len(), 3);
        assert!(d.alpha.is_some() && d.c0.is_some());
    }
}
