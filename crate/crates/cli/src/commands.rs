use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use repsys::{
    audit_invariants, build_schedule, calibrate_stage1, check_stage_envelope,
    closed_loop_stage_solve, fvsolver::{closed_loop_fv_transformed, open_loop_fv, FvConfig},
    mu_boundedness_scan, open_loop_solve, select_alpha, staged_control_solve, static_repair_rate,
    validate_target, x_norm_distance, DecayFit, Error as CoreError, RepairRatePlan, StopReason,
    Trajectory, ValidationReport,
};

use crate::config::{AlphaPolicy, RunConfig};

/// Why a command did not exit 0.
pub enum Failure {
    /// Exit 2: unusable configuration or environment.
    Usage(String),
    /// Exit 1: the run completed but a check did not pass.
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Check(m) => m,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn check(msg: impl Into<String>) -> Failure {
    Failure::Check(msg.into())
}

fn core_usage(e: CoreError) -> Failure {
    Failure::Usage(e.to_string())
}

fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<PathBuf, Failure> {
    let path = dir.join("trajectory.csv");
    let file = File::create(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    traj.write_csv(&mut writer)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_snapshots(
    dir: &Path,
    traj: &Trajectory,
    grid: &repsys::SpatialGrid,
    times: &[f64],
) -> Result<(), Failure> {
    if times.is_empty() {
        return Ok(());
    }
    let path = dir.join("snapshots.csv");
    let file = File::create(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    traj.write_snapshots_csv(grid, times, &mut writer)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn report_warnings(traj: &Trajectory) {
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
}

/// Validate the target and refuse to continue when it is inadmissible;
/// every computing subcommand runs this gate first so no partial artifacts
/// appear on validation failure.
fn validated_target(
    cfg: &RunConfig,
    grid: &repsys::SpatialGrid,
) -> Result<(repsys::TargetProfile, ValidationReport), Failure> {
    let target = cfg.build_target().map_err(usage)?;
    let report = validate_target(&target, grid, cfg.tolerances.validation);
    Ok((target, report))
}

fn first_failed_check(report: &ValidationReport) -> String {
    report
        .checks
        .iter()
        .find(|c| !c.passed)
        .map(|c| c.name.clone())
        .unwrap_or_else(|| "unknown".into())
}

pub fn cmd_validate(cfg: &RunConfig, out: &Path) -> CmdResult {
    let grid = cfg.build_grid().map_err(usage)?;
    let (_, report) = validated_target(cfg, &grid)?;
    ensure_out_dir(out)?;
    write_json(&out.join("validation.json"), &report)?;
    for c in &report.checks {
        println!(
            "{:24} residual {:.3e}  (tol {:.1e})  {}",
            c.name,
            c.residual,
            c.tolerance,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(check(format!(
            "target validation failed: {}",
            first_failed_check(&report)
        )))
    }
}

pub fn cmd_simulate_open(cfg: &RunConfig, out: &Path) -> CmdResult {
    let grid = cfg.build_grid().map_err(usage)?;
    let (target, report) = validated_target(cfg, &grid)?;
    if !report.passed {
        return Err(check(format!(
            "target validation failed: {}",
            first_failed_check(&report)
        )));
    }
    let plan = static_repair_rate(&target).map_err(core_usage)?;
    let initial = cfg.build_initial(&target, &grid).map_err(usage)?;
    let dt = cfg
        .open_loop
        .dt
        .unwrap_or(cfg.length / cfg.grid.cells as f64);
    let traj = open_loop_solve(&initial, &plan, cfg.lambda, cfg.open_loop.t_end, dt, &grid)
        .map_err(|e| match e {
            CoreError::StepSize(msg) => check(format!(
                "{msg}; pick dt <= the cell width and dividing t_end"
            )),
            other => core_usage(other),
        })?;
    report_warnings(&traj);

    ensure_out_dir(out)?;
    write_trajectory(out, &traj)?;
    write_snapshots(out, &traj, &grid, &cfg.snapshot_times)?;
    write_json(
        &out.join("plan.json"),
        &plan.descriptor(cfg.target_table_path()),
    )?;
    let audit = audit_invariants(&traj, &grid, cfg.tolerances.mass, cfg.tolerances.negativity);
    write_json(&out.join("invariants.json"), &audit)?;
    println!(
        "open-loop run: {} states, final distance to steady state {:.3e}, mass drift {:.3e}",
        traj.states.len(),
        traj.diagnostics.last().unwrap().dist_to_reference,
        audit.max_mass_drift
    );
    if audit.passed {
        Ok(())
    } else {
        Err(check("invariant audit failed"))
    }
}

pub fn cmd_simulate_closed_stage(cfg: &RunConfig, out: &Path) -> CmdResult {
    let grid = cfg.build_grid().map_err(usage)?;
    let (target, report) = validated_target(cfg, &grid)?;
    if !report.passed {
        return Err(check(format!(
            "target validation failed: {}",
            first_failed_check(&report)
        )));
    }
    let initial = cfg.build_initial(&target, &grid).map_err(usage)?;
    let alpha = cfg.stage.alpha.unwrap_or(match cfg.alpha {
        AlphaPolicy::Fixed { value } => value,
        AlphaPolicy::Auto => 1.0,
    });
    let stage = cfg.stage.index;
    let horizon = target.l1_norm(&grid) / (alpha * stage as f64);
    let dt = cfg.stage.dt.unwrap_or(horizon / 8.0);
    let traj = closed_loop_stage_solve(
        &initial,
        &target,
        alpha,
        stage,
        cfg.stage.duration,
        dt,
        &grid,
    )
    .map_err(|e| match e {
        CoreError::StepSize(msg) => check(msg),
        other => core_usage(other),
    })?;
    report_warnings(&traj);

    ensure_out_dir(out)?;
    write_trajectory(out, &traj)?;
    write_snapshots(out, &traj, &grid, &cfg.snapshot_times)?;
    let audit = audit_invariants(&traj, &grid, cfg.tolerances.mass, cfg.tolerances.negativity);
    write_json(&out.join("invariants.json"), &audit)?;
    println!(
        "stage {stage} (gain {alpha}): final distance to target {:.3e}, mass drift {:.3e}",
        traj.diagnostics.last().unwrap().dist_to_reference,
        audit.max_mass_drift
    );
    if audit.passed {
        Ok(())
    } else {
        Err(check("invariant audit failed"))
    }
}

#[derive(Serialize)]
struct ControlSummary {
    final_error: f64,
    tolerance: f64,
    stages_run: usize,
    stop: String,
    alpha: f64,
    alpha_policy: String,
    calibration: Option<DecayFit>,
    envelope_checked: bool,
    envelope_passed: bool,
}

pub fn cmd_control(cfg: &RunConfig, out: &Path) -> CmdResult {
    let grid = cfg.build_grid().map_err(usage)?;
    let (target, report) = validated_target(cfg, &grid)?;
    if !report.passed {
        return Err(check(format!(
            "target validation failed: {}",
            first_failed_check(&report)
        )));
    }
    let initial = cfg.build_initial(&target, &grid).map_err(usage)?;
    let schedule = build_schedule(cfg.t_f, cfg.i_max).map_err(core_usage)?;
    let target_state = target.as_state(&grid, 0.0);
    let initial_dist = x_norm_distance(&initial, &target_state, &grid).map_err(core_usage)?;

    // ε0 is not known a priori; measure it on the weight-1 stage unless the
    // initial state is already at the target (nothing to fit there).
    let calibration = if initial_dist > cfg.tolerances.final_error {
        let duration = 3.0 * cfg.length.max(target.l1_norm(&grid));
        let (fit, _) = calibrate_stage1(&initial, &target, &grid, duration, 0.25)
            .map_err(|e| check(format!("calibration failed: {e}")))?;
        Some(fit)
    } else {
        None
    };

    let (alpha, policy_name) = match cfg.alpha {
        AlphaPolicy::Fixed { value } => (value, "fixed"),
        AlphaPolicy::Auto => {
            let eps0 = calibration.as_ref().map(|f| f.eps0);
            let alpha = match eps0 {
                Some(eps0) => select_alpha(&target, schedule.c0, eps0).map_err(core_usage)?,
                // already at the target: any admissible gain works
                None => target.p1_star(0.0).max(1.0 / schedule.c0),
            };
            (alpha, "auto")
        }
    };

    let run = staged_control_solve(
        &initial,
        &target,
        cfg.t_f,
        alpha,
        cfg.i_max,
        cfg.tolerances.final_error,
        cfg.grid.steps_per_stage,
        &grid,
    )
    .map_err(|e| match e {
        CoreError::AlphaTooSmall { alpha, min } => usage(format!(
            "configured alpha {alpha} is below the admissible floor {min}"
        )),
        other => core_usage(other),
    })?;
    report_warnings(&run.trajectory);

    let envelope_rows = match &calibration {
        Some(fit) if run.stages_run > 0 => Some(
            check_stage_envelope(&run.trajectory, &schedule, alpha, fit, &target, &grid)
                .map_err(core_usage)?,
        ),
        _ => None,
    };

    ensure_out_dir(out)?;
    write_trajectory(out, &run.trajectory)?;
    write_snapshots(out, &run.trajectory, &grid, &cfg.snapshot_times)?;

    let envelope_path = out.join("envelope.csv");
    {
        let file = File::create(&envelope_path)
            .map_err(|e| usage(format!("{}: {e}", envelope_path.display())))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "i,t_i,H_i,measured,envelope,pass")
            .map_err(|e| usage(e.to_string()))?;
        if let Some(rows) = &envelope_rows {
            for r in rows {
                writeln!(
                    w,
                    "{},{:e},{:e},{:e},{:e},{}",
                    r.stage, r.t_end, r.harmonic, r.measured, r.envelope, r.passed
                )
                .map_err(|e| usage(e.to_string()))?;
            }
        }
    }

    let plan = RepairRatePlan::staged(alpha, schedule.clone(), target.clone())
        .map_err(core_usage)?;
    write_json(
        &out.join("plan.json"),
        &plan.descriptor(cfg.target_table_path()),
    )?;

    if let Some(scan_cfg) = &cfg.scan {
        match mu_boundedness_scan(&run.trajectory, &plan, scan_cfg.l_frac, &grid) {
            Ok(rows) => write_scan_csv(&out.join("mu_scan.csv"), &rows)?,
            Err(CoreError::HypothesisNotSatisfied(msg)) => {
                eprintln!("warning: boundedness scan skipped, hypothesis not satisfied: {msg}");
            }
            Err(e) => return Err(core_usage(e)),
        }
    }

    let envelope_passed = envelope_rows
        .as_ref()
        .map(|rows| rows.iter().all(|r| r.passed))
        .unwrap_or(true);
    let final_error = run.final_error();
    let summary = ControlSummary {
        final_error,
        tolerance: cfg.tolerances.final_error,
        stages_run: run.stages_run,
        stop: format!("{:?}", run.stop),
        alpha,
        alpha_policy: policy_name.into(),
        calibration,
        envelope_checked: envelope_rows.is_some(),
        envelope_passed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "control: {} stages, final error {:.3e} (tolerance {:.1e}), alpha {:.4} ({policy_name})",
        run.stages_run, final_error, cfg.tolerances.final_error, alpha
    );

    if run.stop == StopReason::ScheduleExhausted {
        return Err(check(format!(
            "schedule exhausted before tolerance; achieved error {final_error:.3e}"
        )));
    }
    if final_error > cfg.tolerances.final_error {
        return Err(check(format!(
            "final error {final_error:.3e} above tolerance {:.1e}",
            cfg.tolerances.final_error
        )));
    }
    if !envelope_passed {
        return Err(check("stage-end error exceeded the fitted decay envelope"));
    }
    Ok(())
}

fn write_scan_csv(path: &Path, rows: &[repsys::StageSupremum]) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "stage,t_start,t_end,sup,bound").map_err(|e| usage(e.to_string()))?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e}",
            r.stage, r.t_start, r.t_end, r.sup, r.bound
        )
        .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

pub fn cmd_scan_mu(cfg: &RunConfig, out: &Path) -> CmdResult {
    let grid = cfg.build_grid().map_err(usage)?;
    let (target, report) = validated_target(cfg, &grid)?;
    if !report.passed {
        return Err(check(format!(
            "target validation failed: {}",
            first_failed_check(&report)
        )));
    }
    let l1 = target.l1_norm(&grid);
    if !(cfg.t_f > 2.0 * l1) {
        eprintln!(
            "warning: boundedness scan skipped; the estimate requires \
             t_f > 2 ||p1*||_L1 = {:.6}, got t_f = {:.6}",
            2.0 * l1,
            cfg.t_f
        );
        return Ok(());
    }
    let initial = cfg.build_initial(&target, &grid).map_err(usage)?;
    let schedule = build_schedule(cfg.t_f, cfg.i_max).map_err(core_usage)?;
    let alpha = match cfg.alpha {
        AlphaPolicy::Fixed { value } => value,
        AlphaPolicy::Auto => {
            let duration = 3.0 * cfg.length.max(l1);
            let (fit, _) = calibrate_stage1(&initial, &target, &grid, duration, 0.25)
                .map_err(|e| check(format!("calibration failed: {e}")))?;
            select_alpha(&target, schedule.c0, fit.eps0).map_err(core_usage)?
        }
    };
    let run = staged_control_solve(
        &initial,
        &target,
        cfg.t_f,
        alpha,
        cfg.i_max,
        0.0,
        cfg.grid.steps_per_stage,
        &grid,
    )
    .map_err(core_usage)?;
    let plan =
        RepairRatePlan::staged(alpha, schedule, target.clone()).map_err(core_usage)?;
    let scan_cfg = cfg.scan.clone().unwrap_or_default();
    let rows = mu_boundedness_scan(&run.trajectory, &plan, scan_cfg.l_frac, &grid)
        .map_err(core_usage)?;
    ensure_out_dir(out)?;
    write_scan_csv(&out.join("mu_scan.csv"), &rows)?;
    println!(
        "scan: {} stages, sup range [{:.3e}, {:.3e}] on [0, {}L]",
        rows.len(),
        rows.iter().map(|r| r.sup).fold(f64::INFINITY, f64::min),
        rows.iter().map(|r| r.sup).fold(0.0_f64, f64::max),
        scan_cfg.l_frac
    );
    Ok(())
}

pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> CmdResult {
    let base_grid = cfg.build_grid().map_err(usage)?;
    let (target, report) = validated_target(cfg, &base_grid)?;
    if !report.passed {
        return Err(check(format!(
            "target validation failed: {}",
            first_failed_check(&report)
        )));
    }
    let plan = static_repair_rate(&target).map_err(core_usage)?;
    let spec = &cfg.compare;
    if spec.levels.len() < 2 {
        return Err(usage("compare needs at least two grid levels"));
    }

    let mut rows = Vec::new();
    for &cells in &spec.levels {
        let grid = cfg
            .build_grid_with_cells(cells)
            .map_err(usage)?;
        let initial = cfg.build_initial(&target, &grid).map_err(usage)?;

        let exact_open = open_loop_solve(
            &initial,
            &plan,
            cfg.lambda,
            spec.t_end,
            cfg.length / cells as f64,
            &grid,
        )
        .map_err(core_usage)?;
        let fv_open = open_loop_fv(
            &initial,
            &plan,
            cfg.lambda,
            FvConfig::new(cells, spec.cfl, spec.t_end).map_err(core_usage)?,
        )
        .map_err(core_usage)?;
        let open_err = x_norm_distance(exact_open.final_state(), fv_open.final_state(), &grid)
            .map_err(core_usage)?;

        let horizon = target.l1_norm(&grid);
        let dt = (horizon / 8.0).min(spec.stage_duration / 64.0);
        let exact_closed = closed_loop_stage_solve(
            &initial,
            &target,
            1.0,
            1,
            spec.stage_duration,
            dt,
            &grid,
        )
        .map_err(core_usage)?;
        let fv_closed = closed_loop_fv_transformed(
            &initial,
            &target,
            1.0,
            1,
            FvConfig::new(cells, spec.cfl, spec.stage_duration).map_err(core_usage)?,
        )
        .map_err(core_usage)?;
        let closed_err =
            x_norm_distance(exact_closed.final_state(), fv_closed.final_state(), &grid)
                .map_err(core_usage)?;

        rows.push((cells, open_err, closed_err));
    }

    ensure_out_dir(out)?;
    let path = out.join("compare.csv");
    {
        let file = File::create(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "cells,open_err,closed_err").map_err(|e| usage(e.to_string()))?;
        for (cells, open_err, closed_err) in &rows {
            writeln!(w, "{cells},{open_err:e},{closed_err:e}")
                .map_err(|e| usage(e.to_string()))?;
        }
    }

    let min_order = |select: fn(&(usize, f64, f64)) -> f64| -> f64 {
        rows.windows(2)
            .map(|w| (select(&w[0]) / select(&w[1])).log2())
            .fold(f64::INFINITY, f64::min)
    };
    let open_order = min_order(|r| r.1);
    let closed_order = min_order(|r| r.2);
    println!(
        "compare: observed orders open {open_order:.2}, closed {closed_order:.2} \
         (required {:.2})",
        spec.min_order
    );
    if open_order >= spec.min_order && closed_order >= spec.min_order {
        Ok(())
    } else {
        Err(check(format!(
            "cross-solver convergence order below {:.2}: open {open_order:.2}, closed {closed_order:.2}",
            spec.min_order
        )))
    }
}
