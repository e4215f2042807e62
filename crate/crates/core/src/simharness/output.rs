//! CSV and gnuplot emitters. Numbers use Rust's shortest round-trip
//! formatting, which does not depend on the locale.

use std::io::Write;

use crate::dynamics::{ALPHA, ALPHA_DOT, BETA, BETA_DOT, DP_ALPHA, DP_BETA};
use crate::error::Result;

use super::{CatchBatch, CatchRecord, PredictionSample, RunMetrics, StepRecord, TimingStats};
use crate::sysid::FitReport;

pub fn write_step_log<W: Write>(w: W, log: &[StepRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t", "alpha", "beta", "alpha_ref", "beta_ref", "alpha_meas", "beta_meas", "dp_alpha", "dp_beta",
        "dp_alpha_sp", "dp_beta_sp", "alpha_hat", "beta_hat", "d_alpha", "d_beta", "iterations", "fallback",
    ])?;
    for r in log {
        let mut row: Vec<String> = [
            r.t,
            r.state[ALPHA],
            r.state[BETA],
            r.reference.alpha,
            r.reference.beta,
            r.measured[ALPHA],
            r.measured[BETA],
            r.state[DP_ALPHA],
            r.state[DP_BETA],
            r.applied.x,
            r.applied.y,
            r.x_hat[ALPHA],
            r.x_hat[BETA],
            r.d_hat[ALPHA_DOT],
            r.d_hat[BETA_DOT],
        ]
        .iter()
        .map(|v| v.to_string())
        .collect();
        row.push(r.iterations.to_string());
        row.push(u8::from(r.fallback).to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `key,value` summary. Wall-clock timings go to [`write_timing`] so this
/// file is reproducible byte for byte.
pub fn write_metrics<W: Write>(w: W, m: &RunMetrics) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    let mut put = |k: &str, v: String| out.write_record([k, v.as_str()]);
    put("rmse_alpha_rad", m.rmse_alpha.to_string())?;
    put("rmse_beta_rad", m.rmse_beta.to_string())?;
    put("rmse_mean_rad", m.rmse().to_string())?;
    put("rmse_mean_deg", m.rmse().to_degrees().to_string())?;
    if let Some(off) = m.max_offset() {
        put("max_steady_offset_rad", off.to_string())?;
        put("max_steady_offset_deg", off.to_degrees().to_string())?;
    }
    for (i, w) in m.steady.iter().enumerate() {
        put(&format!("steady{i}_offset_alpha_rad"), w.offset[0].to_string())?;
        put(&format!("steady{i}_offset_beta_rad"), w.offset[1].to_string())?;
        put(&format!("steady{i}_d_alpha"), w.disturbance[0].to_string())?;
        put(&format!("steady{i}_d_beta"), w.disturbance[1].to_string())?;
    }
    if let Some(c) = &m.catch {
        put("catch_status", c.status.to_string())?;
        if let Some(d) = c.miss_distance {
            put("miss_distance_m", d.to_string())?;
        }
        if let Some(e) = c.final_prediction_error {
            put("final_prediction_error_m", e.to_string())?;
        }
    }
    put("solver_steps", m.solver.steps.to_string())?;
    put("solver_fallbacks", m.solver.fallbacks.to_string())?;
    put("solver_mean_iterations", m.solver.mean_iterations().to_string())?;
    put("solver_max_iterations", m.solver.max_iterations.to_string())?;
    out.flush()?;
    Ok(())
}

pub fn write_timing<W: Write>(w: W, t: &TimingStats) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    out.write_record(["solves", &t.solves.to_string()])?;
    out.write_record(["mean_solve_ms", &(t.mean().as_secs_f64() * 1e3).to_string()])?;
    out.write_record(["max_solve_ms", &(t.max.as_secs_f64() * 1e3).to_string()])?;
    out.write_record(["over_budget", &t.over_budget.to_string()])?;
    out.flush()?;
    Ok(())
}

pub fn write_catch_records<W: Write>(w: W, records: &[CatchRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "throw", "mode", "status", "miss_m", "alpha_intercept", "beta_intercept", "flight_time", "prediction_error_m",
        "vx", "vy", "vz", "drag",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let o = &r.outcome;
        out.write_record([
            r.index.to_string(),
            r.mode.to_string(),
            o.status.to_string(),
            opt(o.miss_distance),
            opt(o.intercept.map(|a| a.alpha)),
            opt(o.intercept.map(|a| a.beta)),
            opt(o.flight_time),
            opt(o.final_prediction_error),
            r.spec.velocity.x.to_string(),
            r.spec.velocity.y.to_string(),
            r.spec.velocity.z.to_string(),
            r.spec.drag.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `key,value` summary of a catch batch.
pub fn write_catch_summary<W: Write>(w: W, batch: &CatchBatch) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    let solver = batch.solver();
    let rows = [
        ("mode", batch.mode.to_string()),
        ("throws", batch.records.len().to_string()),
        ("intercepting", batch.intercepting().to_string()),
        ("excluded", batch.excluded().to_string()),
        ("successes", batch.successes().to_string()),
        ("success_rate", batch.success_rate().to_string()),
        ("mean_miss_successful_m", batch.mean_miss_successful().map(|m| m.to_string()).unwrap_or_default()),
        ("solver_steps", solver.steps.to_string()),
        ("solver_fallbacks", solver.fallbacks.to_string()),
        ("solver_mean_iterations", solver.mean_iterations().to_string()),
    ];
    for (k, v) in rows {
        out.write_record([k, v.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

/// Identified parameters followed by one row per regression.
pub fn write_fit_report<W: Write>(w: W, report: &FitReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    let p = &report.params;
    let params = [
        ("k_alpha", p.k_alpha),
        ("d_alpha", p.d_alpha),
        ("h_alpha", p.h_alpha),
        ("tau_alpha", p.tau_alpha),
        ("c_alpha", p.c_alpha),
        ("k_beta", p.k_beta),
        ("d_beta", p.d_beta),
        ("h_beta", p.h_beta),
        ("tau_beta", p.tau_beta),
        ("c_beta", p.c_beta),
    ];
    for (k, v) in params {
        out.write_record([k, v.to_string().as_str()])?;
    }
    out.write_record(["residual_norm", report.residual_norm().to_string().as_str()])?;
    for f in &report.fits {
        let prefix = format!("{}_{}", f.equation, f.axis);
        let coeffs = f.coefficients.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        out.write_record([format!("{prefix}_coefficients"), coeffs])?;
        out.write_record([format!("{prefix}_residual_rms"), f.residual_rms.to_string()])?;
        out.write_record([format!("{prefix}_condition"), f.condition.to_string()])?;
        out.write_record([format!("{prefix}_samples"), f.samples.to_string()])?;
    }
    for (i, w) in report.warnings.iter().enumerate() {
        out.write_record([format!("warning_{i}"), w.clone()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_prediction_trace<W: Write>(w: W, trace: &[PredictionSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "valid", "x", "y", "z", "alpha", "beta", "time_to_intercept"])?;
    for s in trace {
        let p = &s.prediction;
        out.write_record([
            s.t.to_string(),
            u8::from(p.valid).to_string(),
            p.point.x.to_string(),
            p.point.y.to_string(),
            p.point.z.to_string(),
            p.angles.alpha.to_string(),
            p.angles.beta.to_string(),
            p.time_to_intercept.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Gnuplot script for a step log written by [`write_step_log`].
pub fn gnuplot_script(log_file: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set multiplot layout 2,1 title '{title}'\n\
         set ylabel 'alpha [deg]'\n\
         plot '{log_file}' using 1:($4*180/pi) with lines dt 2 title 'SP', \\\n     \
         '' using 1:($2*180/pi) with lines title 'alpha'\n\
         set ylabel 'beta [deg]'\n\
         set xlabel 't [s]'\n\
         plot '{log_file}' using 1:($5*180/pi) with lines dt 2 title 'SP', \\\n     \
         '' using 1:($3*180/pi) with lines title 'beta'\n\
         unset multiplot\n"
    )
}
