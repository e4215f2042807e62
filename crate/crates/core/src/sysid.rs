//! Identification of the arm and pressure coefficients from excitation
//! experiments: schedule generation, local-polynomial differentiation,
//! normalization and four independent least-squares fits.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::allocation::InputPolytope;
use crate::config::{KvConfig, KvSection, KvWriter};
use crate::dynamics::{ArmState, Input, ModelParams, TruePlant, TruePlantConfig, ALPHA, BETA, DP_ALPHA, DP_BETA};
use crate::error::{Error, Result};

/// Minimum log length accepted by [`differentiate`].
pub const MIN_SAMPLES: usize = 10;
/// Normalized regressor condition number above which a warning is logged.
pub const CONDITION_WARNING: f64 = 10.0;
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub dp_alpha: f64,
    pub dp_beta: f64,
    pub dp_alpha_sp: f64,
    pub dp_beta_sp: f64,
}

pub const LOG_HEADER: [&str; 7] = ["t", "alpha", "beta", "dp_alpha", "dp_beta", "dp_alpha_sp", "dp_beta_sp"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentLog {
    pub rows: Vec<LogRow>,
}

impl ExperimentLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sample period, checking strictly increasing and uniform timestamps.
    pub fn sample_period(&self) -> Result<f64> {
        if self.rows.len() < 2 {
            return Err(Error::LogTooShort { got: self.rows.len(), need: 2 });
        }
        let dt = (self.rows[self.rows.len() - 1].t - self.rows[0].t) / (self.rows.len() - 1) as f64;
        for (i, w) in self.rows.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if step <= 0.0 || (step - dt).abs() > 1e-6 * dt.max(1e-9) + 1e-9 {
                return Err(Error::InvalidParameter(format!("non-uniform time stamp at row {}", i + 1)));
            }
        }
        Ok(dt)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(LOG_HEADER)?;
        for r in &self.rows {
            out.write_record(
                [r.t, r.alpha, r.beta, r.dp_alpha, r.dp_beta, r.dp_alpha_sp, r.dp_beta_sp].map(|v| v.to_string()),
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != LOG_HEADER {
            return Err(Error::Config { line: 1, msg: format!("expected header {}", LOG_HEADER.join(",")) });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let v = v.map_err(|e| Error::Config { line: i + 2, msg: e.to_string() })?;
            if v.len() != 7 {
                return Err(Error::Config { line: i + 2, msg: "expected 7 columns".into() });
            }
            rows.push(LogRow {
                t: v[0],
                alpha: v[1],
                beta: v[2],
                dp_alpha: v[3],
                dp_beta: v[4],
                dp_alpha_sp: v[5],
                dp_beta_sp: v[6],
            });
        }
        let log = Self { rows };
        log.sample_period()?;
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    /// The same sine on both inputs, `duration_each` seconds per frequency.
    SinusoidSweep { frequencies: Vec<f64>, amplitude: f64, duration_each: f64 },
    /// Every pair of the level grid, each held for `hold` seconds.
    Steps { levels: Vec<f64>, hold: f64 },
}

/// Piecewise-constant set points at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSchedule {
    pub dt: f64,
    pub inputs: Vec<Input>,
}

impl InputSchedule {
    pub fn duration(&self) -> f64 {
        self.inputs.len() as f64 * self.dt
    }
}

pub fn generate_excitation(kind: &Excitation, dt: f64, polytope: &InputPolytope) -> Result<InputSchedule> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sample period must be positive, got {dt}")));
    }
    let mut inputs = Vec::new();
    match kind {
        Excitation::SinusoidSweep { frequencies, amplitude, duration_each } => {
            if frequencies.is_empty() || *duration_each <= 0.0 {
                return Err(Error::InvalidParameter("sweep needs frequencies and a positive duration".into()));
            }
            let per = (duration_each / dt).round() as usize;
            // worst case of the sine is its crest on both axes at once
            for corner in [Vector2::new(*amplitude, *amplitude), Vector2::new(-*amplitude, -*amplitude)] {
                if !polytope.contains(&corner, 1e-12) {
                    return Err(Error::Infeasible(corner.x, corner.y));
                }
            }
            for &f in frequencies {
                if !(f.is_finite() && f > 0.0) {
                    return Err(Error::InvalidParameter(format!("bad sweep frequency {f}")));
                }
                for i in 0..per {
                    let s = amplitude * (2.0 * std::f64::consts::PI * f * i as f64 * dt).sin();
                    inputs.push(Vector2::new(s, s));
                }
            }
        }
        Excitation::Steps { levels, hold } => {
            if levels.is_empty() || *hold <= 0.0 {
                return Err(Error::InvalidParameter("step grid needs levels and a positive hold".into()));
            }
            let per = (hold / dt).round() as usize;
            for (i, &a) in levels.iter().enumerate() {
                // serpentine order keeps consecutive steps short on one axis
                let row: Box<dyn Iterator<Item = &f64>> =
                    if i % 2 == 0 { Box::new(levels.iter()) } else { Box::new(levels.iter().rev()) };
                for &b in row {
                    let u = Vector2::new(a, b);
                    if !polytope.contains(&u, 1e-12) {
                        return Err(Error::Infeasible(a, b));
                    }
                    inputs.extend(std::iter::repeat_n(u, per));
                }
            }
        }
    }
    Ok(InputSchedule { dt, inputs })
}

/// Runs a schedule on the plant, logging at the schedule period with the
/// plant's Gaussian measurement noise.
pub fn simulate_experiment(schedule: &InputSchedule, plant: &TruePlantConfig, seed: u64) -> Result<ExperimentLog> {
    let plant_model = TruePlant::new(*plant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle_noise = Normal::new(0.0, plant.noise_std_angle).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let pressure_noise =
        Normal::new(0.0, plant.noise_std_pressure).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut x = ArmState::zeros();
    let mut rows = Vec::with_capacity(schedule.inputs.len());
    for (k, u) in schedule.inputs.iter().enumerate() {
        let t = k as f64 * schedule.dt;
        rows.push(LogRow {
            t,
            alpha: x[ALPHA] + angle_noise.sample(&mut rng),
            beta: x[BETA] + angle_noise.sample(&mut rng),
            dp_alpha: x[DP_ALPHA] + pressure_noise.sample(&mut rng),
            dp_beta: x[DP_BETA] + pressure_noise.sample(&mut rng),
            dp_alpha_sp: u.x,
            dp_beta_sp: u.y,
        });
        x = plant_model.step(&x, u, t, schedule.dt);
    }
    Ok(ExperimentLog { rows })
}

/// Local polynomial smoother: odd `window` samples, polynomial `degree`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffSettings {
    pub window: usize,
    pub degree: usize,
}

impl Default for DiffSettings {
    fn default() -> Self {
        Self { window: 25, degree: 5 }
    }
}

/// Convolution weights for value, first and second derivative at the
/// window center.
#[derive(Debug, Clone)]
pub struct PolyFilter {
    pub half: usize,
    pub value: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl PolyFilter {
    pub fn new(settings: DiffSettings, dt: f64) -> Result<Self> {
        let DiffSettings { window, degree } = settings;
        if window % 2 == 0 || window < 3 || degree < 2 || degree >= window {
            return Err(Error::InvalidParameter(format!(
                "need odd window >= 3 and 2 <= degree < window, got window {window}, degree {degree}"
            )));
        }
        let half = window / 2;
        // fit in the scaled abscissa s = j / half to keep the Vandermonde tame
        let v = DMatrix::from_fn(window, degree + 1, |r, c| ((r as f64 - half as f64) / half as f64).powi(c as i32));
        let pinv = v.pseudo_inverse(1e-14).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let scale = half as f64 * dt;
        Ok(Self {
            half,
            value: pinv.row(0).iter().copied().collect(),
            first: pinv.row(1).iter().map(|w| w / scale).collect(),
            second: pinv.row(2).iter().map(|w| 2.0 * w / (scale * scale)).collect(),
        })
    }

    /// Applies `weights` at every interior sample; the ends stay NaN.
    pub fn apply(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![f64::NAN; x.len()];
        if x.len() < weights.len() {
            return out;
        }
        for (i, slot) in out.iter_mut().enumerate().take(x.len() - self.half).skip(self.half) {
            *slot = weights.iter().zip(&x[i - self.half..=i + self.half]).map(|(w, v)| w * v).sum();
        }
        out
    }
}

/// Smoothed signals and derivatives at the sample times. `valid` is false at
/// the ends and near set-point discontinuities.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiatedLog {
    pub t: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_dot: Vec<f64>,
    pub alpha_ddot: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_dot: Vec<f64>,
    pub beta_ddot: Vec<f64>,
    pub dp_alpha: Vec<f64>,
    pub dp_alpha_dot: Vec<f64>,
    pub dp_beta: Vec<f64>,
    pub dp_beta_dot: Vec<f64>,
    pub dp_alpha_sp: Vec<f64>,
    pub dp_beta_sp: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DifferentiatedLog {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Indices `k` where the set point jumps between samples `k - 1` and `k`.
/// A jump is an increment far above the typical one, so smooth sweeps
/// produce none.
pub fn setpoint_jumps(sp: &[f64]) -> Vec<usize> {
    if sp.len() < 2 {
        return Vec::new();
    }
    let mut inc: Vec<f64> = sp.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let incs = inc.clone();
    inc.sort_by(f64::total_cmp);
    let median = inc[inc.len() / 2];
    let threshold = (10.0 * median).max(1e-9);
    incs.iter().enumerate().filter(|(_, d)| **d > threshold).map(|(i, _)| i + 1).collect()
}

pub fn differentiate(log: &ExperimentLog, settings: DiffSettings) -> Result<DifferentiatedLog> {
    let need = MIN_SAMPLES.max(settings.window);
    if log.len() < need {
        return Err(Error::LogTooShort { got: log.len(), need });
    }
    let dt = log.sample_period()?;
    let f = PolyFilter::new(settings, dt)?;
    let col = |g: fn(&LogRow) -> f64| log.rows.iter().map(g).collect::<Vec<_>>();
    let (alpha, beta) = (col(|r| r.alpha), col(|r| r.beta));
    let (pa, pb) = (col(|r| r.dp_alpha), col(|r| r.dp_beta));
    let (ua, ub) = (col(|r| r.dp_alpha_sp), col(|r| r.dp_beta_sp));

    let n = log.len();
    let mut valid = vec![true; n];
    for v in valid.iter_mut().take(f.half) {
        *v = false;
    }
    for v in valid.iter_mut().skip(n - f.half) {
        *v = false;
    }
    for jump in setpoint_jumps(&ua).into_iter().chain(setpoint_jumps(&ub)) {
        // any window touching both sides of the jump sees the kink
        let lo = jump.saturating_sub(f.half + 1);
        let hi = (jump + f.half + 1).min(n);
        for v in &mut valid[lo..hi] {
            *v = false;
        }
    }

    Ok(DifferentiatedLog {
        t: col(|r| r.t),
        alpha: f.apply(&f.value, &alpha),
        alpha_dot: f.apply(&f.first, &alpha),
        alpha_ddot: f.apply(&f.second, &alpha),
        beta: f.apply(&f.value, &beta),
        beta_dot: f.apply(&f.first, &beta),
        beta_ddot: f.apply(&f.second, &beta),
        dp_alpha: f.apply(&f.value, &pa),
        dp_alpha_dot: f.apply(&f.first, &pa),
        dp_beta: f.apply(&f.value, &pb),
        dp_beta_dot: f.apply(&f.first, &pb),
        dp_alpha_sp: f.apply(&f.value, &ua),
        dp_beta_sp: f.apply(&f.value, &ub),
        valid,
    })
}

/// Outcome of one of the four regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub axis: &'static str,
    pub equation: &'static str,
    pub coefficients: Vec<f64>,
    /// RMS of the residual in physical units.
    pub residual_rms: f64,
    /// Condition number of the regressor matrix that was decomposed.
    pub condition: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: ModelParams,
    pub fits: Vec<RegressionFit>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn residual_norm(&self) -> f64 {
        self.fits.iter().map(|f| f.residual_rms * f.residual_rms).sum::<f64>().sqrt()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Least squares `y ~ X theta` by SVD, optionally with every column and the
/// target scaled into `[-1, 1]` first.
pub fn least_squares(
    columns: &[Vec<f64>],
    y: &[f64],
    normalize: bool,
    axis: &'static str,
    equation: &'static str,
) -> Result<RegressionFit> {
    let rows = y.len();
    let p = columns.len();
    if rows < p {
        return Err(Error::LogTooShort { got: rows, need: p });
    }
    let col_scale: Vec<f64> = columns
        .iter()
        .map(|c| if normalize { max_abs(c).max(f64::MIN_POSITIVE) } else { 1.0 })
        .collect();
    let y_scale = if normalize { max_abs(y).max(f64::MIN_POSITIVE) } else { 1.0 };
    let x = DMatrix::from_fn(rows, p, |r, c| columns[c][r] / col_scale[c]);
    let yv = DVector::from_iterator(rows, y.iter().map(|v| v / y_scale));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOLERANCE * smax {
        return Err(Error::RankDeficient { axis, equation });
    }
    let theta = svd.solve(&yv, 0.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let resid = (&x * &theta - &yv) * y_scale;
    let coefficients = (0..p).map(|c| theta[c] * y_scale / col_scale[c]).collect();
    Ok(RegressionFit {
        axis,
        equation,
        coefficients,
        residual_rms: (resid.norm_squared() / rows as f64).sqrt(),
        condition: smax / smin,
        samples: rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub normalize: bool,
    pub condition_warning: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { normalize: true, condition_warning: CONDITION_WARNING }
    }
}

struct AxisData<'a> {
    name: &'static str,
    angle: &'a [f64],
    rate: &'a [f64],
    accel: &'a [f64],
    dp: &'a [f64],
    dp_dot: &'a [f64],
    sp: &'a [f64],
}

fn axis_data<'a>(log: &'a DifferentiatedLog, alpha: bool) -> AxisData<'a> {
    if alpha {
        AxisData {
            name: "alpha",
            angle: &log.alpha,
            rate: &log.alpha_dot,
            accel: &log.alpha_ddot,
            dp: &log.dp_alpha,
            dp_dot: &log.dp_alpha_dot,
            sp: &log.dp_alpha_sp,
        }
    } else {
        AxisData {
            name: "beta",
            angle: &log.beta,
            rate: &log.beta_dot,
            accel: &log.beta_ddot,
            dp: &log.dp_beta,
            dp_dot: &log.dp_beta_dot,
            sp: &log.dp_beta_sp,
        }
    }
}

fn pick(valid: &[bool], v: &[f64]) -> Vec<f64> {
    v.iter().zip(valid).filter(|(_, ok)| **ok).map(|(x, _)| *x).collect()
}

/// `angle_ddot = -k angle - d rate + h dp`.
fn fit_arm(log: &DifferentiatedLog, alpha: bool, opts: &FitOptions) -> Result<RegressionFit> {
    let a = axis_data(log, alpha);
    let cols = vec![pick(&log.valid, a.angle), pick(&log.valid, a.rate), pick(&log.valid, a.dp)];
    least_squares(&cols, &pick(&log.valid, a.accel), opts.normalize, a.name, "arm")
}

/// `dp_dot = c rate + (sp - dp) / tau`.
fn fit_pressure(log: &DifferentiatedLog, alpha: bool, opts: &FitOptions) -> Result<RegressionFit> {
    let a = axis_data(log, alpha);
    let drive: Vec<f64> = a.sp.iter().zip(a.dp).map(|(s, p)| s - p).collect();
    let cols = vec![pick(&log.valid, a.rate), pick(&log.valid, &drive)];
    least_squares(&cols, &pick(&log.valid, a.dp_dot), opts.normalize, a.name, "pressure")
}

/// Fits the arm equations on `arm_log` and the pressure equations on
/// `pressure_log`; the two may be the same log.
pub fn fit_model_split(
    arm_log: &DifferentiatedLog,
    pressure_log: &DifferentiatedLog,
    opts: &FitOptions,
) -> Result<FitReport> {
    let fits = vec![
        fit_arm(arm_log, true, opts)?,
        fit_arm(arm_log, false, opts)?,
        fit_pressure(pressure_log, true, opts)?,
        fit_pressure(pressure_log, false, opts)?,
    ];
    let mut warnings = Vec::new();
    for f in &fits {
        if f.condition > opts.condition_warning {
            let msg = format!(
                "{} equation, {} axis: regressor condition number {:.3e}; estimates may be unreliable",
                f.equation, f.axis, f.condition
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let tau = |f: &RegressionFit| 1.0 / f.coefficients[1];
    let params = ModelParams {
        k_alpha: -fits[0].coefficients[0],
        d_alpha: -fits[0].coefficients[1],
        h_alpha: fits[0].coefficients[2],
        k_beta: -fits[1].coefficients[0],
        d_beta: -fits[1].coefficients[1],
        h_beta: fits[1].coefficients[2],
        c_alpha: fits[2].coefficients[0],
        tau_alpha: tau(&fits[2]),
        c_beta: fits[3].coefficients[0],
        tau_beta: tau(&fits[3]),
    };
    Ok(FitReport { params, fits, warnings })
}

pub fn fit_model(log: &DifferentiatedLog, opts: &FitOptions) -> Result<FitReport> {
    fit_model_split(log, log, opts)
}

/// Everything needed to reproduce one identification run.
#[derive(Debug, Clone, PartialEq)]
pub struct SysidSettings {
    pub sample_period: f64,
    pub sweep_frequencies: Vec<f64>,
    pub sweep_amplitude: f64,
    pub sweep_duration: f64,
    pub step_levels: Vec<f64>,
    pub step_hold: f64,
    pub diff: DiffSettings,
}

impl Default for SysidSettings {
    fn default() -> Self {
        Self {
            sample_period: 0.005,
            sweep_frequencies: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            sweep_amplitude: 0.3,
            sweep_duration: 10.0,
            step_levels: vec![-0.4, -0.2, 0.0, 0.2, 0.4],
            step_hold: 1.0,
            diff: DiffSettings::default(),
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::InvalidParameter(format!("bad list entry `{p}`: {e}"))))
        .collect()
}

fn format_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl KvSection for SysidSettings {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("sysid.sample_period", &mut self.sample_period)?;
        if let Some(s) = cfg.get::<String>("sysid.sweep_frequencies")? {
            self.sweep_frequencies = parse_list(&s)?;
        }
        cfg.set("sysid.sweep_amplitude", &mut self.sweep_amplitude)?;
        cfg.set("sysid.sweep_duration", &mut self.sweep_duration)?;
        if let Some(s) = cfg.get::<String>("sysid.step_levels")? {
            self.step_levels = parse_list(&s)?;
        }
        cfg.set("sysid.step_hold", &mut self.step_hold)?;
        cfg.set("sysid.window", &mut self.diff.window)?;
        cfg.set("sysid.degree", &mut self.diff.degree)?;
        Ok(())
    }

    fn write(&self, out: &mut KvWriter) {
        out.put("sysid.sample_period", self.sample_period)
            .put("sysid.sweep_frequencies", format_list(&self.sweep_frequencies))
            .put("sysid.sweep_amplitude", self.sweep_amplitude)
            .put("sysid.sweep_duration", self.sweep_duration)
            .put("sysid.step_levels", format_list(&self.step_levels))
            .put("sysid.step_hold", self.step_hold)
            .put("sysid.window", self.diff.window)
            .put("sysid.degree", self.diff.degree);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationRun {
    pub sweep_log: ExperimentLog,
    pub step_log: ExperimentLog,
    pub report: FitReport,
}

/// Sweep for the arm equations, steps for the pressure equations.
pub fn identify(
    plant: &TruePlantConfig,
    settings: &SysidSettings,
    polytope: &InputPolytope,
    seed: u64,
) -> Result<IdentificationRun> {
    let sweep = generate_excitation(
        &Excitation::SinusoidSweep {
            frequencies: settings.sweep_frequencies.clone(),
            amplitude: settings.sweep_amplitude,
            duration_each: settings.sweep_duration,
        },
        settings.sample_period,
        polytope,
    )?;
    let steps = generate_excitation(
        &Excitation::Steps { levels: settings.step_levels.clone(), hold: settings.step_hold },
        settings.sample_period,
        polytope,
    )?;
    let sweep_log = simulate_experiment(&sweep, plant, seed)?;
    let step_log = simulate_experiment(&steps, plant, seed.wrapping_add(1))?;
    let report = fit_model_split(
        &differentiate(&sweep_log, settings.diff)?,
        &differentiate(&step_log, settings.diff)?,
        &FitOptions::default(),
    )?;
    Ok(IdentificationRun { sweep_log, step_log, report })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::build_input_polytope;
    use crate::{P_BAR, P_MAX, P_MIN};

    const DT: f64 = 0.005;

    fn polytope() -> InputPolytope {
        build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap()
    }

    fn synthetic(f: impl Fn(f64) -> f64, n: usize) -> ExperimentLog {
        ExperimentLog {
            rows: (0..n)
                .map(|k| {
                    let t = k as f64 * DT;
                    LogRow { t, alpha: f(t), beta: 0.0, dp_alpha: f(t), dp_beta: 0.0, dp_alpha_sp: 0.0, dp_beta_sp: 0.0 }
                })
                .collect(),
        }
    }

    #[test]
    fn sweep_duration_bookkeeping() {
        let s = generate_excitation(
            &Excitation::SinusoidSweep { frequencies: vec![0.5, 1.0, 2.0, 5.0], amplitude: 0.3, duration_each: 10.0 },
            DT,
            &polytope(),
        )
        .unwrap();
        assert!((s.duration() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn schedules_are_feasible() {
        let poly = polytope();
        let st = SysidSettings::default();
        for kind in [
            Excitation::SinusoidSweep {
                frequencies: st.sweep_frequencies.clone(),
                amplitude: st.sweep_amplitude,
                duration_each: 1.0,
            },
            Excitation::Steps { levels: st.step_levels.clone(), hold: 0.1 },
        ] {
            let s = generate_excitation(&kind, DT, &poly).unwrap();
            assert!(s.inputs.iter().all(|u| poly.contains(u, 1e-12)));
        }
    }

    #[test]
    fn step_grid_has_both_signs() {
        let s = generate_excitation(&Excitation::Steps { levels: vec![-0.3, 0.0, 0.3], hold: 0.1 }, DT, &polytope())
            .unwrap();
        for axis in 0..2 {
            assert!(s.inputs.iter().any(|u| u[axis] > 0.0));
            assert!(s.inputs.iter().any(|u| u[axis] < 0.0));
        }
    }

    #[test]
    fn infeasible_amplitudes_rejected() {
        let poly = polytope();
        let r = generate_excitation(&Excitation::Steps { levels: vec![-2.0, 2.0], hold: 0.1 }, DT, &poly);
        assert!(matches!(r, Err(Error::Infeasible(..))));
        let r = generate_excitation(
            &Excitation::SinusoidSweep { frequencies: vec![1.0], amplitude: 1.5, duration_each: 1.0 },
            DT,
            &poly,
        );
        assert!(matches!(r, Err(Error::Infeasible(..))));
    }

    #[test]
    fn sine_derivative() {
        let log = synthetic(|t| (2.0 * std::f64::consts::PI * t).sin(), 400);
        let d = differentiate(&log, DiffSettings::default()).unwrap();
        for i in 0..log.len() {
            if d.valid[i] {
                let want = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * d.t[i]).cos();
                assert!((d.alpha_dot[i] - want).abs() < 1e-3);
            }
        }
        assert!(d.valid_count() > 300);
    }

    #[test]
    fn constant_and_quadratic() {
        let d = differentiate(&synthetic(|_| 0.7, 100), DiffSettings::default()).unwrap();
        for i in (0..100).filter(|i| d.valid[*i]) {
            assert!(d.alpha_dot[i].abs() < 1e-9 && d.alpha_ddot[i].abs() < 1e-7);
        }
        let d = differentiate(&synthetic(|t| 3.0 * t * t - t + 2.0, 100), DiffSettings::default()).unwrap();
        for i in (0..100).filter(|i| d.valid[*i]) {
            assert!((d.alpha_ddot[i] - 6.0).abs() < 1e-6, "{}", d.alpha_ddot[i]);
            assert!((d.alpha_dot[i] - (6.0 * d.t[i] - 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn too_short_log() {
        assert!(matches!(
            differentiate(&synthetic(|t| t, 9), DiffSettings::default()),
            Err(Error::LogTooShort { .. })
        ));
    }

    #[test]
    fn jumps_exclude_their_neighbourhood() {
        let mut log = synthetic(|_| 0.0, 200);
        for r in log.rows.iter_mut().skip(100) {
            r.dp_beta_sp = 0.2;
        }
        assert_eq!(setpoint_jumps(&log.rows.iter().map(|r| r.dp_beta_sp).collect::<Vec<_>>()), vec![100]);
        let d = differentiate(&log, DiffSettings::default()).unwrap();
        assert!((100 - 13..100 + 13).all(|i| !d.valid[i]));
        assert!(d.valid[50] && d.valid[150]);
    }

    #[test]
    fn non_uniform_log_rejected() {
        let mut log = synthetic(|t| t, 50);
        log.rows[20].t += 1e-3;
        assert!(differentiate(&log, DiffSettings::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let log = synthetic(|t| t.sin(), 20);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,alpha,beta,dp_alpha,dp_beta,dp_alpha_sp,dp_beta_sp\n"));
        assert_eq!(ExperimentLog::read_csv(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn rank_deficient_regression_names_axis() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = least_squares(&[x.clone(), x.iter().map(|v| 2.0 * v).collect()], &x, true, "beta", "arm");
        assert!(matches!(r, Err(Error::RankDeficient { axis: "beta", equation: "arm" })));
    }
}
