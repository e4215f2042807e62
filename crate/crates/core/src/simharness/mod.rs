//! Closed-loop scenarios: the mismatched plant driven by the disturbance
//! observer and MPC, for reference tracking and for ball catching.

mod catch;
mod output;
mod reference;

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::allocation::{build_input_polytope, InputPolytope};
use crate::ball::BallEkfConfig;
use crate::config::{KvConfig, KvSection, KvWriter};
use crate::dynamics::{
    build_continuous, discretize, ArmState, Input, TruePlant, TruePlantConfig, ALPHA, ALPHA_DOT, BETA, BETA_DOT,
    DP_ALPHA, DP_BETA,
};
use crate::error::{Error, Result};
use crate::estimation::{AugmentedModel, DisturbanceEstimate, DisturbanceObserver, NoiseLevels};
use crate::mpc::{ControllerMode, MpcConfig, MpcController, WeightSpec};
use crate::sphere::Angles;
use crate::sysid::SysidSettings;
use crate::{CONTROL_PERIOD, P_BAR, P_MAX, P_MIN, SENSOR_PERIOD};

pub use catch::{
    classify_throw, run_catch, run_catch_batch, run_throw, simulate_ball, throw_spec, wind_gust_profile, BallFlight, CatchBatch,
    CatchConfig, CatchOutcome, CatchRecord, CatchStatus, ExclusionReason, PredictionSample, ThrowSpec, WindGust,
};
pub use output::{
    gnuplot_script, write_catch_records, write_catch_summary, write_fit_report, write_metrics, write_prediction_trace,
    write_step_log, write_timing,
};
pub use reference::{generate, step_reference, ReferenceKind, ReferenceTrajectory, StepPlan, SETTLE_TIME};

/// Sensor ticks per control period.
pub const TICKS_PER_CONTROL: usize = 4;

/// Everything that defines a reproducible run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plant: TruePlantConfig,
    pub mode: ControllerMode,
    pub reference: ReferenceKind,
    pub duration: f64,
    pub seed: u64,
    pub horizon: usize,
    pub weights: WeightSpec,
    pub kf: NoiseLevels,
    pub steps: StepPlan,
    /// Leading time excluded from the RMSE.
    pub transient: f64,
    pub catch: CatchConfig,
    pub wind: WindGust,
    pub ekf: BallEkfConfig,
    pub sysid: SysidSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            plant: TruePlantConfig::default(),
            mode: ControllerMode::OffsetFree,
            reference: ReferenceKind::Mixed,
            duration: 60.0,
            seed: 1,
            horizon: 50,
            weights: WeightSpec::default(),
            kf: NoiseLevels::default(),
            steps: StepPlan::default(),
            transient: 0.0,
            catch: CatchConfig::default(),
            wind: WindGust::default(),
            ekf: BallEkfConfig::default(),
            sysid: SysidSettings::default(),
        }
    }
}

fn parse_angle_list(s: &str) -> Result<Vec<Angles>> {
    s.split(';')
        .map(|pair| {
            let v: Vec<f64> = pair
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("bad angle pair `{pair}`: {e}")))?;
            match v[..] {
                [a, b] => Ok(Angles::from_degrees(a, b)),
                _ => Err(Error::InvalidParameter(format!("expected `alpha,beta` in degrees, got `{pair}`"))),
            }
        })
        .collect()
}

fn format_angle_list(v: &[Angles]) -> String {
    v.iter().map(|a| format!("{},{}", a.alpha.to_degrees(), a.beta.to_degrees())).collect::<Vec<_>>().join(";")
}

impl KvSection for Scenario {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        self.plant.apply(cfg)?;
        if let Some(m) = cfg.get::<String>("scenario.mode")? {
            self.mode = m.parse()?;
        }
        if let Some(r) = cfg.get::<String>("scenario.reference")? {
            self.reference = r.parse()?;
        }
        cfg.set("scenario.duration", &mut self.duration)?;
        cfg.set("scenario.seed", &mut self.seed)?;
        cfg.set("scenario.transient", &mut self.transient)?;
        cfg.set("mpc.horizon", &mut self.horizon)?;
        self.weights.apply(cfg)?;
        self.kf.apply(cfg)?;
        if let Some(s) = cfg.get::<String>("step.targets")? {
            self.steps.targets = parse_angle_list(&s)?;
        }
        cfg.set("step.hold", &mut self.steps.hold)?;
        cfg.set("step.start", &mut self.steps.start)?;
        self.catch.apply(cfg)?;
        self.wind.apply(cfg)?;
        self.ekf.apply(cfg)?;
        self.sysid.apply(cfg)?;
        self.validate()
    }

    fn write(&self, out: &mut KvWriter) {
        out.comment("scenario");
        out.put("scenario.mode", self.mode)
            .put("scenario.reference", self.reference)
            .put("scenario.duration", self.duration)
            .put("scenario.seed", self.seed)
            .put("scenario.transient", self.transient)
            .put("mpc.horizon", self.horizon);
        out.comment("plant: linear model plus mismatch");
        self.plant.write(out);
        out.comment("controller");
        self.weights.write(out);
        self.kf.write(out);
        out.comment("step references, angles in degrees");
        out.put("step.targets", format_angle_list(&self.steps.targets))
            .put("step.hold", self.steps.hold)
            .put("step.start", self.steps.start);
        out.comment("ball catching");
        self.catch.write(out);
        self.wind.write(out);
        self.ekf.write(out);
        out.comment("system identification");
        self.sysid.write(out);
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidParameter("scenario.duration must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("mpc.horizon must be at least 1".into()));
        }
        if self.transient < 0.0 {
            return Err(Error::InvalidParameter("scenario.transient must be nonnegative".into()));
        }
        Ok(())
    }

    /// Defaults overridden by a config text; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let cfg = KvConfig::parse(text)?;
        let mut s = Self::default();
        s.apply(&cfg)?;
        cfg.ensure_consumed()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::default();
        self.write(&mut w);
        w.finish()
    }

    pub fn polytope(&self) -> Result<InputPolytope> {
        build_input_polytope(P_MIN, P_MAX, P_BAR)
    }

    pub fn with_mode(&self, mode: ControllerMode) -> Self {
        Self { mode, ..self.clone() }
    }
}

/// Solver bookkeeping that is a pure function of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub steps: usize,
    pub fallbacks: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

impl SolverStats {
    pub fn mean_iterations(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.steps as f64
        }
    }

    pub fn merge(&mut self, other: &SolverStats) {
        self.steps += other.steps;
        self.fallbacks += other.fallbacks;
        self.total_iterations += other.total_iterations;
        self.max_iterations = self.max_iterations.max(other.max_iterations);
    }
}

/// Wall-clock solve times; kept apart from the deterministic metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingStats {
    pub solves: usize,
    pub total: Duration,
    pub max: Duration,
    /// Solves slower than the control period.
    pub over_budget: usize,
}

impl TimingStats {
    pub fn record(&mut self, d: Duration) {
        self.solves += 1;
        self.total += d;
        self.max = self.max.max(d);
        if d.as_secs_f64() > CONTROL_PERIOD {
            self.over_budget += 1;
        }
    }

    pub fn mean(&self) -> Duration {
        if self.solves == 0 {
            Duration::ZERO
        } else {
            self.total / self.solves as u32
        }
    }

    pub fn merge(&mut self, other: &TimingStats) {
        self.solves += other.solves;
        self.total += other.total;
        self.max = self.max.max(other.max);
        self.over_budget += other.over_budget;
    }
}

/// Mean tracking error and estimated disturbance over a steady interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyWindow {
    pub t0: f64,
    pub t1: f64,
    /// Signed `angle - reference`, rad.
    pub offset: [f64; 2],
    /// Mean disturbance estimate on the two acceleration channels.
    pub disturbance: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rmse_alpha: f64,
    pub rmse_beta: f64,
    pub steady: Vec<SteadyWindow>,
    pub catch: Option<CatchOutcome>,
    pub solver: SolverStats,
}

impl RunMetrics {
    /// Mean of the two per-axis RMSEs.
    pub fn rmse(&self) -> f64 {
        0.5 * (self.rmse_alpha + self.rmse_beta)
    }

    /// Largest absolute steady-state offset over all windows and axes.
    pub fn max_offset(&self) -> Option<f64> {
        self.steady.iter().flat_map(|w| w.offset).map(f64::abs).reduce(f64::max)
    }
}

/// One control step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: ArmState,
    pub measured: ArmState,
    pub reference: Angles,
    pub applied: Input,
    pub x_hat: ArmState,
    pub d_hat: Vector6<f64>,
    pub iterations: usize,
    pub fallback: bool,
}

/// Plant, sensors, observer and controller advancing in 5 ms ticks.
#[derive(Debug, Clone)]
pub struct ArmLoop {
    plant: TruePlant,
    x: ArmState,
    t: f64,
    controller: MpcController,
    augmented: AugmentedModel,
    observer: Option<DisturbanceObserver>,
    u: Input,
    rng: ChaCha8Rng,
    angle_noise: Normal<f64>,
    pressure_noise: Normal<f64>,
    measured: ArmState,
    prev_angles: Option<(f64, f64)>,
    pub stats: SolverStats,
    pub timing: TimingStats,
}

impl ArmLoop {
    pub fn new(scn: &Scenario, mode: ControllerMode, noise_rng: ChaCha8Rng) -> Result<Self> {
        scn.validate()?;
        let model = discretize(&build_continuous(&scn.plant.base)?, CONTROL_PERIOD)?;
        let mut cfg = MpcConfig::from_weights(&scn.weights, scn.horizon, CONTROL_PERIOD, Some(scn.polytope()?));
        cfg.mode = mode;
        let augmented = AugmentedModel::from_levels(&model, &scn.kf)?;
        let controller = MpcController::new(model, cfg)?;
        let bad = |e: rand_distr::NormalError| Error::InvalidParameter(e.to_string());
        Ok(Self {
            plant: TruePlant::new(scn.plant)?,
            x: ArmState::zeros(),
            t: 0.0,
            controller,
            augmented,
            observer: None,
            u: Input::zeros(),
            rng: noise_rng,
            angle_noise: Normal::new(0.0, scn.plant.noise_std_angle).map_err(bad)?,
            pressure_noise: Normal::new(0.0, scn.plant.noise_std_pressure).map_err(bad)?,
            measured: ArmState::zeros(),
            prev_angles: None,
            stats: SolverStats::default(),
            timing: TimingStats::default(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &ArmState {
        &self.x
    }

    pub fn measured(&self) -> &ArmState {
        &self.measured
    }

    pub fn measured_angles(&self) -> Angles {
        Angles::new(self.measured[ALPHA], self.measured[BETA])
    }

    pub fn true_angles(&self) -> Angles {
        Angles::new(self.x[ALPHA], self.x[BETA])
    }

    /// Samples the sensors; rates come from differencing consecutive noisy angles.
    pub fn sense(&mut self) {
        let a = self.x[ALPHA] + self.angle_noise.sample(&mut self.rng);
        let b = self.x[BETA] + self.angle_noise.sample(&mut self.rng);
        let pa = self.x[DP_ALPHA] + self.pressure_noise.sample(&mut self.rng);
        let pb = self.x[DP_BETA] + self.pressure_noise.sample(&mut self.rng);
        let (prev_a, prev_b) = self.prev_angles.unwrap_or((a, b));
        self.measured = ArmState::from([a, (a - prev_a) / SENSOR_PERIOD, pa, b, (b - prev_b) / SENSOR_PERIOD, pb]);
        self.prev_angles = Some((a, b));
    }

    /// Observer update and one MPC solve on the latest measurement.
    pub fn control(&mut self, refs: &[Angles]) -> Result<StepRecord> {
        let z = self.measured;
        let est = match &mut self.observer {
            Some(obs) => *obs.update(&self.u, &z),
            None => {
                let obs = DisturbanceObserver::new(self.augmented.clone(), DisturbanceEstimate::from_measurement(&z));
                self.observer.insert(obs).estimate().to_owned()
            }
        };
        let started = Instant::now();
        let out = self.controller.control_step(&z, &self.u, &est.d_hat, refs)?;
        self.timing.record(started.elapsed());
        let iterations = out.solution.diagnostics.iterations;
        self.stats.steps += 1;
        self.stats.total_iterations += iterations;
        self.stats.max_iterations = self.stats.max_iterations.max(iterations);
        if out.fallback {
            self.stats.fallbacks += 1;
        }
        self.u = out.applied;
        Ok(StepRecord {
            t: self.t,
            state: self.x,
            measured: z,
            reference: refs[0],
            applied: self.u,
            x_hat: est.x_hat,
            d_hat: est.d_hat,
            iterations,
            fallback: out.fallback,
        })
    }

    /// Integrates the plant over one sensor period with the held input.
    pub fn advance(&mut self) {
        self.x = self.plant.step(&self.x, &self.u, self.t, SENSOR_PERIOD);
        self.t += SENSOR_PERIOD;
    }

    /// Plant state `dt` ahead without committing it.
    pub fn peek(&self, dt: f64) -> ArmState {
        if dt <= 0.0 {
            self.x
        } else {
            self.plant.step(&self.x, &self.u, self.t, dt)
        }
    }
}

/// Independent random streams of one run.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) const STREAM_REFERENCE: u64 = 0;
pub(crate) const STREAM_ARM_NOISE: u64 = 1;

/// Result of [`run_tracking`]: metrics, the per-step log and timings.
#[derive(Debug, Clone)]
pub struct TrackingRun {
    pub metrics: RunMetrics,
    pub log: Vec<StepRecord>,
    pub reference: ReferenceTrajectory,
    pub timing: TimingStats,
}

pub fn build_reference(scn: &Scenario) -> Result<ReferenceTrajectory> {
    match scn.reference {
        ReferenceKind::Step => step_reference(&scn.steps, CONTROL_PERIOD),
        ReferenceKind::BallCatch => {
            Err(Error::InvalidParameter("ball_catch scenarios run through run_catch".into()))
        }
        kind => generate(kind, scn.duration, CONTROL_PERIOD, &mut stream(scn.seed, STREAM_REFERENCE)),
    }
}

pub fn run_tracking(scn: &Scenario) -> Result<TrackingRun> {
    let reference = build_reference(scn)?;
    let mut arm = ArmLoop::new(scn, scn.mode, stream(scn.seed, STREAM_ARM_NOISE))?;
    let mut log = Vec::with_capacity(reference.len());
    arm.sense();
    for k in 0..reference.len() {
        log.push(arm.control(&reference.window(k, scn.horizon))?);
        for _ in 0..TICKS_PER_CONTROL {
            arm.advance();
            arm.sense();
        }
    }
    let preview = scn.horizon as f64 * CONTROL_PERIOD;
    let metrics = tracking_metrics(&log, &reference, scn.transient, preview, arm.stats);
    Ok(TrackingRun { metrics, log, reference, timing: arm.timing })
}

/// RMSE per axis after `transient`, plus steady-window statistics. Windows
/// followed by another step lose their last `preview` seconds, where the
/// controller already sees the next step coming.
pub fn tracking_metrics(
    log: &[StepRecord],
    reference: &ReferenceTrajectory,
    transient: f64,
    preview: f64,
    solver: SolverStats,
) -> RunMetrics {
    let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
    for r in log.iter().filter(|r| r.t >= transient - 1e-9) {
        sa += (r.state[ALPHA] - r.reference.alpha).powi(2);
        sb += (r.state[BETA] - r.reference.beta).powi(2);
        n += 1;
    }
    let n = n.max(1) as f64;
    let steady = reference
        .steady_windows
        .iter()
        .filter_map(|&(t0, t1)| {
            let t1 = if t1 < reference.duration() - 1e-9 { t1 - preview } else { t1 };
            let inside: Vec<&StepRecord> = log.iter().filter(|r| r.t >= t0 - 1e-9 && r.t < t1 - 1e-9).collect();
            if inside.is_empty() {
                return None;
            }
            let m = inside.len() as f64;
            let mean = |f: &dyn Fn(&StepRecord) -> f64| inside.iter().map(|r| f(r)).sum::<f64>() / m;
            Some(SteadyWindow {
                t0,
                t1,
                offset: [
                    mean(&|r| r.state[ALPHA] - r.reference.alpha),
                    mean(&|r| r.state[BETA] - r.reference.beta),
                ],
                disturbance: [mean(&|r| r.d_hat[ALPHA_DOT]), mean(&|r| r.d_hat[BETA_DOT])],
            })
        })
        .collect();
    RunMetrics { rmse_alpha: (sa / n).sqrt(), rmse_beta: (sb / n).sqrt(), steady, catch: None, solver }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelParams;

    fn short_step_scenario(mode: ControllerMode, plant: TruePlantConfig) -> Scenario {
        Scenario {
            plant,
            mode,
            reference: ReferenceKind::Step,
            steps: StepPlan { targets: vec![Angles::from_degrees(10.0, -5.0)], hold: 6.0, start: 0.2 },
            ..Default::default()
        }
    }

    #[test]
    fn perfect_model_tracks_constant_reference() {
        let plant = TruePlantConfig::nominal(ModelParams::default());
        let run = run_tracking(&short_step_scenario(ControllerMode::OffsetFree, plant)).unwrap();
        let offset = run.metrics.max_offset().unwrap();
        assert!(offset < 1e-3, "{offset}");
        assert_eq!(run.metrics.solver.fallbacks, 0);
    }

    #[test]
    fn identical_seeds_identical_metrics() {
        let scn = Scenario { duration: 3.0, ..Default::default() };
        let a = run_tracking(&scn).unwrap();
        let b = run_tracking(&scn).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn scenario_text_round_trip() {
        let scn = Scenario { seed: 77, mode: ControllerMode::Standard, ..Default::default() };
        let back = Scenario::from_kv(&scn.to_kv()).unwrap();
        assert_eq!(back.seed, 77);
        assert_eq!(back.mode, ControllerMode::Standard);
        assert_eq!(back.steps.targets.len(), scn.steps.targets.len());
        assert!(Scenario::from_kv("scenario.bogus = 1\n").is_err());
    }
}
