//! Ball-catching episodes: thrower, true ball flight with wind, the ball
//! EKF publishing intercept predictions, and the planner feeding the MPC.

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::ball::{
    ball_dynamics_with, predict_intercept, BallState, BallTracker, InterceptPrediction, Snapshot, Vector7,
    BALL_STEP,
};
use crate::config::{KvConfig, KvSection, KvWriter};
use crate::dynamics::{build_continuous, discretize, rk4, ALPHA, BETA};
use crate::error::{Error, Result};
use crate::mpc::ControllerMode;
use crate::planner::plan;
use crate::sphere::{angles_of, direction, Angles, ArmSphere};
use crate::tracking::TargetCalculator;
use crate::{CONTROL_PERIOD, SENSOR_PERIOD};

use super::{stream, ArmLoop, RunMetrics, Scenario, SolverStats, StepRecord, TimingStats, TICKS_PER_CONTROL};

/// Piecewise-constant `+x` acceleration on the ball, starting at release.
#[derive(Debug, Clone, PartialEq)]
pub struct WindGust {
    /// Peak acceleration in m/s^2.
    pub magnitude: f64,
    /// Length of one constant piece.
    pub period: f64,
    /// Relative level of each piece, cycled; all in `[0, 1]`.
    pub pattern: Vec<f64>,
}

impl Default for WindGust {
    fn default() -> Self {
        Self { magnitude: 0.0, period: 0.1, pattern: vec![1.0, 0.6, 1.0, 0.8] }
    }
}

impl WindGust {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0 && self.period > 0.0)
            || self.pattern.is_empty()
            || self.pattern.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidParameter(
                "wind needs magnitude >= 0, period > 0 and a pattern within [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl KvSection for WindGust {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("wind.magnitude", &mut self.magnitude)?;
        cfg.set("wind.period", &mut self.period)?;
        if let Some(s) = cfg.get::<String>("wind.pattern")? {
            self.pattern = s
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("wind.pattern: {e}")))?;
        }
        self.validate()
    }

    fn write(&self, out: &mut KvWriter) {
        let pattern = self.pattern.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",");
        out.put("wind.magnitude", self.magnitude).put("wind.period", self.period).put("wind.pattern", pattern);
    }
}

/// Wind acceleration on the ball `t` seconds after release.
pub fn wind_gust_profile(gust: &WindGust, t: f64) -> Vector3<f64> {
    if gust.magnitude == 0.0 || t < 0.0 {
        return Vector3::zeros();
    }
    // the small offset keeps piece boundaries that land on a tick in the later piece
    let idx = ((t + 1e-9) / gust.period).floor() as usize % gust.pattern.len();
    Vector3::new(gust.magnitude * gust.pattern[idx], 0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatchConfig {
    pub throws: usize,
    /// Arm orientation held before the ball is detected.
    pub home: Angles,
    /// Time before release, lets the observer settle.
    pub warmup: f64,
    /// Ball measurements before release, held in the hand.
    pub pre_roll: f64,
    pub launch_distance: f64,
    /// Aim point ranges in degrees and flight time range in seconds.
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub flight_time: (f64, f64),
    /// Per-component launch velocity noise, m/s.
    pub aim_noise: f64,
    pub drag_range: (f64, f64),
    pub ball_noise: f64,
    pub net_radius: f64,
    /// Planner angular velocity, rad/s.
    pub omega_sp: f64,
    pub prediction_horizon: f64,
    pub sphere: ArmSphere,
}

impl Default for CatchConfig {
    fn default() -> Self {
        Self {
            throws: 200,
            home: Angles::from_degrees(20.0, 0.0),
            warmup: 2.0,
            pre_roll: 0.1,
            launch_distance: 2.0,
            alpha_range: (15.0, 45.0),
            beta_range: (-20.0, 20.0),
            flight_time: (0.35, 0.5),
            aim_noise: 0.05,
            drag_range: (0.01, 0.03),
            ball_noise: 1e-3,
            net_radius: 0.031,
            omega_sp: crate::planner::OMEGA_SP,
            prediction_horizon: 1.5,
            sphere: ArmSphere::default(),
        }
    }
}

impl KvSection for CatchConfig {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("catch.throws", &mut self.throws)?;
        let (mut ha, mut hb) = (self.home.alpha.to_degrees(), self.home.beta.to_degrees());
        cfg.set("catch.home_alpha", &mut ha)?;
        cfg.set("catch.home_beta", &mut hb)?;
        self.home = Angles::from_degrees(ha, hb);
        cfg.set("catch.warmup", &mut self.warmup)?;
        cfg.set("catch.pre_roll", &mut self.pre_roll)?;
        cfg.set("catch.launch_distance", &mut self.launch_distance)?;
        cfg.set("catch.alpha_min", &mut self.alpha_range.0)?;
        cfg.set("catch.alpha_max", &mut self.alpha_range.1)?;
        cfg.set("catch.beta_min", &mut self.beta_range.0)?;
        cfg.set("catch.beta_max", &mut self.beta_range.1)?;
        cfg.set("catch.flight_min", &mut self.flight_time.0)?;
        cfg.set("catch.flight_max", &mut self.flight_time.1)?;
        cfg.set("catch.aim_noise", &mut self.aim_noise)?;
        cfg.set("catch.drag_min", &mut self.drag_range.0)?;
        cfg.set("catch.drag_max", &mut self.drag_range.1)?;
        cfg.set("catch.ball_noise", &mut self.ball_noise)?;
        cfg.set("catch.net_radius", &mut self.net_radius)?;
        let mut omega = self.omega_sp.to_degrees();
        cfg.set("catch.omega_sp", &mut omega)?;
        self.omega_sp = omega.to_radians();
        cfg.set("catch.prediction_horizon", &mut self.prediction_horizon)?;
        cfg.set("catch.radius", &mut self.sphere.radius)?;
        self.validate()
    }

    fn write(&self, out: &mut KvWriter) {
        out.put("catch.throws", self.throws)
            .put("catch.home_alpha", self.home.alpha.to_degrees())
            .put("catch.home_beta", self.home.beta.to_degrees())
            .put("catch.warmup", self.warmup)
            .put("catch.pre_roll", self.pre_roll)
            .put("catch.launch_distance", self.launch_distance)
            .put("catch.alpha_min", self.alpha_range.0)
            .put("catch.alpha_max", self.alpha_range.1)
            .put("catch.beta_min", self.beta_range.0)
            .put("catch.beta_max", self.beta_range.1)
            .put("catch.flight_min", self.flight_time.0)
            .put("catch.flight_max", self.flight_time.1)
            .put("catch.aim_noise", self.aim_noise)
            .put("catch.drag_min", self.drag_range.0)
            .put("catch.drag_max", self.drag_range.1)
            .put("catch.ball_noise", self.ball_noise)
            .put("catch.net_radius", self.net_radius)
            .put("catch.omega_sp", self.omega_sp.to_degrees())
            .put("catch.prediction_horizon", self.prediction_horizon)
            .put("catch.radius", self.sphere.radius);
    }
}

impl CatchConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ordered(self.alpha_range) && ordered(self.beta_range) && ordered(self.flight_time) && ordered(self.drag_range))
        {
            return Err(Error::InvalidParameter("catch ranges must be finite with min <= max".into()));
        }
        if self.flight_time.0 <= 0.0
            || self.drag_range.0 < 0.0
            || self.aim_noise < 0.0
            || self.ball_noise < 0.0
            || self.net_radius <= 0.0
            || self.omega_sp <= 0.0
            || self.sphere.radius <= 0.0
            || self.launch_distance <= self.sphere.radius
            || self.warmup < self.pre_roll
        {
            return Err(Error::InvalidParameter("invalid catch configuration".into()));
        }
        self.home.check_chart()
    }

    fn launch_point(&self) -> Vector3<f64> {
        self.sphere.center + Vector3::new(0.0, -self.launch_distance, 0.0)
    }
}

/// Release conditions of one throw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrowSpec {
    pub launch: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub drag: f64,
    /// Angles of the point the thrower aimed at.
    pub aim: Angles,
}

impl ThrowSpec {
    /// Drag-free ballistic velocity reaching `target` after `flight` seconds.
    pub fn aimed(launch: Vector3<f64>, target: Vector3<f64>, flight: f64, drag: f64, aim: Angles) -> Self {
        let velocity = (target - launch - 0.5 * crate::ball::GRAVITY * flight * flight) / flight;
        Self { launch, velocity, drag, aim }
    }

    pub fn sample<R: Rng>(cfg: &CatchConfig, rng: &mut R) -> Self {
        let aim = Angles::from_degrees(
            rng.random_range(cfg.alpha_range.0..=cfg.alpha_range.1),
            rng.random_range(cfg.beta_range.0..=cfg.beta_range.1),
        );
        let flight = rng.random_range(cfg.flight_time.0..=cfg.flight_time.1);
        let drag = rng.random_range(cfg.drag_range.0..=cfg.drag_range.1);
        let mut spec = Self::aimed(cfg.launch_point(), cfg.sphere.tip(aim), flight, drag, aim);
        if cfg.aim_noise > 0.0 {
            let n = Normal::new(0.0, cfg.aim_noise).expect("aim noise is validated");
            spec.velocity += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        }
        spec
    }
}

/// True ball states every [`BALL_STEP`] from release, up to the crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct BallFlight {
    pub states: Vec<Vector7>,
    /// Time after release and position of the first inward sphere crossing.
    pub crossing: Option<(f64, Vector3<f64>)>,
}

impl BallFlight {
    pub fn position(&self, k: usize) -> Vector3<f64> {
        self.states[k.min(self.states.len() - 1)].fixed_rows::<3>(0).into_owned()
    }
}

fn true_ball_step(x: &Vector7, t: f64, dt: f64, wind: &WindGust) -> Vector7 {
    rk4(x, t, dt, |x, t| ball_dynamics_with(x, &wind_gust_profile(wind, t)))
}

pub fn simulate_ball(spec: &ThrowSpec, wind: &WindGust, sphere: &ArmSphere, max_time: f64) -> BallFlight {
    let dist = |x: &Vector7| (x.fixed_rows::<3>(0) - sphere.center).norm() - sphere.radius;
    let mut x = BallState::new(spec.launch, spec.velocity, spec.drag).to_vector();
    let mut states = vec![x];
    let steps = (max_time / BALL_STEP).ceil() as usize;
    if dist(&x) <= 0.0 {
        return BallFlight { states, crossing: None };
    }
    for k in 0..steps {
        let t = k as f64 * BALL_STEP;
        let next = true_ball_step(&x, t, BALL_STEP, wind);
        if dist(&next) <= 0.0 {
            let (mut lo, mut hi) = (0.0, BALL_STEP);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if dist(&true_ball_step(&x, t, mid, wind)) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 {
                    break;
                }
            }
            let tau = 0.5 * (lo + hi);
            let at = true_ball_step(&x, t, tau, wind);
            states.push(next);
            return BallFlight { states, crossing: Some((t + tau, at.fixed_rows::<3>(0).into_owned())) };
        }
        x = next;
        states.push(x);
    }
    BallFlight { states, crossing: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionReason {
    /// The ball never meets the arm sphere.
    NoIntercept,
    /// The crossing lies outside the angle chart.
    OutsideChart,
    /// Holding the tip at the crossing needs inputs outside the polytope.
    Unreachable,
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NoIntercept => "no_intercept",
            Self::OutsideChart => "outside_chart",
            Self::Unreachable => "unreachable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatchStatus {
    Success,
    Miss,
    Excluded(ExclusionReason),
}

impl std::fmt::Display for CatchStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Success => f.write_str("success"),
            Self::Miss => f.write_str("miss"),
            Self::Excluded(r) => write!(f, "excluded_{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatchOutcome {
    pub status: CatchStatus,
    /// Tip-to-ball distance in the net plane at the crossing, meters.
    pub miss_distance: Option<f64>,
    pub intercept: Option<Angles>,
    pub flight_time: Option<f64>,
    /// Distance between the last valid prediction and the true crossing.
    pub final_prediction_error: Option<f64>,
}

impl CatchOutcome {
    fn excluded(reason: ExclusionReason) -> Self {
        Self {
            status: CatchStatus::Excluded(reason),
            miss_distance: None,
            intercept: None,
            flight_time: None,
            final_prediction_error: None,
        }
    }
}

/// Sphere crossing classification used to drop uncatchable throws.
pub fn classify_throw(flight: &BallFlight, scn: &Scenario) -> Result<std::result::Result<Angles, ExclusionReason>> {
    let Some((_, point)) = flight.crossing else {
        return Ok(Err(ExclusionReason::NoIntercept));
    };
    let angles = angles_of(&(point - scn.catch.sphere.center));
    if !angles.in_chart() {
        return Ok(Err(ExclusionReason::OutsideChart));
    }
    let model = discretize(&build_continuous(&scn.plant.base)?, CONTROL_PERIOD)?;
    let target = TargetCalculator::new(&model).target(&angles, &Vector6::zeros());
    if !scn.polytope()?.contains(&target.u_bar, 1e-9) {
        return Ok(Err(ExclusionReason::Unreachable));
    }
    Ok(Ok(angles))
}

/// One entry of the prediction trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSample {
    /// Seconds after release.
    pub t: f64,
    pub prediction: InterceptPrediction,
}

#[derive(Debug, Clone)]
pub struct CatchRecord {
    pub index: usize,
    pub mode: ControllerMode,
    pub spec: ThrowSpec,
    pub outcome: CatchOutcome,
    pub solver: SolverStats,
    pub timing: TimingStats,
    pub trace: Vec<PredictionSample>,
    pub log: Vec<StepRecord>,
}

const STREAM_THROW_BASE: u64 = 1000;

/// Release conditions of throw `index`; shared by both controller modes.
pub fn throw_spec(scn: &Scenario, index: usize) -> ThrowSpec {
    ThrowSpec::sample(&scn.catch, &mut stream(scn.seed, STREAM_THROW_BASE + 3 * index as u64))
}

/// Runs one throw. `keep_logs` retains the step log and prediction trace.
pub fn run_throw(
    scn: &Scenario,
    mode: ControllerMode,
    index: usize,
    spec: &ThrowSpec,
    keep_logs: bool,
) -> Result<CatchRecord> {
    let cfg = &scn.catch;
    let flight = simulate_ball(spec, &scn.wind, &cfg.sphere, 2.0);
    let mut record = CatchRecord {
        index,
        mode,
        spec: *spec,
        outcome: CatchOutcome::excluded(ExclusionReason::NoIntercept),
        solver: SolverStats::default(),
        timing: TimingStats::default(),
        trace: Vec::new(),
        log: Vec::new(),
    };
    let intercept = match classify_throw(&flight, scn)? {
        Ok(a) => a,
        Err(reason) => {
            record.outcome = CatchOutcome::excluded(reason);
            return Ok(record);
        }
    };
    let (flight_time, crossing_point) = flight.crossing.expect("classified throws cross the sphere");

    let base = STREAM_THROW_BASE + 3 * index as u64;
    let mut arm = ArmLoop::new(scn, mode, stream(scn.seed, base + 1))?;
    let mut ball_rng = stream(scn.seed, base + 2);
    let ball_noise = Normal::new(0.0, cfg.ball_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut tracker = BallTracker::new(scn.ekf);
    let snapshot = Snapshot::new(InterceptPrediction::invalid());

    let release_tick = (cfg.warmup / SENSOR_PERIOD).round() as usize;
    let pre_roll_ticks = (cfg.pre_roll / SENSOR_PERIOD).round() as usize;
    let t_release = release_tick as f64 * SENSOR_PERIOD;
    let t_cross = t_release + flight_time;
    let mut target: Option<Angles> = None;
    let mut last_valid: Option<InterceptPrediction> = None;
    let home_refs = vec![cfg.home; scn.horizon + 1];

    let mut tick = 0usize;
    loop {
        let t = tick as f64 * SENSOR_PERIOD;
        arm.sense();
        if tick + pre_roll_ticks >= release_tick {
            let truth = if tick < release_tick { spec.launch } else { flight.position(tick - release_tick) };
            let z = truth
                + Vector3::new(
                    ball_noise.sample(&mut ball_rng),
                    ball_noise.sample(&mut ball_rng),
                    ball_noise.sample(&mut ball_rng),
                );
            if let Some(est) = tracker.push(&z)? {
                let prediction = predict_intercept(&est.state(), &cfg.sphere, cfg.prediction_horizon);
                snapshot.publish(prediction);
                if prediction.valid {
                    last_valid = Some(prediction);
                }
                if keep_logs {
                    record.trace.push(PredictionSample { t: t - t_release, prediction });
                }
            }
        }
        if tick % TICKS_PER_CONTROL == 0 {
            let latest = snapshot.latest();
            if latest.valid {
                target = Some(latest.angles);
            }
            let refs = match target {
                Some(goal) => plan(arm.measured_angles(), goal, cfg.omega_sp, CONTROL_PERIOD, scn.horizon)?.setpoints,
                None => home_refs.clone(),
            };
            let step = arm.control(&refs)?;
            if keep_logs {
                record.log.push(step);
            }
        }
        if t + SENSOR_PERIOD >= t_cross {
            let x = arm.peek(t_cross - t);
            let tip_angles = Angles::new(x[ALPHA], x[BETA]);
            let n = direction(tip_angles);
            let d = crossing_point - cfg.sphere.tip(tip_angles);
            let miss = (d - n * d.dot(&n)).norm();
            record.outcome = CatchOutcome {
                status: if miss <= cfg.net_radius { CatchStatus::Success } else { CatchStatus::Miss },
                miss_distance: Some(miss),
                intercept: Some(intercept),
                flight_time: Some(flight_time),
                final_prediction_error: last_valid.map(|p| (p.point - crossing_point).norm()),
            };
            break;
        }
        arm.advance();
        tick += 1;
    }
    record.solver = arm.stats;
    record.timing = arm.timing;
    Ok(record)
}

/// Single throw (index 0) reported as run metrics.
pub fn run_catch(scn: &Scenario) -> Result<RunMetrics> {
    let rec = run_throw(scn, scn.mode, 0, &throw_spec(scn, 0), true)?;
    let (mut sa, mut sb) = (0.0, 0.0);
    for r in &rec.log {
        sa += (r.state[ALPHA] - r.reference.alpha).powi(2);
        sb += (r.state[BETA] - r.reference.beta).powi(2);
    }
    let n = rec.log.len().max(1) as f64;
    Ok(RunMetrics {
        rmse_alpha: (sa / n).sqrt(),
        rmse_beta: (sb / n).sqrt(),
        steady: Vec::new(),
        catch: Some(rec.outcome),
        solver: rec.solver,
    })
}

#[derive(Debug, Clone)]
pub struct CatchBatch {
    pub mode: ControllerMode,
    pub records: Vec<CatchRecord>,
}

impl CatchBatch {
    pub fn intercepting(&self) -> usize {
        self.records.iter().filter(|r| !matches!(r.outcome.status, CatchStatus::Excluded(_))).count()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.status == CatchStatus::Success).count()
    }

    pub fn excluded(&self) -> usize {
        self.records.len() - self.intercepting()
    }

    /// Successes over intercepting throws.
    pub fn success_rate(&self) -> f64 {
        let n = self.intercepting();
        if n == 0 {
            0.0
        } else {
            self.successes() as f64 / n as f64
        }
    }

    pub fn mean_miss_successful(&self) -> Option<f64> {
        let misses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.outcome.status == CatchStatus::Success)
            .filter_map(|r| r.outcome.miss_distance)
            .collect();
        (!misses.is_empty()).then(|| misses.iter().sum::<f64>() / misses.len() as f64)
    }

    pub fn solver(&self) -> SolverStats {
        let mut s = SolverStats::default();
        self.records.iter().for_each(|r| s.merge(&r.solver));
        s
    }

    pub fn timing(&self) -> TimingStats {
        let mut s = TimingStats::default();
        self.records.iter().for_each(|r| s.merge(&r.timing));
        s
    }
}

/// Upper bound on throws scanned while collecting intercepting ones.
const MAX_SCAN_FACTOR: usize = 4;

/// Runs seeded throws until `throws` of them intercept the sphere; excluded
/// throws are kept as records. Throws run in parallel and record `i` only
/// depends on the seed and `i`, so the batch is reproducible.
pub fn run_catch_batch(scn: &Scenario, mode: ControllerMode, throws: usize) -> Result<CatchBatch> {
    let mut pending = Vec::new();
    let mut excluded = Vec::new();
    let mut index = 0;
    while pending.len() < throws {
        if index >= MAX_SCAN_FACTOR * throws.max(1) {
            return Err(Error::InvalidParameter(format!(
                "only {} of {index} generated throws intercept the sphere",
                pending.len()
            )));
        }
        let spec = throw_spec(scn, index);
        let flight = simulate_ball(&spec, &scn.wind, &scn.catch.sphere, 2.0);
        match classify_throw(&flight, scn)? {
            Ok(_) => pending.push((index, spec)),
            Err(reason) => excluded.push(CatchRecord {
                index,
                mode,
                spec,
                outcome: CatchOutcome::excluded(reason),
                solver: SolverStats::default(),
                timing: TimingStats::default(),
                trace: Vec::new(),
                log: Vec::new(),
            }),
        }
        index += 1;
    }
    let mut records = pending
        .par_iter()
        .map(|(i, spec)| run_throw(scn, mode, *i, spec, false))
        .collect::<Result<Vec<_>>>()?;
    records.extend(excluded);
    records.sort_by_key(|r| r.index);
    Ok(CatchBatch { mode, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ModelParams, TruePlantConfig};

    #[test]
    fn zero_wind_is_no_wind() {
        let g = WindGust::default();
        assert_eq!(wind_gust_profile(&g, 0.3), Vector3::zeros());
        let g = WindGust { magnitude: 2.0, ..Default::default() };
        assert_eq!(wind_gust_profile(&g, 0.05), Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(wind_gust_profile(&g, 0.15), Vector3::new(1.2, 0.0, 0.0));
        assert_eq!(wind_gust_profile(&g, -0.1), Vector3::zeros());
    }

    #[test]
    fn aimed_throw_without_drag_hits_aim_point() {
        let cfg = CatchConfig::default();
        let aim = Angles::from_degrees(30.0, 10.0);
        let spec = ThrowSpec::aimed(cfg.launch_point(), cfg.sphere.tip(aim), 0.4, 0.0, aim);
        let flight = simulate_ball(&spec, &WindGust::default(), &cfg.sphere, 2.0);
        let (t, p) = flight.crossing.unwrap();
        assert!((t - 0.4).abs() < 1e-6, "{t}");
        assert!((p - cfg.sphere.tip(aim)).norm() < 1e-6);
    }

    #[test]
    fn wide_throw_is_excluded() {
        let scn = Scenario::default();
        let spec = ThrowSpec { launch: Vector3::new(0.0, -2.0, 0.0), velocity: Vector3::new(3.0, 4.0, 3.0), drag: 0.0, aim: Angles::ZERO };
        let rec = run_throw(&scn, ControllerMode::OffsetFree, 0, &spec, false).unwrap();
        assert_eq!(rec.outcome.status, CatchStatus::Excluded(ExclusionReason::NoIntercept));
    }

    #[test]
    fn ball_aimed_at_resting_tip_is_caught() {
        let mut scn = Scenario { plant: TruePlantConfig::nominal(ModelParams::default()), ..Default::default() };
        scn.catch.warmup = 3.0;
        let home = scn.catch.home;
        let spec = ThrowSpec::aimed(scn.catch.launch_point(), scn.catch.sphere.tip(home), 0.4, 0.0, home);
        let rec = run_throw(&scn, ControllerMode::OffsetFree, 0, &spec, true).unwrap();
        assert_eq!(rec.outcome.status, CatchStatus::Success);
        assert!(rec.outcome.miss_distance.unwrap() < 1e-2, "{:?}", rec.outcome);
    }
}
