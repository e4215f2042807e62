//! Acceptance criteria runners. Each returns a [`CriterionResult`] with the
//! measured quantities so the suite can print one line per criterion.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::allocation::{build_input_polytope, xi, xi_inv, ActuatorPressures, AllocatedInput};
use crate::ball::{rk4_step, rk4_step_with_jacobian, BallEkfConfig, BallState, BallTracker, Vector7, BALL_STEP};
use crate::dynamics::{build_continuous, discretize, rk4, ArmState, ModelParams};
use crate::error::Result;
use crate::estimation::{solve_dare, AugmentedModel, NoiseLevels};
use crate::mpc::{ControllerMode, MpcConfig, MpcController, WeightSpec};
use crate::planner::{plan, OMEGA_SP};
use crate::qp::{solve_qp, SolverSettings};
use crate::simharness::{
    run_catch_batch, run_throw, write_catch_records, write_metrics, write_step_log, CatchStatus,
    ReferenceKind, Scenario, ThrowSpec, TimingStats,
};
use crate::sphere::{arc_angle, direction, Angles};
use crate::tracking::TargetCalculator;
use crate::{CONTROL_PERIOD, P_BAR, P_MAX, P_MIN};

/// Gust magnitude (m/s^2) the wind criterion is run at.
pub const DOCUMENTED_GUST: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] criterion {} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn finish(id: u8, name: &'static str, started: Instant, limit: Duration, passed: bool, detail: String) -> CriterionResult {
    let elapsed = started.elapsed();
    let in_time = elapsed <= limit;
    let detail = if in_time { detail } else { format!("{detail}; over the {} s budget", limit.as_secs()) };
    CriterionResult { id, name, passed: passed && in_time, detail, elapsed }
}

/// Step references on the mismatch plant, both controllers.
pub fn offset_elimination(base: &Scenario) -> Result<CriterionResult> {
    let started = Instant::now();
    let scn = Scenario { reference: ReferenceKind::Step, ..base.clone() };
    let of = crate::simharness::run_tracking(&scn.with_mode(ControllerMode::OffsetFree))?;
    let st = crate::simharness::run_tracking(&scn.with_mode(ControllerMode::Standard))?;
    let of_max = of.metrics.max_offset().unwrap_or(f64::INFINITY).to_degrees();
    let st_max = st.metrics.max_offset().unwrap_or(0.0).to_degrees();
    // the standard controller lags in the direction of the disturbance
    let sign_ok = st.metrics.steady.iter().all(|w| w.offset[0].signum() == scn.plant.relaxation_amplitude.signum());
    let passed = of_max <= 0.1 && st_max >= 3.0 && sign_ok;
    let detail = format!(
        "offset-free max steady offset {of_max:.4} deg (<= 0.1), standard {st_max:.3} deg (>= 3 scaled, >= 1 required), \
         standard offset follows disturbance sign: {sign_ok}"
    );
    Ok(finish(1, "offset elimination", started, Duration::from_secs(30), passed, detail))
}

/// Paired RMSE on the mixed trajectory; also returns the offset-free solve timing.
pub fn rmse_reduction(base: &Scenario) -> Result<(CriterionResult, TimingStats)> {
    let started = Instant::now();
    let scn = Scenario { reference: ReferenceKind::Mixed, ..base.clone() };
    let of = crate::simharness::run_tracking(&scn.with_mode(ControllerMode::OffsetFree))?;
    let st = crate::simharness::run_tracking(&scn.with_mode(ControllerMode::Standard))?;
    let (a, b) = (of.metrics.rmse().to_degrees(), st.metrics.rmse().to_degrees());
    let ratio = a / b;
    let detail = format!("offset-free RMSE {a:.3} deg, standard {b:.3} deg, ratio {ratio:.3} (<= 0.80)");
    let mut timing = of.timing;
    timing.merge(&st.timing);
    Ok((finish(2, "RMSE reduction", started, Duration::from_secs(120), ratio <= 0.8, detail), timing))
}

/// Seeded catch batches with both controllers on the same throws.
pub fn catch_rate(base: &Scenario, throws: usize) -> Result<CriterionResult> {
    let started = Instant::now();
    let of = run_catch_batch(base, ControllerMode::OffsetFree, throws)?;
    let st = run_catch_batch(base, ControllerMode::Standard, throws)?;
    let (r_of, r_st) = (of.success_rate(), st.success_rate());
    let miss = of.mean_miss_successful().unwrap_or(f64::INFINITY) * 1e3;
    let passed = r_of >= 0.9 && r_st < r_of && r_st <= 0.7 && miss <= 15.0;
    let detail = format!(
        "{} intercepting throws ({} excluded): offset-free {:.1}% (>= 90), standard {:.1}% (<= 70), \
         mean miss {miss:.2} mm (<= 15)",
        of.intercepting(),
        of.excluded(),
        100.0 * r_of,
        100.0 * r_st
    );
    Ok(finish(3, "catch rate", started, Duration::from_secs(600), passed, detail))
}

/// A throw aimed at a fixed point while a `+x` gust pushes the ball.
pub fn wind_throw(base: &Scenario, magnitude: f64) -> Result<crate::simharness::CatchRecord> {
    let mut scn = base.clone();
    scn.wind.magnitude = magnitude;
    let aim = Angles::from_degrees(30.0, 0.0);
    let launch = scn.catch.sphere.center + Vector3::new(0.0, -scn.catch.launch_distance, 0.0);
    let spec = ThrowSpec::aimed(launch, scn.catch.sphere.tip(aim), 0.45, 0.02, aim);
    run_throw(&scn, ControllerMode::OffsetFree, 0, &spec, true)
}

/// Mean and standard error of the predicted `x` coordinate over
/// consecutive blocks of `block` valid predictions.
pub fn prediction_drift(record: &crate::simharness::CatchRecord, block: usize) -> Vec<(f64, f64)> {
    let xs: Vec<f64> = record.trace.iter().filter(|s| s.prediction.valid).map(|s| s.prediction.point.x).collect();
    xs.chunks(block)
        .filter(|c| c.len() == block && block > 1)
        .map(|c| {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

/// No block mean falls below its predecessor by more than two standard
/// errors of the difference, and the trace ends above where it started.
pub fn drifts_monotonically(blocks: &[(f64, f64)]) -> bool {
    blocks.len() >= 3
        && blocks.windows(2).all(|w| w[1].0 >= w[0].0 - 2.0 * w[0].1.hypot(w[1].1))
        && blocks[blocks.len() - 1].0 > blocks[0].0
}

pub fn wind_robustness(base: &Scenario) -> Result<CriterionResult> {
    let started = Instant::now();
    let rec = wind_throw(base, DOCUMENTED_GUST)?;
    let calm = wind_throw(base, 0.0)?;
    let means = prediction_drift(&rec, 10);
    let monotone = drifts_monotonically(&means);
    let shift = match (rec.outcome.intercept, calm.outcome.intercept) {
        (Some(a), Some(b)) => (base.catch.sphere.tip(a) - base.catch.sphere.tip(b)).x,
        _ => 0.0,
    };
    let err = rec.outcome.final_prediction_error.unwrap_or(f64::INFINITY) * 1e3;
    let miss = rec.outcome.miss_distance.unwrap_or(f64::INFINITY) * 1e3;
    let passed = rec.outcome.status == CatchStatus::Success && monotone && err <= 31.0 && shift > 0.0;
    let detail = format!(
        "gust {DOCUMENTED_GUST} m/s^2 moves the intercept {:.1} mm in +x; prediction drift monotone over {} blocks: \
         {monotone}; final prediction error {err:.2} mm (<= 31); status {} with miss {miss:.2} mm",
        shift * 1e3,
        means.len(),
        rec.outcome.status
    );
    Ok(finish(4, "wind-gust robustness", started, Duration::from_secs(60), passed, detail))
}

/// One checked property: measured value against its limit.
#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl PropertyCheck {
    fn at_most(name: &'static str, value: f64, limit: f64) -> Self {
        Self { name, value, limit, passed: value <= limit }
    }
}

fn model() -> Result<crate::DiscreteModel> {
    discretize(&build_continuous(&ModelParams::default())?, CONTROL_PERIOD)
}

/// Worst `xi(xi_inv(v)) - v` and `xi_inv(xi(p)) - p` over random samples.
pub fn xi_round_trip(rng: &mut ChaCha8Rng, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = ActuatorPressures::new(rng.random_range(1.0..2.0), rng.random_range(1.0..2.0), rng.random_range(1.0..2.0));
        let q = xi_inv(&xi(&p));
        worst = worst.max((0..3).map(|i| (p.as_array()[i] - q.as_array()[i]).abs()).fold(0.0, f64::max));
        let v = AllocatedInput::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..1.5));
        let w = xi(&xi_inv(&v));
        worst = worst.max((v.dp_alpha - w.dp_alpha).abs()).max((v.dp_beta - w.dp_beta).abs()).max((v.p_bar - w.p_bar).abs());
    }
    worst
}

/// Grid points where polytope membership disagrees with the pressure-box oracle.
pub fn polytope_grid_disagreements(n: usize) -> Result<usize> {
    let poly = build_input_polytope(P_MIN, P_MAX, P_BAR)?;
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            let u = Vector2::new(-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64);
            let p = xi_inv(&AllocatedInput::from_vector(&u, P_BAR));
            let margin = P_MAX - p.max();
            if margin.abs() < 1e-9 {
                continue;
            }
            if (margin > 0.0) != poly.contains(&u, 0.0) {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Exact discretization against a fine RK4 integration over one period.
pub fn discretization_error(rng: &mut ChaCha8Rng, samples: usize) -> Result<f64> {
    let cm = build_continuous(&ModelParams::default())?;
    let dm = discretize(&cm, CONTROL_PERIOD)?;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x0 = ArmState::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let u = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let d = Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let steps = 2000;
        let h = CONTROL_PERIOD / steps as f64;
        let mut x = x0;
        for k in 0..steps {
            x = rk4(&x, k as f64 * h, h, |x, _| cm.a * x + cm.b * u + d);
        }
        worst = worst.max((dm.step(&x0, &u, &d) - x).amax());
    }
    Ok(worst)
}

/// Scalar Riccati solution against the positive root of its quadratic.
pub fn dare_scalar_error() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &(a, c, q, r) in &[(0.9, 1.0, 1.0, 1.0), (1.2, 0.5, 0.3, 2.0), (0.5, 2.0, 1e-3, 1e-2)] {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let sol = solve_dare(&m(a), &m(c), &m(q), &m(r))?;
        // p = a^2 p r / (c^2 p + r) + q  <=>  c^2 p^2 + (r - a^2 r - q c^2) p - q r = 0
        let (qa, qb, qc) = (c * c, r - a * a * r - q * c * c, -q * r);
        let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        worst = worst.max((sol.p[(0, 0)] - root).abs());
    }
    Ok(worst)
}

pub fn filter_spectral_radius() -> Result<f64> {
    Ok(AugmentedModel::from_levels(&model()?, &NoiseLevels::default())?.recursion_spectral_radius())
}

/// Target pairs plugged back into the model: steady and on the reference.
pub fn target_plug_back(rng: &mut ChaCha8Rng, samples: usize) -> Result<f64> {
    let m = model()?;
    let calc = TargetCalculator::new(&m);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let r = Angles::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let d = Vector6::from_fn(|_, _| rng.random_range(-20.0..20.0));
        let t = calc.target(&r, &d);
        let moved = m.step(&t.x_bar, &t.u_bar, &d) - t.x_bar;
        worst = worst.max(moved.amax()).max((t.x_bar[0] - r.alpha).abs()).max((t.x_bar[3] - r.beta).abs());
    }
    Ok(worst)
}

/// Unconstrained MPC without rate penalty against finite-horizon LQR.
pub fn qp_vs_lqr(rng: &mut ChaCha8Rng, samples: usize) -> Result<f64> {
    let m = model()?;
    let weights = WeightSpec { r_d: 0.0, ..WeightSpec::default() };
    let mut cfg = MpcConfig::from_weights(&weights, 50, CONTROL_PERIOD, None);
    cfg.solver = SolverSettings { primal_tolerance: 1e-12, dual_tolerance: 1e-12, ..SolverSettings::default() };
    let ctrl = MpcController::new(m.clone(), cfg.clone())?;

    // backward recursion: P_N = P, K_i = (R + B'P B)^-1 B'P A, P_i = Q + A'P (A - B K_i)
    let mut p = cfg.p;
    let mut gain = nalgebra::SMatrix::<f64, 2, 6>::zeros();
    for _ in 0..cfg.horizon {
        let bt_p = m.b.transpose() * p;
        gain = (cfg.r + bt_p * m.b).try_inverse().expect("R > 0") * bt_p * m.a;
        p = cfg.q + m.a.transpose() * p * (m.a - m.b * gain);
    }
    let zero_target = crate::tracking::TargetPair { x_bar: ArmState::zeros(), u_bar: Vector2::zeros() };
    let targets = vec![zero_target; cfg.horizon + 1];
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x0 = ArmState::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let qp = ctrl.build_qp(&x0, &Vector2::zeros(), &Vector6::zeros(), &targets)?;
        let sol = solve_qp(&qp, None, &cfg.solver)?;
        let u_lqr = -gain * x0;
        worst = worst.max((Vector2::new(sol.iterate.z[0], sol.iterate.z[1]) - u_lqr).amax());
    }
    Ok(worst)
}

/// Discrete ball Jacobian against central differences of the RK4 step.
pub fn ekf_jacobian_error(rng: &mut ChaCha8Rng, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..samples {
        let x = Vector7::from_fn(|i, _| match i {
            0..=2 => rng.random_range(-2.0..2.0),
            3..=5 => rng.random_range(-8.0..8.0),
            _ => rng.random_range(0.0..0.05),
        });
        let (_, jac) = rk4_step_with_jacobian(&x, BALL_STEP);
        for j in 0..7 {
            let mut e = Vector7::zeros();
            e[j] = h;
            let fd = (rk4_step(&(x + e), BALL_STEP) - rk4_step(&(x - e), BALL_STEP)) / (2.0 * h);
            worst = worst.max((jac.column(j) - fd).amax());
        }
    }
    worst
}

/// Relative drag coefficient error after 0.3 s of noiseless measurements.
pub fn drag_recovery_error(true_drag: f64) -> Result<f64> {
    // the throw is noiseless and follows the filter's own model exactly
    let cfg = BallEkfConfig {
        q_position: 1e-10,
        q_velocity: 1e-8,
        q_drag: 1e-8,
        r_position: 1e-8,
        ..BallEkfConfig::default()
    };
    let mut tracker = BallTracker::new(cfg);
    let mut x = BallState::new(Vector3::new(0.0, -2.0, 0.1), Vector3::new(0.3, 6.0, 4.0), true_drag).to_vector();
    let samples = (0.3 / BALL_STEP).round() as usize;
    for _ in 0..samples {
        tracker.push(&x.fixed_rows::<3>(0).into_owned())?;
        x = crate::dynamics::rk4(&x, 0.0, BALL_STEP, |s, _| crate::ball::ball_dynamics(s));
    }
    let est = tracker.estimate().map(|e| e.mean[6]).unwrap_or(f64::NAN);
    Ok((est - true_drag).abs() / true_drag)
}

/// Worst deviation from equal spacing and worst excess over `omega * Ts`.
pub fn planner_spacing(rng: &mut ChaCha8Rng, samples: usize) -> Result<(f64, f64)> {
    let (mut spacing, mut excess) = (0.0f64, f64::NEG_INFINITY);
    let step = OMEGA_SP * CONTROL_PERIOD;
    for _ in 0..samples {
        let lim = 80f64.to_radians();
        let a = Angles::new(rng.random_range(-lim..lim), rng.random_range(-lim..lim));
        let b = Angles::new(rng.random_range(-lim..lim), rng.random_range(-lim..lim));
        let traj = plan(a, b, OMEGA_SP, CONTROL_PERIOD, 200)?;
        let arcs: Vec<f64> = traj.setpoints[..=traj.segments]
            .windows(2)
            .map(|w| arc_angle(&direction(w[0]), &direction(w[1])))
            .collect();
        if let Some(first) = arcs.first() {
            spacing = spacing.max(arcs.iter().map(|s| (s - first).abs()).fold(0.0, f64::max));
            excess = excess.max(arcs.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s - step)));
        }
    }
    Ok((spacing, excess))
}

/// Serializes the artifacts of a short tracking run and a small catch batch.
pub fn run_artifacts(scn: &Scenario) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let short = Scenario { duration: 4.0, reference: ReferenceKind::Mixed, ..scn.clone() };
    let run = crate::simharness::run_tracking(&short)?;
    write_step_log(&mut out, &run.log)?;
    write_metrics(&mut out, &run.metrics)?;
    let batch = run_catch_batch(scn, ControllerMode::OffsetFree, 4)?;
    write_catch_records(&mut out, &batch.records)?;
    Ok(out)
}

pub fn property_checks(seed: u64) -> Result<Vec<PropertyCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (spacing, excess) = planner_spacing(&mut rng, 200)?;
    let scn = Scenario { seed, ..Scenario::default() };
    let identical = run_artifacts(&scn)? == run_artifacts(&scn)?;
    Ok(vec![
        PropertyCheck::at_most("xi round trip", xi_round_trip(&mut rng, 10_000), 1e-12),
        PropertyCheck::at_most("polytope grid disagreements", polytope_grid_disagreements(200)? as f64, 0.0),
        PropertyCheck::at_most("discretization vs fine RK4", discretization_error(&mut rng, 20)?, 1e-8),
        PropertyCheck::at_most("scalar DARE oracle", dare_scalar_error()?, 1e-10),
        PropertyCheck { name: "filter spectral radius", value: filter_spectral_radius()?, limit: 1.0, passed: filter_spectral_radius()? < 1.0 },
        PropertyCheck::at_most("target plug-back residual", target_plug_back(&mut rng, 200)?, 1e-8),
        PropertyCheck::at_most("QP vs LQR first input", qp_vs_lqr(&mut rng, 20)?, 1e-6),
        PropertyCheck::at_most("EKF Jacobian vs FD", ekf_jacobian_error(&mut rng, 50), 1e-6),
        PropertyCheck::at_most("drag recovery relative error", drag_recovery_error(0.04)?, 0.05),
        PropertyCheck::at_most("planner spacing spread", spacing, 1e-9),
        PropertyCheck::at_most("planner step over omega*Ts", excess, 1e-12),
        PropertyCheck { name: "determinism byte identity", value: f64::from(u8::from(identical)), limit: 1.0, passed: identical },
    ])
}

pub fn property_suites(seed: u64) -> Result<CriterionResult> {
    let started = Instant::now();
    let checks = property_checks(seed)?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:e} (limit {:e})", c.name, c.value, c.limit))
        .collect();
    let detail = if failed.is_empty() {
        format!("{} properties hold", checks.len())
    } else {
        format!("failed: {}", failed.join("; "))
    };
    Ok(finish(5, "property suites", started, Duration::from_secs(60), failed.is_empty(), detail))
}

/// Mean solve time target 20 ms, failing only above 40 ms.
pub fn throughput(timing: &TimingStats) -> CriterionResult {
    let started = Instant::now();
    let mean_ms = timing.mean().as_secs_f64() * 1e3;
    let detail = format!(
        "mean MPC solve {mean_ms:.3} ms over {} solves at N = 50 (target < 20, fails > 40); max {:.3} ms",
        timing.solves,
        timing.max.as_secs_f64() * 1e3
    );
    let mut r = finish(6, "throughput", started, Duration::from_secs(60), mean_ms <= 40.0, detail);
    r.elapsed = Duration::ZERO;
    r
}

/// All criteria in order.
pub fn run_all(base: &Scenario, throws: usize) -> Result<Vec<CriterionResult>> {
    let c1 = offset_elimination(base)?;
    let (c2, timing) = rmse_reduction(base)?;
    let c3 = catch_rate(base, throws)?;
    let c4 = wind_robustness(base)?;
    let c5 = property_suites(base.seed)?;
    let c6 = throughput(&timing);
    Ok(vec![c1, c2, c3, c4, c5, c6])
}
