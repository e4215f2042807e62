//! Ball flight estimation: point mass with quadratic drag, an EKF over
//! `(position, velocity, K_D)` and forward prediction to the arm sphere.

use std::io::{Read, Write};
use std::sync::{Arc, RwLock};

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::config::{KvConfig, KvSection, KvWriter};
use crate::dynamics::rk4;
use crate::error::{Error, Result};
use crate::sphere::{angles_of, Angles, ArmSphere};

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);
/// Integration step of the ball model, seconds.
pub const BALL_STEP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Drag coefficient in 1/m.
    pub drag: f64,
}

impl BallState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, drag: f64) -> Self {
        Self { position, velocity, drag }
    }

    pub fn to_vector(&self) -> Vector7 {
        let mut v = Vector7::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v[6] = self.drag;
        v
    }

    pub fn from_vector(v: &Vector7) -> Self {
        Self { position: v.fixed_rows::<3>(0).into_owned(), velocity: v.fixed_rows::<3>(3).into_owned(), drag: v[6] }
    }
}

/// `d/dt (r, v, K_D) = (v, g - K_D |v| v + a_ext, 0)`.
pub fn ball_dynamics_with(x: &Vector7, external: &Vector3<f64>) -> Vector7 {
    let v: Vector3<f64> = x.fixed_rows::<3>(3).into_owned();
    let acc = GRAVITY - v * (x[6] * v.norm()) + external;
    let mut dx = Vector7::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&v);
    dx.fixed_rows_mut::<3>(3).copy_from(&acc);
    dx
}

pub fn ball_dynamics(x: &Vector7) -> Vector7 {
    ball_dynamics_with(x, &Vector3::zeros())
}

/// Continuous-time Jacobian of [`ball_dynamics`].
pub fn ball_jacobian(x: &Vector7) -> Matrix7 {
    let v: Vector3<f64> = x.fixed_rows::<3>(3).into_owned();
    let speed = v.norm();
    let mut j = Matrix7::zeros();
    j.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    if speed > 0.0 {
        let dv = -(Matrix3::identity() * speed + v * v.transpose() / speed) * x[6];
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&dv);
        j.fixed_view_mut::<3, 1>(3, 6).copy_from(&(-v * speed));
    }
    j
}

pub fn rk4_step(x: &Vector7, dt: f64) -> Vector7 {
    rk4(x, 0.0, dt, |x, _| ball_dynamics(x))
}

/// RK4 step together with its exact Jacobian, chained through the stages.
pub fn rk4_step_with_jacobian(x: &Vector7, dt: f64) -> (Vector7, Matrix7) {
    let eye = Matrix7::identity();
    let k1 = ball_dynamics(x);
    let j1 = ball_jacobian(x);
    let x2 = x + k1 * (0.5 * dt);
    let k2 = ball_dynamics(&x2);
    let j2 = ball_jacobian(&x2) * (eye + j1 * (0.5 * dt));
    let x3 = x + k2 * (0.5 * dt);
    let k3 = ball_dynamics(&x3);
    let j3 = ball_jacobian(&x3) * (eye + j2 * (0.5 * dt));
    let x4 = x + k3 * dt;
    let k4 = ball_dynamics(&x4);
    let j4 = ball_jacobian(&x4) * (eye + j3 * dt);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let phi = eye + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (dt / 6.0);
    (next, phi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallEkfConfig {
    pub dt: f64,
    /// Per-step process variances.
    pub q_position: f64,
    pub q_velocity: f64,
    pub q_drag: f64,
    /// Position measurement variance, m^2.
    pub r_position: f64,
    pub initial_drag: f64,
    pub initial_var_position: f64,
    pub initial_var_velocity: f64,
    pub initial_var_drag: f64,
    /// Detection: minimum height and speed over consecutive frames.
    pub detect_height: f64,
    pub detect_speed: f64,
    pub detect_frames: usize,
}

impl Default for BallEkfConfig {
    fn default() -> Self {
        Self {
            dt: BALL_STEP,
            q_position: 1e-6,
            q_velocity: 1e-3,
            q_drag: 1e-5,
            r_position: 1e-6,
            initial_drag: 0.02,
            initial_var_position: 1e-6,
            initial_var_velocity: 0.25,
            initial_var_drag: 4e-4,
            detect_height: 0.0,
            detect_speed: 1.0,
            detect_frames: 3,
        }
    }
}

impl KvSection for BallEkfConfig {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("ekf.q_position", &mut self.q_position)?;
        cfg.set("ekf.q_velocity", &mut self.q_velocity)?;
        cfg.set("ekf.q_drag", &mut self.q_drag)?;
        cfg.set("ekf.r_position", &mut self.r_position)?;
        cfg.set("ekf.initial_drag", &mut self.initial_drag)?;
        cfg.set("ekf.initial_var_velocity", &mut self.initial_var_velocity)?;
        cfg.set("ekf.initial_var_drag", &mut self.initial_var_drag)?;
        cfg.set("ekf.detect_height", &mut self.detect_height)?;
        cfg.set("ekf.detect_speed", &mut self.detect_speed)?;
        cfg.set("ekf.detect_frames", &mut self.detect_frames)?;
        if self.r_position <= 0.0 || self.detect_frames < 2 {
            return Err(Error::InvalidParameter("ekf.r_position > 0 and ekf.detect_frames >= 2 required".into()));
        }
        Ok(())
    }

    fn write(&self, out: &mut KvWriter) {
        out.put("ekf.q_position", self.q_position)
            .put("ekf.q_velocity", self.q_velocity)
            .put("ekf.q_drag", self.q_drag)
            .put("ekf.r_position", self.r_position)
            .put("ekf.initial_drag", self.initial_drag)
            .put("ekf.initial_var_velocity", self.initial_var_velocity)
            .put("ekf.initial_var_drag", self.initial_var_drag)
            .put("ekf.detect_height", self.detect_height)
            .put("ekf.detect_speed", self.detect_speed)
            .put("ekf.detect_frames", self.detect_frames);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallEstimate {
    pub mean: Vector7,
    pub covariance: Matrix7,
}

impl BallEstimate {
    pub fn state(&self) -> BallState {
        BallState::from_vector(&self.mean)
    }
}

/// Predict with RK4, update with the position measurement, clamp `K_D >= 0`.
/// A covariance asymmetry above 1e-8 is repaired once; a second one in a
/// row is an error.
pub fn ekf_step(
    est: &BallEstimate,
    z: &Vector3<f64>,
    cfg: &BallEkfConfig,
    strikes: &mut u32,
) -> Result<BallEstimate> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite ball measurement".into()));
    }
    let (x_pred, phi) = rk4_step_with_jacobian(&est.mean, cfg.dt);
    let mut q = Matrix7::zeros();
    for i in 0..3 {
        q[(i, i)] = cfg.q_position;
        q[(i + 3, i + 3)] = cfg.q_velocity;
    }
    q[(6, 6)] = cfg.q_drag;
    let p_pred = phi * est.covariance * phi.transpose() + q;

    let mut h = SMatrix::<f64, 3, 7>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    let r = Matrix3::identity() * cfg.r_position;
    let s = h * p_pred * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or_else(|| Error::InvalidParameter("singular innovation covariance".into()))?;
    let k = p_pred * h.transpose() * s_inv;
    let innovation = z - x_pred.fixed_rows::<3>(0);
    let mut mean = x_pred + k * innovation;
    let ikh = Matrix7::identity() - k * h;
    let mut cov = ikh * p_pred * ikh.transpose() + k * r * k.transpose();

    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-8 {
        *strikes += 1;
        if *strikes > 1 {
            return Err(Error::Asymmetric(asym));
        }
    } else {
        *strikes = 0;
    }
    cov = (cov + cov.transpose()) * 0.5;
    if mean[6] < 0.0 {
        mean[6] = 0.0;
    }
    Ok(BallEstimate { mean, covariance: cov })
}

/// Where and when the predicted ball meets the arm sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptPrediction {
    pub angles: Angles,
    pub point: Vector3<f64>,
    pub time_to_intercept: f64,
    pub valid: bool,
}

impl InterceptPrediction {
    pub fn invalid() -> Self {
        Self { angles: Angles::ZERO, point: Vector3::zeros(), time_to_intercept: f64::INFINITY, valid: false }
    }
}

/// First inward crossing of the sphere of a trajectory generated by `step`.
/// Bisection on the sub-step fraction pins the crossing time.
pub fn first_sphere_crossing(
    start: &Vector7,
    sphere: &ArmSphere,
    max_horizon: f64,
    dt: f64,
    step: impl Fn(&Vector7, f64) -> Vector7,
) -> Option<(f64, Vector7)> {
    let dist = |x: &Vector7| (x.fixed_rows::<3>(0) - sphere.center).norm() - sphere.radius;
    if dist(start) <= 0.0 {
        return None;
    }
    let mut t = 0.0;
    let mut x = *start;
    while t < max_horizon {
        let next = step(&x, dt);
        if dist(&next) <= 0.0 {
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if dist(&step(&x, mid)) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 {
                    break;
                }
            }
            let tau = 0.5 * (lo + hi);
            return Some((t + tau, step(&x, tau)));
        }
        x = next;
        t += dt;
    }
    None
}

pub fn predict_intercept(est: &BallState, sphere: &ArmSphere, max_horizon: f64) -> InterceptPrediction {
    let crossing = first_sphere_crossing(&est.to_vector(), sphere, max_horizon, BALL_STEP, rk4_step);
    match crossing {
        Some((t, x)) => {
            let point: Vector3<f64> = x.fixed_rows::<3>(0).into_owned();
            let angles = angles_of(&(point - sphere.center));
            InterceptPrediction { angles, point, time_to_intercept: t, valid: angles.in_chart() }
        }
        None => InterceptPrediction::invalid(),
    }
}

/// Latest-value cell: writers swap in a whole immutable record, readers
/// clone the `Arc`, so a read never observes a half-written prediction.
#[derive(Debug)]
pub struct Snapshot<T> {
    cell: RwLock<Arc<T>>,
}

impl<T> Snapshot<T> {
    pub fn new(value: T) -> Self {
        Self { cell: RwLock::new(Arc::new(value)) }
    }

    pub fn publish(&self, value: T) {
        *self.cell.write().expect("snapshot lock poisoned") = Arc::new(value);
    }

    pub fn latest(&self) -> Arc<T> {
        Arc::clone(&self.cell.read().expect("snapshot lock poisoned"))
    }
}

/// Detection gate plus EKF.
#[derive(Debug, Clone)]
pub struct BallTracker {
    cfg: BallEkfConfig,
    history: Vec<Vector3<f64>>,
    streak: usize,
    estimate: Option<BallEstimate>,
    strikes: u32,
}

impl BallTracker {
    pub fn new(cfg: BallEkfConfig) -> Self {
        Self { cfg, history: Vec::new(), streak: 0, estimate: None, strikes: 0 }
    }

    pub fn estimate(&self) -> Option<&BallEstimate> {
        self.estimate.as_ref()
    }

    pub fn is_tracking(&self) -> bool {
        self.estimate.is_some()
    }

    /// Feeds one position measurement taken `cfg.dt` after the previous one.
    pub fn push(&mut self, z: &Vector3<f64>) -> Result<Option<&BallEstimate>> {
        if let Some(est) = &self.estimate {
            self.estimate = Some(ekf_step(est, z, &self.cfg, &mut self.strikes)?);
            return Ok(self.estimate.as_ref());
        }
        let speed = self.history.last().map(|p| (z - p).norm() / self.cfg.dt).unwrap_or(0.0);
        if z.z > self.cfg.detect_height && speed > self.cfg.detect_speed {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.history.push(*z);
        if self.streak >= self.cfg.detect_frames {
            let n = self.history.len();
            // central difference at the previous frame, propagated one step
            let v_mid = (self.history[n - 1] - self.history[n - 3]) / (2.0 * self.cfg.dt);
            let velocity = v_mid + GRAVITY * self.cfg.dt;
            let mean = BallState::new(*z, velocity, self.cfg.initial_drag).to_vector();
            let mut cov = Matrix7::zeros();
            for i in 0..3 {
                cov[(i, i)] = self.cfg.initial_var_position.max(self.cfg.r_position);
                cov[(i + 3, i + 3)] = self.cfg.initial_var_velocity;
            }
            cov[(6, 6)] = self.cfg.initial_var_drag;
            self.estimate = Some(BallEstimate { mean, covariance: cov });
        }
        Ok(self.estimate.as_ref())
    }
}

/// Throw log row `t,x,y,z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrowSample {
    pub t: f64,
    pub position: Vector3<f64>,
}

pub fn write_throw_log<W: Write>(w: W, samples: &[ThrowSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x", "y", "z"])?;
    for s in samples {
        out.write_record([s.t, s.position.x, s.position.y, s.position.z].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_throw_log<R: Read>(r: R) -> Result<Vec<ThrowSample>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "x", "y", "z"] {
        return Err(Error::Config { line: 1, msg: format!("expected header t,x,y,z, got {header:?}") });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Config { line: i + 2, msg: e.to_string() })?;
        if vals.len() != 4 {
            return Err(Error::Config { line: i + 2, msg: "expected 4 columns".into() });
        }
        out.push(ThrowSample { t: vals[0], position: Vector3::new(vals[1], vals[2], vals[3]) });
    }
    Ok(out)
}
