//! Great-circle setpoint planning on the arm sphere.

use crate::error::Result;
use crate::sphere::{angles_of, arc_angle, direction, Angles};

/// Default setpoint angular velocity, rad/s (240 deg/s).
pub const OMEGA_SP: f64 = 240.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    /// Exactly `N + 1` setpoints, the terminal one repeated as padding.
    pub setpoints: Vec<Angles>,
    pub arc_angle: f64,
    pub segments: usize,
}

impl PlannedTrajectory {
    pub fn terminal(&self) -> Angles {
        self.setpoints[self.segments.min(self.setpoints.len() - 1)]
    }
}

/// Number of equal segments so that none is longer than `omega_sp * ts`.
pub fn segment_count(theta: f64, omega_sp: f64, ts: f64) -> usize {
    if theta <= 1e-12 {
        return 0;
    }
    (theta / (omega_sp * ts) - 1e-9).ceil().max(1.0) as usize
}

/// Spherical linear interpolation between unit vectors `a` and `b`.
pub fn slerp(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>, theta: f64, s: f64) -> nalgebra::Vector3<f64> {
    let sin_t = theta.sin();
    let v = a * (((1.0 - s) * theta).sin() / sin_t) + b * ((s * theta).sin() / sin_t);
    v.normalize()
}

pub fn plan(current: Angles, target: Angles, omega_sp: f64, ts: f64, horizon: usize) -> Result<PlannedTrajectory> {
    current.check_chart()?;
    target.check_chart()?;
    let v0 = direction(current);
    let v1 = direction(target);
    let theta = arc_angle(&v0, &v1);
    debug_assert!(theta < std::f64::consts::PI - 1e-9, "antipodal endpoints are outside the chart");
    let m = segment_count(theta, omega_sp, ts);

    let mut setpoints = Vec::with_capacity(horizon + 1);
    setpoints.push(current);
    for i in 1..=m.min(horizon) {
        if i == m {
            setpoints.push(target);
        } else {
            let s = i as f64 / m as f64;
            setpoints.push(angles_of(&slerp(&v0, &v1, theta, s)));
        }
    }
    let last = *setpoints.last().unwrap();
    setpoints.resize(horizon + 1, last);
    Ok(PlannedTrajectory { setpoints, arc_angle: theta, segments: m })
}
