//! The angle chart shared by the ball predictor, the planner and the
//! simulator.
//!
//! The link direction is `R_x(alpha) * R_y(beta) * e_z`, rotations about the
//! fixed world axes, which gives
//! `(sin(beta), -sin(alpha) cos(beta), cos(alpha) cos(beta))`.
//! The chart covers the open upper hemisphere `|alpha|, |beta| < 90 deg`.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Angle pair `(alpha, beta)` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles {
    pub alpha: f64,
    pub beta: f64,
}

impl Angles {
    pub const ZERO: Angles = Angles { alpha: 0.0, beta: 0.0 };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn from_degrees(alpha: f64, beta: f64) -> Self {
        Self::new(alpha.to_radians(), beta.to_radians())
    }

    pub fn in_chart(&self) -> bool {
        let lim = std::f64::consts::FRAC_PI_2;
        self.alpha.is_finite() && self.beta.is_finite() && self.alpha.abs() < lim && self.beta.abs() < lim
    }

    pub fn check_chart(&self) -> Result<()> {
        if self.in_chart() {
            Ok(())
        } else {
            Err(Error::OutsideChart(self.alpha, self.beta))
        }
    }
}

/// Unit link direction for the given angles.
pub fn direction(a: Angles) -> Vector3<f64> {
    let (sa, ca) = a.alpha.sin_cos();
    let (sb, cb) = a.beta.sin_cos();
    Vector3::new(sb, -sa * cb, ca * cb)
}

/// Inverse of [`direction`] for any nonzero vector in the upper half space.
pub fn angles_of(v: &Vector3<f64>) -> Angles {
    let u = v.normalize();
    Angles::new((-u.y).atan2(u.z), u.x.clamp(-1.0, 1.0).asin())
}

/// Great-circle angle between two unit vectors, accurate for tiny angles.
pub fn arc_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Arm geometry: the link tip moves on a sphere around the joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Default for ArmSphere {
    fn default() -> Self {
        Self { center: Vector3::zeros(), radius: 0.4 }
    }
}

impl ArmSphere {
    pub fn tip(&self, a: Angles) -> Vector3<f64> {
        self.center + self.radius * direction(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rest_points_up() {
        assert_eq!(direction(Angles::ZERO), Vector3::z());
    }

    #[test]
    fn alpha_moves_in_minus_y_and_beta_in_plus_x() {
        let da = direction(Angles::new(1e-3, 0.0));
        let db = direction(Angles::new(0.0, 1e-3));
        assert!(da.x.abs() < 1e-15 && da.y < 0.0);
        assert!(db.y.abs() < 1e-15 && db.x > 0.0);
    }

    proptest! {
        #[test]
        fn chart_round_trip(alpha in -1.5f64..1.5, beta in -1.5f64..1.5) {
            let a = angles_of(&direction(Angles::new(alpha, beta)));
            prop_assert!((a.alpha - alpha).abs() < 1e-12);
            prop_assert!((a.beta - beta).abs() < 1e-12);
        }
    }
}
