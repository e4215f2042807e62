//! Control allocation between the three bellow pressures and the two
//! orientation-aligned pressure differences.
//!
//! `xi` maps `(p_A, p_B, p_C)` to `(dp_alpha, dp_beta, p_bar)` where
//! `p_bar` is the lowest of the three pressures. `xi_inv` is its inverse.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Actuator pressures in bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorPressures {
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
}

impl ActuatorPressures {
    pub fn new(p_a: f64, p_b: f64, p_c: f64) -> Self {
        Self { p_a, p_b, p_c }
    }

    pub fn min(&self) -> f64 {
        self.p_a.min(self.p_b).min(self.p_c)
    }

    pub fn max(&self) -> f64 {
        self.p_a.max(self.p_b).max(self.p_c)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_a, self.p_b, self.p_c]
    }

    pub fn within(&self, p_min: f64, p_max: f64, tol: f64) -> bool {
        self.min() >= p_min - tol && self.max() <= p_max + tol
    }
}

/// Pressure differences plus the lower pressure bound, all in bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocatedInput {
    pub dp_alpha: f64,
    pub dp_beta: f64,
    pub p_bar: f64,
}

impl AllocatedInput {
    pub fn new(dp_alpha: f64, dp_beta: f64, p_bar: f64) -> Self {
        Self { dp_alpha, dp_beta, p_bar }
    }

    pub fn from_vector(u: &Vector2<f64>, p_bar: f64) -> Self {
        Self::new(u[0], u[1], p_bar)
    }

    pub fn differences(&self) -> Vector2<f64> {
        Vector2::new(self.dp_alpha, self.dp_beta)
    }
}

/// The allocation matrix taking `(dp_AB, dp_BC)` to `(dp_alpha, dp_beta)`.
pub fn allocation_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, SQRT3_2, -1.0, -0.5)
}

/// Closed-form inverse of [`allocation_matrix`]; its determinant is `sqrt(3)/2`.
pub fn allocation_matrix_inverse() -> Matrix2<f64> {
    let inv_sqrt3 = 1.0 / 3f64.sqrt();
    Matrix2::new(-inv_sqrt3, -1.0, 2.0 * inv_sqrt3, 0.0)
}

pub fn xi(p: &ActuatorPressures) -> AllocatedInput {
    let d_ab = p.p_a - p.p_b;
    let d_bc = p.p_b - p.p_c;
    let dp = allocation_matrix() * Vector2::new(d_ab, d_bc);
    AllocatedInput::new(dp[0], dp[1], p.min())
}

/// Recovers `(dp_AB, dp_BC)` from the orientation-aligned differences.
pub fn pairwise_differences(dp: &Vector2<f64>) -> (f64, f64) {
    let d = allocation_matrix_inverse() * dp;
    (d[0], d[1])
}

pub fn xi_inv(v: &AllocatedInput) -> ActuatorPressures {
    let (d_ab, d_bc) = pairwise_differences(&v.differences());
    let pb = v.p_bar;
    ActuatorPressures {
        p_a: pb.max(pb + d_ab).max(pb + d_ab + d_bc),
        p_b: pb.max(pb + d_bc).max(pb - d_ab),
        p_c: pb.max(pb - d_bc).max(pb - d_ab - d_bc),
    }
}

/// Half-plane `normal . u <= offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl HalfPlane {
    pub fn slack(&self, u: &Vector2<f64>) -> f64 {
        self.offset - self.normal.dot(u)
    }
}

/// Feasible `(dp_alpha_sp, dp_beta_sp)` set induced by the pressure box.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPolytope {
    pub half_planes: Vec<HalfPlane>,
    pub p_min: f64,
    pub p_max: f64,
    pub p_bar: f64,
}

impl InputPolytope {
    /// Closed-set membership with an absolute tolerance on every face.
    pub fn contains(&self, u: &Vector2<f64>, tol: f64) -> bool {
        self.half_planes.iter().all(|hp| hp.slack(u) >= -tol)
    }

    /// Largest face violation, zero when inside.
    pub fn max_violation(&self, u: &Vector2<f64>) -> f64 {
        self.half_planes.iter().map(|hp| -hp.slack(u)).fold(0.0, f64::max)
    }

    /// The six vertices in counter-clockwise order.
    pub fn vertices(&self) -> Vec<Vector2<f64>> {
        let w = self.p_max - self.p_bar;
        let t = allocation_matrix();
        [(w, 0.0), (0.0, w), (-w, w), (-w, 0.0), (0.0, -w), (w, -w)]
            .iter()
            .map(|&(ab, bc)| t * Vector2::new(ab, bc))
            .collect()
    }
}

/// Builds the hexagon `|dp_AB|, |dp_BC|, |dp_AB + dp_BC| <= p_max - p_bar`
/// expressed in `(dp_alpha, dp_beta)` coordinates.
pub fn build_input_polytope(p_min: f64, p_max: f64, p_bar: f64) -> Result<InputPolytope> {
    if !(p_min.is_finite() && p_max.is_finite() && p_bar.is_finite()) {
        return Err(Error::InvalidParameter("pressure bounds must be finite".into()));
    }
    if p_bar >= p_max {
        return Err(Error::InvalidParameter(format!(
            "p_bar = {p_bar} must be below p_max = {p_max}"
        )));
    }
    if p_bar < p_min {
        return Err(Error::InvalidParameter(format!(
            "p_bar = {p_bar} must not be below p_min = {p_min}"
        )));
    }
    let w = p_max - p_bar;
    // Normals in (dp_AB, dp_BC) space, pulled back through T^-1.
    let t_inv_t = allocation_matrix_inverse().transpose();
    let half_planes = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0)]
        .iter()
        .map(|&(a, b)| HalfPlane { normal: t_inv_t * Vector2::new(a, b), offset: w })
        .collect();
    Ok(InputPolytope { half_planes, p_min, p_max, p_bar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn allocation_matrix_is_invertible() {
        let det = allocation_matrix().determinant();
        assert!(close(det, SQRT3_2, 1e-15));
        let prod = allocation_matrix() * allocation_matrix_inverse();
        assert!((prod - Matrix2::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn equal_pressures_give_zero_differences() {
        let v = xi(&ActuatorPressures::new(1.2, 1.2, 1.2));
        assert_eq!((v.dp_alpha, v.dp_beta, v.p_bar), (0.0, 0.0, 1.2));
    }

    #[test]
    fn hand_evaluated_mapping() {
        // dp_AB = 0.2, dp_BC = 0.1
        let v = xi(&ActuatorPressures::new(1.3, 1.1, 1.0));
        assert!(close(v.dp_alpha, 0.1 * SQRT3_2, 1e-12));
        assert!(close(v.dp_beta, -0.25, 1e-12));
        assert_eq!(v.p_bar, 1.0);
    }

    #[test]
    fn zero_differences_give_uniform_pressure() {
        let p = xi_inv(&AllocatedInput::new(0.0, 0.0, 1.05));
        assert_eq!(p, ActuatorPressures::new(1.05, 1.05, 1.05));
    }

    #[test]
    fn origin_is_feasible_at_nominal_bounds() {
        let poly = build_input_polytope(1.0, 1.9, 1.05).unwrap();
        assert!(poly.contains(&Vector2::zeros(), 0.0));
        assert_eq!(poly.half_planes.len(), 6);
    }

    #[test]
    fn rejects_degenerate_bounds() {
        assert!(build_input_polytope(1.0, 1.9, 1.9).is_err());
        assert!(build_input_polytope(1.0, 1.9, 2.0).is_err());
        assert!(build_input_polytope(1.0, 1.9, 0.9).is_err());
    }

    #[test]
    fn just_outside_dp_ab_face_is_infeasible() {
        let poly = build_input_polytope(1.0, 1.9, 1.05).unwrap();
        let w = 1.9 - 1.05;
        let eps = 1e-6;
        let on = allocation_matrix() * Vector2::new(w, 0.0);
        let out = allocation_matrix() * Vector2::new(w + eps, 0.0);
        assert!(poly.contains(&on, 1e-12));
        assert!(!poly.contains(&out, 1e-9));
        assert!(xi_inv(&AllocatedInput::from_vector(&out, 1.05)).p_a > 1.9);
    }

    #[test]
    fn vertices_lie_on_two_faces() {
        let poly = build_input_polytope(1.0, 1.9, 1.05).unwrap();
        for v in poly.vertices() {
            let active = poly.half_planes.iter().filter(|hp| hp.slack(&v).abs() < 1e-12).count();
            assert_eq!(active, 2);
        }
    }

    proptest! {
        #[test]
        fn pressures_round_trip(p_a in 0.5f64..3.0, p_b in 0.5f64..3.0, p_c in 0.5f64..3.0) {
            let p = ActuatorPressures::new(p_a, p_b, p_c);
            let q = xi_inv(&xi(&p));
            prop_assert!(close(q.p_a, p_a, 1e-12) && close(q.p_b, p_b, 1e-12) && close(q.p_c, p_c, 1e-12));
        }

        #[test]
        fn allocated_round_trip(a in -1.5f64..1.5, b in -1.5f64..1.5, pb in 0.1f64..2.0) {
            let v = AllocatedInput::new(a, b, pb);
            let p = xi_inv(&v);
            prop_assert_eq!(p.min(), pb);
            let w = xi(&p);
            prop_assert!(close(w.dp_alpha, a, 1e-12) && close(w.dp_beta, b, 1e-12));
            prop_assert_eq!(w.p_bar, pb);
        }
    }
}
