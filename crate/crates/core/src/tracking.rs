//! Disturbance-aware steady-state targets.
//!
//! For a set point `r` and disturbance estimate `d`, the target pair solves
//!
//! ```text
//! [A - I  B] [x]   [-E d]
//! [H      0] [u] = [  r ]
//! ```
//!
//! where `H` picks the two angles out of the state. The matrix depends only
//! on the model, so it is factored once and reused for every set point.

use nalgebra::{SMatrix, SVector, Vector6};

use crate::dynamics::{ArmState, DiscreteModel, Input, ALPHA, BETA};
use crate::sphere::Angles;

pub type Setpoint = Angles;

/// Above this condition number the pseudo-inverse is used.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPair {
    pub x_bar: ArmState,
    pub u_bar: Input,
}

#[derive(Debug, Clone)]
enum Factor {
    Lu(nalgebra::LU<f64, nalgebra::Const<8>, nalgebra::Const<8>>),
    PseudoInverse(SMatrix<f64, 8, 8>),
}

/// Factored target equations for one model.
#[derive(Debug, Clone)]
pub struct TargetCalculator {
    e: SMatrix<f64, 6, 6>,
    matrix: SMatrix<f64, 8, 8>,
    factor: Factor,
    condition: f64,
}

impl TargetCalculator {
    pub fn new(model: &DiscreteModel) -> Self {
        let mut m = SMatrix::<f64, 8, 8>::zeros();
        m.fixed_view_mut::<6, 6>(0, 0).copy_from(&(model.a - SMatrix::<f64, 6, 6>::identity()));
        m.fixed_view_mut::<6, 2>(0, 6).copy_from(&model.b);
        m[(6, ALPHA)] = 1.0;
        m[(7, BETA)] = 1.0;
        let sv = m.singular_values();
        let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
        let factor = if condition > CONDITION_LIMIT {
            log::warn!("target equations ill-conditioned (cond {condition:.3e}); using pseudo-inverse");
            let pinv = m.pseudo_inverse(f64::EPSILON * sv.max() * 8.0).expect("svd of finite matrix");
            Factor::PseudoInverse(pinv)
        } else {
            Factor::Lu(m.lu())
        };
        Self { e: model.e, matrix: m, factor, condition }
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// True when the minimum-norm fallback is in use.
    pub fn is_degraded(&self) -> bool {
        matches!(self.factor, Factor::PseudoInverse(_))
    }

    fn rhs(&self, r: &Setpoint, d_hat: &Vector6<f64>) -> SVector<f64, 8> {
        let mut rhs = SVector::<f64, 8>::zeros();
        rhs.fixed_rows_mut::<6>(0).copy_from(&(-(self.e * d_hat)));
        rhs[6] = r.alpha;
        rhs[7] = r.beta;
        rhs
    }

    pub fn target(&self, r: &Setpoint, d_hat: &Vector6<f64>) -> TargetPair {
        let rhs = self.rhs(r, d_hat);
        let sol = match &self.factor {
            Factor::Lu(lu) => lu.solve(&rhs).expect("nonsingular by construction"),
            Factor::PseudoInverse(p) => p * rhs,
        };
        TargetPair {
            x_bar: sol.fixed_rows::<6>(0).into_owned(),
            u_bar: sol.fixed_rows::<2>(6).into_owned(),
        }
    }

    pub fn targets(&self, refs: &[Setpoint], d_hat: &Vector6<f64>) -> Vec<TargetPair> {
        refs.iter().map(|r| self.target(r, d_hat)).collect()
    }

    /// Infinity norm of the equation residual at `pair`.
    pub fn residual(&self, pair: &TargetPair, r: &Setpoint, d_hat: &Vector6<f64>) -> f64 {
        let mut v = SVector::<f64, 8>::zeros();
        v.fixed_rows_mut::<6>(0).copy_from(&pair.x_bar);
        v.fixed_rows_mut::<2>(6).copy_from(&pair.u_bar);
        (self.matrix * v - self.rhs(r, d_hat)).amax()
    }
}

pub fn compute_target(r: &Setpoint, d_hat: &Vector6<f64>, model: &DiscreteModel) -> TargetPair {
    TargetCalculator::new(model).target(r, d_hat)
}

/// One target per set point, sharing a single factorization and the same
/// disturbance estimate across the horizon.
pub fn compute_target_trajectory(
    refs: &[Setpoint],
    d_hat: &Vector6<f64>,
    model: &DiscreteModel,
) -> Vec<TargetPair> {
    TargetCalculator::new(model).targets(refs, d_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_continuous, discretize, ModelParams, ALPHA_DOT, DP_ALPHA};
    use proptest::prelude::*;

    fn model() -> DiscreteModel {
        discretize(&build_continuous(&ModelParams::default()).unwrap(), 0.02).unwrap()
    }

    #[test]
    fn origin_target() {
        let t = compute_target(&Angles::ZERO, &Vector6::zeros(), &model());
        assert!(t.x_bar.amax() < 1e-15 && t.u_bar.amax() < 1e-15);
    }

    #[test]
    fn ten_degree_force_balance() {
        let p = ModelParams::default();
        let r = Angles::from_degrees(10.0, 0.0);
        let t = compute_target(&r, &Vector6::zeros(), &model());
        assert!((t.x_bar[ALPHA] - r.alpha).abs() < 1e-12);
        assert!(t.x_bar[ALPHA_DOT].abs() < 1e-12);
        // h * u = k * alpha and the pressure settles on its set point
        assert!((p.h_alpha * t.u_bar[0] - p.k_alpha * r.alpha).abs() < 1e-9);
        assert!((t.x_bar[DP_ALPHA] - t.u_bar[0]).abs() < 1e-12);
        assert!(t.u_bar[1].abs() < 1e-12);
    }

    #[test]
    fn trajectory_shapes() {
        let m = model();
        let refs = vec![Angles::from_degrees(5.0, -3.0); 7];
        let d = Vector6::new(0.1, 2.0, 0.0, 0.0, -1.0, 0.0);
        let ts = compute_target_trajectory(&refs, &d, &m);
        assert_eq!(ts.len(), 7);
        assert!(ts.iter().all(|t| *t == ts[0]));
    }

    #[test]
    fn ramp_targets_are_monotone() {
        let m = model();
        let refs: Vec<_> = (0..20).map(|i| Angles::new(0.01 * i as f64, 0.0)).collect();
        let ts = compute_target_trajectory(&refs, &Vector6::zeros(), &m);
        assert!(ts.windows(2).all(|w| w[1].x_bar[ALPHA] > w[0].x_bar[ALPHA]));
    }

    #[test]
    fn singular_model_falls_back_to_pseudo_inverse() {
        // an integrator in alpha makes A - I rank deficient together with H
        let mut m = model();
        m.a = SMatrix::<f64, 6, 6>::identity();
        let calc = TargetCalculator::new(&m);
        assert!(calc.is_degraded());
        let t = calc.target(&Angles::new(0.1, -0.2), &Vector6::zeros());
        assert!(t.x_bar.iter().chain(t.u_bar.iter()).all(|v| v.is_finite()));
        assert!((t.x_bar[ALPHA] - 0.1).abs() < 1e-9);
        assert!(!TargetCalculator::new(&model()).is_degraded());
    }

    proptest! {
        #[test]
        fn plug_back_and_fixed_point(
            a in -0.6f64..0.6, b in -0.6f64..0.6,
            d in proptest::array::uniform6(-50.0f64..50.0),
        ) {
            let m = model();
            let calc = TargetCalculator::new(&m);
            let r = Angles::new(a, b);
            let d = Vector6::from(d);
            let t = calc.target(&r, &d);
            prop_assert!(calc.residual(&t, &r, &d) <= 1e-8);
            let next = m.step(&t.x_bar, &t.u_bar, &d);
            prop_assert!((next - t.x_bar).amax() <= 1e-8);
        }

        #[test]
        fn target_is_linear(
            r1 in proptest::array::uniform2(-0.5f64..0.5), r2 in proptest::array::uniform2(-0.5f64..0.5),
            d1 in proptest::array::uniform6(-20.0f64..20.0), d2 in proptest::array::uniform6(-20.0f64..20.0),
        ) {
            let calc = TargetCalculator::new(&model());
            let (d1, d2) = (Vector6::from(d1), Vector6::from(d2));
            let t1 = calc.target(&Angles::new(r1[0], r1[1]), &d1);
            let t2 = calc.target(&Angles::new(r2[0], r2[1]), &d2);
            let t12 = calc.target(&Angles::new(r1[0] + r2[0], r1[1] + r2[1]), &(d1 + d2));
            prop_assert!((t1.x_bar + t2.x_bar - t12.x_bar).amax() <= 1e-8);
            prop_assert!((t1.u_bar + t2.u_bar - t12.u_bar).amax() <= 1e-8);
        }
    }
}
