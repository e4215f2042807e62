//! Oracle checks for allocation, discretization, estimation, targets and MPC.

use nalgebra::{DMatrix, Vector2, Vector6};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softarm::acceptance;
use softarm::allocation::{build_input_polytope, xi_inv, AllocatedInput};
use softarm::dynamics::{build_continuous, discretize, ArmState, ModelParams, ALPHA_DOT, BETA_DOT};
use softarm::estimation::{solve_dare, AugmentedModel, DisturbanceEstimate, DisturbanceObserver, NoiseLevels};
use softarm::mpc::{ControllerMode, MpcConfig, MpcController, WeightSpec};
use softarm::{CONTROL_PERIOD, P_BAR, P_MAX, P_MIN};

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

#[test]
fn xi_round_trip_to_machine_precision() {
    assert!(acceptance::xi_round_trip(&mut rng(), 20_000) <= 1e-12);
}

#[test]
fn polytope_matches_pressure_box_on_grid() {
    assert_eq!(acceptance::polytope_grid_disagreements(200).unwrap(), 0);
}

#[test]
fn exact_discretization_matches_fine_integration() {
    let err = acceptance::discretization_error(&mut rng(), 30).unwrap();
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn scalar_riccati_matches_closed_form() {
    let err = acceptance::dare_scalar_error().unwrap();
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn riccati_solution_is_a_fixed_point() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.95]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1e-3, 1e-2]));
    let r = DMatrix::from_element(1, 1, 1e-2);
    let sol = solve_dare(&a, &c, &q, &r).unwrap();
    let p = &sol.p;
    let s = &c * p * c.transpose() + &r;
    let next = &a * (p - p * c.transpose() * s.try_inverse().unwrap() * &c * p) * a.transpose() + &q;
    assert!((next - p).amax() < 1e-9);
}

#[test]
fn filter_recursion_is_stable() {
    assert!(acceptance::filter_spectral_radius().unwrap() < 1.0);
}

#[test]
fn observer_converges_to_constant_disturbance() {
    let model = discretize(&build_continuous(&ModelParams::default()).unwrap(), CONTROL_PERIOD).unwrap();
    let aug = AugmentedModel::from_levels(&model, &NoiseLevels::default()).unwrap();
    let mut obs = DisturbanceObserver::new(aug, DisturbanceEstimate::zero());
    let d = Vector6::new(0.0, 12.0, 0.0, 0.0, -7.0, 0.0);
    let u = Vector2::new(0.05, -0.02);
    let mut x = ArmState::zeros();
    for _ in 0..1000 {
        x = model.step(&x, &u, &d);
        obs.update(&u, &x);
    }
    let est = obs.estimate();
    assert!((est.x_hat - x).amax() < 1e-6);
    // every channel reproduces the true one-step effect, which is all the data pins down
    assert!((model.e * (est.d_hat - d)).amax() < 1e-6);
    assert!((est.d_hat[ALPHA_DOT] - 12.0).abs() < 0.5 && (est.d_hat[BETA_DOT] + 7.0).abs() < 0.5);
}

#[test]
fn targets_hold_reference_under_disturbance() {
    let err = acceptance::target_plug_back(&mut rng(), 500).unwrap();
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn unconstrained_mpc_equals_lqr() {
    let err = acceptance::qp_vs_lqr(&mut rng(), 30).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn constrained_inputs_stay_in_polytope() {
    let model = discretize(&build_continuous(&ModelParams::default()).unwrap(), CONTROL_PERIOD).unwrap();
    let poly = build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap();
    let cfg = MpcConfig::from_weights(&WeightSpec::default(), 50, CONTROL_PERIOD, Some(poly.clone()));
    let mut ctrl = MpcController::new(model, cfg).unwrap();
    let refs = vec![softarm::Angles::from_degrees(80.0, -70.0); 51];
    let out = ctrl.control_step(&ArmState::zeros(), &Vector2::zeros(), &Vector6::zeros(), &refs).unwrap();
    for u in &out.solution.inputs {
        assert!(poly.contains(u, 1e-6), "{u:?}");
    }
    assert!(out.pressures.within(P_MIN, P_MAX, 1e-6));
}

#[test]
fn standard_mode_drops_the_estimate() {
    let model = discretize(&build_continuous(&ModelParams::default()).unwrap(), CONTROL_PERIOD).unwrap();
    let mut cfg = MpcConfig::from_weights(&WeightSpec::default(), 20, CONTROL_PERIOD, None);
    cfg.mode = ControllerMode::Standard;
    let ctrl = MpcController::new(model, cfg).unwrap();
    assert_eq!(ctrl.effective_disturbance(&Vector6::repeat(3.0)), Vector6::zeros());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allocated_inputs_in_polytope_map_into_pressure_box(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let poly = build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap();
        let u = Vector2::new(a, b);
        let p = xi_inv(&AllocatedInput::from_vector(&u, P_BAR));
        if poly.contains(&u, 0.0) {
            prop_assert!(p.within(P_MIN, P_MAX, 1e-12));
        } else {
            prop_assert!(p.max() > P_MAX - 1e-12);
        }
    }

    #[test]
    fn discretization_is_consistent_across_periods(ts in 0.001f64..0.05) {
        let cm = build_continuous(&ModelParams::default()).unwrap();
        let one = discretize(&cm, 2.0 * ts).unwrap();
        let half = discretize(&cm, ts).unwrap();
        prop_assert!((one.a - half.a * half.a).amax() < 1e-10);
        prop_assert!((one.b - (half.a * half.b + half.b)).amax() < 1e-10);
    }
}
