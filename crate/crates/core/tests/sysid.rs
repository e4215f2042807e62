use softarm::allocation::build_input_polytope;
use softarm::dynamics::{ModelParams, TruePlantConfig};
use softarm::sysid::{
    differentiate, fit_model, fit_model_split, generate_excitation, identify, simulate_experiment, DiffSettings,
    Excitation, FitOptions, SysidSettings,
};
use softarm::{P_BAR, P_MAX, P_MIN};

fn linear_plant(p: ModelParams) -> TruePlantConfig {
    TruePlantConfig::nominal(p)
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn noiseless_linear_data_recovers_every_coefficient() {
    let poly = build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap();
    let cases = [
        ModelParams::default(),
        ModelParams {
            k_alpha: 180.0,
            k_beta: 260.0,
            d_alpha: 4.5,
            d_beta: 8.0,
            h_alpha: 480.0,
            h_beta: 600.0,
            tau_alpha: 0.06,
            tau_beta: 0.04,
            c_alpha: 0.02,
            c_beta: -0.015,
        },
    ];
    for truth in cases {
        let run = identify(&linear_plant(truth), &SysidSettings::default(), &poly, 3).unwrap();
        let got = run.report.params.as_array();
        for ((name, want), have) in ModelParams::NAMES.iter().zip(truth.as_array()).zip(got) {
            assert!(rel(have, want) <= 0.01, "{name}: {have} vs {want}");
        }
        assert!(run.report.warnings.is_empty(), "{:?}", run.report.warnings);
    }
}

#[test]
fn normalization_does_not_change_the_fit() {
    let poly = build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap();
    let sched = generate_excitation(
        &Excitation::SinusoidSweep { frequencies: vec![0.5, 1.0, 2.0, 5.0], amplitude: 0.3, duration_each: 4.0 },
        0.005,
        &poly,
    )
    .unwrap();
    let log = simulate_experiment(&sched, &linear_plant(ModelParams::default()), 0).unwrap();
    let d = differentiate(&log, DiffSettings::default()).unwrap();
    let a = fit_model(&d, &FitOptions { normalize: true, ..Default::default() }).unwrap();
    let b = fit_model(&d, &FitOptions { normalize: false, ..Default::default() }).unwrap();
    for (x, y) in a.params.as_array().iter().zip(b.params.as_array()) {
        assert!(rel(*x, y) < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn mismatch_increases_residual() {
    let poly = build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap();
    let clean = identify(&linear_plant(ModelParams::default()), &SysidSettings::default(), &poly, 5).unwrap();
    let mismatch = TruePlantConfig::default().noiseless();
    let dirty = identify(&mismatch, &SysidSettings::default(), &poly, 5).unwrap();
    assert!(dirty.report.residual_norm() > clean.report.residual_norm());
}

#[test]
fn single_frequency_data_is_flagged_and_degrades_damping() {
    let poly = build_input_polytope(P_MIN, P_MAX, P_BAR).unwrap();
    let truth = ModelParams::default();
    let mut noisy = linear_plant(truth);
    noisy.noise_std_angle = 5e-3;
    noisy.noise_std_pressure = 1e-3;
    let steps = generate_excitation(&Excitation::Steps { levels: vec![-0.3, 0.0, 0.3], hold: 1.0 }, 0.005, &poly).unwrap();
    let sd = differentiate(&simulate_experiment(&steps, &noisy, 1).unwrap(), DiffSettings::default()).unwrap();

    let fit_with = |freqs: Vec<f64>, each: f64, seed: u64| {
        let sched = generate_excitation(
            &Excitation::SinusoidSweep { frequencies: freqs, amplitude: 0.3, duration_each: each },
            0.005,
            &poly,
        )
        .unwrap();
        let d = differentiate(&simulate_experiment(&sched, &noisy, seed).unwrap(), DiffSettings::default()).unwrap();
        fit_model_split(&d, &sd, &FitOptions::default()).unwrap()
    };
    // poor conditioning shows up as sensitivity to the noise realization
    let spread = |freqs: Vec<f64>, each: f64| {
        let est: Vec<f64> = (0..8).map(|seed| fit_with(freqs.clone(), each, seed).params.d_alpha).collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / est.len() as f64).sqrt()
    };
    let single = fit_with(vec![2.0], 24.0, 0);
    let multi = fit_with(vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0], 4.0, 0);
    assert!(single.warnings.iter().any(|w| w.contains("arm")));
    assert!(!multi.warnings.iter().any(|w| w.contains("arm")));
    let s_single = spread(vec![2.0], 24.0);
    let s_multi = spread(vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0], 4.0);
    println!("damping estimate spread: single {s_single:.5}, multi {s_multi:.5}");
    assert!(s_single > s_multi);
}
