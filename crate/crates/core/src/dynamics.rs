//! Linear arm + pressure model, its exact discretization and the richer
//! plant used as simulated ground truth.

use nalgebra::{DMatrix, Matrix6, Matrix6x2, SVector, Vector2, Vector6};

use crate::config::{KvConfig, KvSection, KvWriter};
use crate::error::{Error, Result};

/// `(alpha, alpha_dot, dp_alpha, beta, beta_dot, dp_beta)`.
pub type ArmState = Vector6<f64>;
/// Pressure-difference set points `(dp_alpha_sp, dp_beta_sp)` in bar.
pub type Input = Vector2<f64>;

pub const ALPHA: usize = 0;
pub const ALPHA_DOT: usize = 1;
pub const DP_ALPHA: usize = 2;
pub const BETA: usize = 3;
pub const BETA_DOT: usize = 4;
pub const DP_BETA: usize = 5;

/// Mass-normalized coefficients of the two spring-damper axes and the two
/// first-order pressure loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub k_alpha: f64,
    pub k_beta: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub h_alpha: f64,
    pub h_beta: f64,
    pub tau_alpha: f64,
    pub tau_beta: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            k_alpha: 230.0,
            k_beta: 230.0,
            d_alpha: 6.0,
            d_beta: 6.0,
            h_alpha: 530.0,
            h_beta: 530.0,
            tau_alpha: 0.05,
            tau_beta: 0.05,
            c_alpha: 0.01,
            c_beta: 0.01,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_alpha", self.k_alpha),
            ("k_beta", self.k_beta),
            ("d_alpha", self.d_alpha),
            ("d_beta", self.d_beta),
            ("tau_alpha", self.tau_alpha),
            ("tau_beta", self.tau_beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("h_alpha", self.h_alpha), ("h_beta", self.h_beta)] {
            if !v.is_finite() || v == 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be nonzero, got {v}")));
            }
        }
        if !(self.c_alpha.is_finite() && self.c_beta.is_finite()) {
            return Err(Error::InvalidParameter("coupling coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 10] {
        [
            self.k_alpha,
            self.k_beta,
            self.d_alpha,
            self.d_beta,
            self.h_alpha,
            self.h_beta,
            self.tau_alpha,
            self.tau_beta,
            self.c_alpha,
            self.c_beta,
        ]
    }

    pub const NAMES: [&'static str; 10] = [
        "k_alpha", "k_beta", "d_alpha", "d_beta", "h_alpha", "h_beta", "tau_alpha", "tau_beta",
        "c_alpha", "c_beta",
    ];
}

impl KvSection for ModelParams {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("model.k_alpha", &mut self.k_alpha)?;
        cfg.set("model.k_beta", &mut self.k_beta)?;
        cfg.set("model.d_alpha", &mut self.d_alpha)?;
        cfg.set("model.d_beta", &mut self.d_beta)?;
        cfg.set("model.h_alpha", &mut self.h_alpha)?;
        cfg.set("model.h_beta", &mut self.h_beta)?;
        cfg.set("model.tau_alpha", &mut self.tau_alpha)?;
        cfg.set("model.tau_beta", &mut self.tau_beta)?;
        cfg.set("model.c_alpha", &mut self.c_alpha)?;
        cfg.set("model.c_beta", &mut self.c_beta)?;
        self.validate()
    }

    fn write(&self, out: &mut KvWriter) {
        for (name, v) in Self::NAMES.iter().zip(self.as_array()) {
            out.put(&format!("model.{name}"), v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: Matrix6<f64>,
    pub b: Matrix6x2<f64>,
}

/// Fills the two decoupled 3x3 blocks.
pub fn build_continuous(p: &ModelParams) -> Result<ContinuousModel> {
    p.validate()?;
    let mut a = Matrix6::zeros();
    let mut b = Matrix6x2::zeros();
    let axes = [
        (0, 0, p.k_alpha, p.d_alpha, p.h_alpha, p.tau_alpha, p.c_alpha),
        (3, 1, p.k_beta, p.d_beta, p.h_beta, p.tau_beta, p.c_beta),
    ];
    for (o, col, k, d, h, tau, c) in axes {
        a[(o, o + 1)] = 1.0;
        a[(o + 1, o)] = -k;
        a[(o + 1, o + 1)] = -d;
        a[(o + 1, o + 2)] = h;
        a[(o + 2, o + 1)] = c;
        a[(o + 2, o + 2)] = -1.0 / tau;
        b[(o + 2, col)] = 1.0 / tau;
    }
    Ok(ContinuousModel { a, b })
}

/// Zero-order-hold model `x+ = A x + B u + E d` with `d` held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: Matrix6<f64>,
    pub b: Matrix6x2<f64>,
    pub e: Matrix6<f64>,
    pub ts: f64,
}

impl DiscreteModel {
    pub fn step(&self, x: &ArmState, u: &Input, d: &Vector6<f64>) -> ArmState {
        self.a * x + self.b * u + self.e * d
    }
}

/// Exact discretization. `A`, `B` and `E` come out of a single exponential
/// of the block matrix `[[A_c, B_c, I], [0, 0, 0], [0, 0, 0]] * Ts`, which
/// does not need `A_c` to be invertible.
pub fn discretize(m: &ContinuousModel, ts: f64) -> Result<DiscreteModel> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidParameter(format!("sampling time must be positive, got {ts}")));
    }
    let n = 6 + 2 + 6;
    let mut big = DMatrix::<f64>::zeros(n, n);
    big.view_mut((0, 0), (6, 6)).copy_from(&m.a);
    big.view_mut((0, 6), (6, 2)).copy_from(&m.b);
    big.view_mut((0, 8), (6, 6)).copy_from(&Matrix6::<f64>::identity());
    let phi = (big * ts).exp();
    Ok(DiscreteModel {
        a: phi.fixed_view::<6, 6>(0, 0).into_owned(),
        b: phi.fixed_view::<6, 2>(0, 6).into_owned(),
        e: phi.fixed_view::<6, 6>(0, 8).into_owned(),
        ts,
    })
}

/// Model mismatch knobs of the simulated plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePlantConfig {
    pub base: ModelParams,
    /// Cross-axis torque `coupling_gain * sin(alpha) * sin(beta)` in rad/s^2.
    pub coupling_gain: f64,
    /// Final value of the slowly building alpha-axis torque, rad/s^2.
    pub relaxation_amplitude: f64,
    pub relaxation_timescale: f64,
    pub noise_std_angle: f64,
    pub noise_std_pressure: f64,
}

impl TruePlantConfig {
    /// The plant that coincides with the linear model.
    pub fn nominal(base: ModelParams) -> Self {
        Self {
            base,
            coupling_gain: 0.0,
            relaxation_amplitude: 0.0,
            relaxation_timescale: 1.0,
            noise_std_angle: 0.0,
            noise_std_pressure: 0.0,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_std_angle = 0.0;
        self.noise_std_pressure = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for (name, v) in [
            ("coupling_gain", self.coupling_gain),
            ("relaxation_amplitude", self.relaxation_amplitude.abs()),
            ("relaxation_timescale", self.relaxation_timescale),
            ("noise_std_angle", self.noise_std_angle),
            ("noise_std_pressure", self.noise_std_pressure),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("plant.{name} must be nonnegative")));
            }
        }
        Ok(())
    }

    /// Relaxation torque at time `t`.
    pub fn relaxation(&self, t: f64) -> f64 {
        if self.relaxation_timescale > 0.0 {
            self.relaxation_amplitude * (1.0 - (-t / self.relaxation_timescale).exp())
        } else {
            self.relaxation_amplitude
        }
    }
}

impl Default for TruePlantConfig {
    fn default() -> Self {
        Self {
            base: ModelParams::default(),
            coupling_gain: 40.0,
            relaxation_amplitude: 35.0,
            relaxation_timescale: 1.0,
            noise_std_angle: 1e-4,
            noise_std_pressure: 1e-3,
        }
    }
}

impl KvSection for TruePlantConfig {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        self.base.apply(cfg)?;
        cfg.set("plant.coupling_gain", &mut self.coupling_gain)?;
        cfg.set("plant.relaxation_amplitude", &mut self.relaxation_amplitude)?;
        cfg.set("plant.relaxation_timescale", &mut self.relaxation_timescale)?;
        cfg.set("plant.noise_std_angle", &mut self.noise_std_angle)?;
        cfg.set("plant.noise_std_pressure", &mut self.noise_std_pressure)?;
        self.validate()
    }

    fn write(&self, out: &mut KvWriter) {
        self.base.write(out);
        out.put("plant.coupling_gain", self.coupling_gain)
            .put("plant.relaxation_amplitude", self.relaxation_amplitude)
            .put("plant.relaxation_timescale", self.relaxation_timescale)
            .put("plant.noise_std_angle", self.noise_std_angle)
            .put("plant.noise_std_pressure", self.noise_std_pressure);
    }
}

/// Number of RK4 substeps per call to [`step_true_plant`].
pub const PLANT_SUBSTEPS: usize = 4;

fn plant_derivative(
    cm: &ContinuousModel,
    cfg: &TruePlantConfig,
    x: &ArmState,
    u: &Input,
    t: f64,
) -> ArmState {
    let mut dx = cm.a * x + cm.b * u;
    let coupling = cfg.coupling_gain * x[ALPHA].sin() * x[BETA].sin();
    dx[ALPHA_DOT] += coupling + cfg.relaxation(t);
    dx[BETA_DOT] += coupling;
    dx
}

/// Generic classic RK4 step.
pub fn rk4<const N: usize>(
    x: &SVector<f64, N>,
    t: f64,
    dt: f64,
    f: impl Fn(&SVector<f64, N>, f64) -> SVector<f64, N>,
) -> SVector<f64, N> {
    let k1 = f(x, t);
    let k2 = f(&(x + k1 * (0.5 * dt)), t + 0.5 * dt);
    let k3 = f(&(x + k2 * (0.5 * dt)), t + 0.5 * dt);
    let k4 = f(&(x + k3 * dt), t + dt);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Stateful ground-truth plant: caches the continuous matrices.
#[derive(Debug, Clone)]
pub struct TruePlant {
    cfg: TruePlantConfig,
    cm: ContinuousModel,
}

impl TruePlant {
    pub fn new(cfg: TruePlantConfig) -> Result<Self> {
        cfg.validate()?;
        let cm = build_continuous(&cfg.base)?;
        Ok(Self { cfg, cm })
    }

    pub fn config(&self) -> &TruePlantConfig {
        &self.cfg
    }

    /// Advances `state` from `t` to `t + dt` holding the set point `u`.
    pub fn step(&self, state: &ArmState, u: &Input, t: f64, dt: f64) -> ArmState {
        let h = dt / PLANT_SUBSTEPS as f64;
        let mut x = *state;
        for i in 0..PLANT_SUBSTEPS {
            let ti = t + i as f64 * h;
            x = rk4(&x, ti, h, |x, t| plant_derivative(&self.cm, &self.cfg, x, u, t));
        }
        x
    }
}

/// One-shot form of [`TruePlant::step`]. Measurement noise is the caller's job.
pub fn step_true_plant(
    state: &ArmState,
    u: &Input,
    cfg: &TruePlantConfig,
    t: f64,
    dt: f64,
) -> Result<ArmState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    Ok(TruePlant::new(*cfg)?.step(state, u, t, dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_rows_and_pressure_decay() {
        let p = ModelParams::default();
        let m = build_continuous(&p).unwrap();
        assert_eq!(m.a.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.a[(2, 2)], -1.0 / p.tau_alpha);
        assert_eq!(m.a[(5, 5)], -1.0 / p.tau_beta);
        assert_eq!(m.b[(2, 0)], 1.0 / p.tau_alpha);
        // off-diagonal blocks are empty
        assert_eq!(m.a.view((0, 3), (3, 3)).abs().max(), 0.0);
        assert_eq!(m.a.view((3, 0), (3, 3)).abs().max(), 0.0);
    }

    #[test]
    fn default_model_is_hurwitz() {
        let m = build_continuous(&ModelParams::default()).unwrap();
        let eig = m.a.complex_eigenvalues();
        assert!(eig.iter().all(|l| l.re < 0.0), "{eig:?}");
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let p = ModelParams { tau_beta: 0.0, ..Default::default() };
        assert!(build_continuous(&p).is_err());
        let p = ModelParams { tau_alpha: -0.1, ..Default::default() };
        assert!(build_continuous(&p).is_err());
    }

    #[test]
    fn zero_dynamics_limit() {
        let mut m = build_continuous(&ModelParams::default()).unwrap();
        m.a = Matrix6::zeros();
        let ts = 0.02;
        let d = discretize(&m, ts).unwrap();
        assert!((d.a - Matrix6::identity()).abs().max() < 1e-15);
        assert!((d.b - m.b * ts).abs().max() < 1e-15);
        assert!((d.e - Matrix6::identity() * ts).abs().max() < 1e-15);
    }

    #[test]
    fn scalar_decay_block() {
        let mut m = ContinuousModel { a: Matrix6::zeros(), b: Matrix6x2::zeros() };
        m.a[(0, 0)] = -1.0;
        let ts = 0.37;
        let d = discretize(&m, ts).unwrap();
        assert!((d.a[(0, 0)] - (-ts).exp()).abs() < 1e-14);
        assert!((d.e[(0, 0)] - (1.0 - (-ts).exp())).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_sampling_time() {
        let m = build_continuous(&ModelParams::default()).unwrap();
        assert!(discretize(&m, 0.0).is_err());
        assert!(discretize(&m, f64::NAN).is_err());
    }

    #[test]
    fn plant_at_rest_stays_at_rest() {
        let cfg = TruePlantConfig::nominal(ModelParams::default());
        let mut x = ArmState::zeros();
        for k in 0..400 {
            x = step_true_plant(&x, &Input::zeros(), &cfg, k as f64 * 0.005, 0.005).unwrap();
        }
        assert_eq!(x, ArmState::zeros());
    }

    #[test]
    fn relaxation_pushes_alpha_in_its_sign() {
        for amp in [50.0, -50.0] {
            let cfg = TruePlantConfig {
                relaxation_amplitude: amp,
                relaxation_timescale: 0.2,
                ..TruePlantConfig::nominal(ModelParams::default())
            };
            let plant = TruePlant::new(cfg).unwrap();
            let mut x = ArmState::zeros();
            for k in 0..2000 {
                x = plant.step(&x, &Input::zeros(), k as f64 * 0.005, 0.005);
            }
            // static balance k * alpha = torque
            let expected = amp / cfg.base.k_alpha;
            assert_eq!(x[ALPHA].signum(), amp.signum());
            assert!((x[ALPHA] - expected).abs() < 1e-6, "{} vs {expected}", x[ALPHA]);
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = TruePlantConfig { coupling_gain: 7.5, ..Default::default() };
        let mut w = KvWriter::default();
        cfg.write(&mut w);
        let kv = KvConfig::parse(&w.finish()).unwrap();
        let mut back = TruePlantConfig::nominal(ModelParams { k_alpha: 1.0, ..Default::default() });
        back.apply(&kv).unwrap();
        kv.ensure_consumed().unwrap();
        assert_eq!(back, cfg);
    }
}
