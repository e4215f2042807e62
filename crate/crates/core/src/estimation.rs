//! Disturbance-augmented steady-state Kalman filter.
//!
//! The plant model is augmented with a constant disturbance `d` acting on
//! every state derivative. The 12-state model is observed through the six
//! measured states, the prior-covariance Riccati equation is iterated to its
//! fixed point, and the filter then runs the constant-gain recursion
//! `xi(k) = A_hat xi(k-1) + B_hat u(k-1) + K z(k)`.

use nalgebra::{Complex, DMatrix, SMatrix, SVector, Vector6};

use crate::config::{KvConfig, KvSection, KvWriter};
use crate::dynamics::{ArmState, DiscreteModel, Input};
use crate::error::{Error, Result};

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

/// Cap on fixed-point iterations of the Riccati recursion.
pub const DARE_MAX_ITERATIONS: usize = 10_000;
/// Convergence threshold on the largest entry of `P(k+1) - P(k)`.
pub const DARE_TOLERANCE: f64 = 1e-10;
/// Asymmetry that is repaired silently; anything larger is an error.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub q_proc: Matrix12,
    pub r_meas: SMatrix<f64, 6, 6>,
}

/// Per-channel standard deviations used to build diagonal covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    pub std_angle: f64,
    pub std_rate: f64,
    pub std_pressure: f64,
    pub q_state: f64,
    pub q_disturbance: f64,
    /// Saturation guard on every disturbance channel.
    pub d_max: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            std_angle: 1e-3,
            std_rate: 1e-2,
            std_pressure: 1e-3,
            q_state: 1e-6,
            q_disturbance: 1e-2,
            d_max: 1e3,
        }
    }
}

impl NoiseLevels {
    pub fn noise_config(&self) -> NoiseConfig {
        let mut q = Matrix12::zeros();
        for i in 0..6 {
            q[(i, i)] = self.q_state;
            q[(i + 6, i + 6)] = self.q_disturbance;
        }
        let per_axis = [self.std_angle, self.std_rate, self.std_pressure];
        let mut r = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..6 {
            r[(i, i)] = per_axis[i % 3].powi(2);
        }
        NoiseConfig { q_proc: q, r_meas: r }
    }
}

impl KvSection for NoiseLevels {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("kf.std_angle", &mut self.std_angle)?;
        cfg.set("kf.std_rate", &mut self.std_rate)?;
        cfg.set("kf.std_pressure", &mut self.std_pressure)?;
        cfg.set("kf.q_state", &mut self.q_state)?;
        cfg.set("kf.q_disturbance", &mut self.q_disturbance)?;
        cfg.set("kf.d_max", &mut self.d_max)?;
        let all = [self.std_angle, self.std_rate, self.std_pressure, self.q_state, self.q_disturbance, self.d_max];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("kalman filter noise levels must be positive".into()));
        }
        Ok(())
    }

    fn write(&self, out: &mut KvWriter) {
        out.put("kf.std_angle", self.std_angle)
            .put("kf.std_rate", self.std_rate)
            .put("kf.std_pressure", self.std_pressure)
            .put("kf.q_state", self.q_state)
            .put("kf.q_disturbance", self.q_disturbance)
            .put("kf.d_max", self.d_max);
    }
}

/// Converged Riccati solution.
#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Steady-state prior (one-step predicted) covariance.
    pub p: DMatrix<f64>,
    /// Filter gain `P C' (C P C' + R)^-1`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn check_covariance(name: &str, m: &DMatrix<f64>, definite: bool) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::Asymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let ok = if definite { min_eig > 0.0 } else { min_eig >= -1e-12 * scale };
    if !ok {
        return Err(Error::InvalidParameter(format!(
            "{name} must be positive {}definite (min eigenvalue {min_eig:e})",
            if definite { "" } else { "semi-" }
        )));
    }
    Ok(())
}

/// Solves the filtering Riccati equation by fixed-point iteration of the
/// covariance recursion, starting from `Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    let m = c.nrows();
    if !a.is_square() || c.ncols() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "A {:?}, C {:?}, Q {:?}, R {:?}",
            a.shape(),
            c.shape(),
            q.shape(),
            r.shape()
        )));
    }
    check_covariance("Q", q, false)?;
    check_covariance("R", r, true)?;

    let eye = DMatrix::<f64>::identity(n, n);
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = c * p * c.transpose() + r;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("innovation covariance lost definiteness".into()))?;
        // K = P C' S^-1  <=>  S K' = C P
        Ok(chol.solve(&(c * p)).transpose())
    };

    let mut p = q.clone();
    let mut last_change = f64::INFINITY;
    for it in 1..=DARE_MAX_ITERATIONS {
        let k = gain(&p)?;
        let ikc = &eye - &k * c;
        // Joseph form keeps the update symmetric PSD
        let post = &ikc * &p * ikc.transpose() + &k * r * k.transpose();
        let mut next = a * post * a.transpose() + q;
        let asym = max_abs(&(&next - next.transpose()));
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::Asymmetric(asym));
        }
        next = (&next + next.transpose()) * 0.5;
        let change = max_abs(&(&next - &p));
        // linear convergence: the remaining error is about change * rate / (1 - rate)
        let rate = (change / last_change).min(0.999);
        last_change = change;
        p = next;
        if change < DARE_TOLERANCE && change * rate / (1.0 - rate) < 0.01 * DARE_TOLERANCE {
            let k = gain(&p)?;
            return Ok(DareSolution { p, k, iterations: it });
        }
    }
    Err(Error::RiccatiNotConverged { iterations: DARE_MAX_ITERATIONS, last_change })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0, |acc, l| acc.max(l.norm()))
}

/// PBH test: every eigenvalue on or outside the unit circle must be
/// observable through `C`.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let scale = 1.0 + a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { *lambda } else { Complex::new(0.0, 0.0) };
                pbh[(i, j)] = diag - Complex::new(a[(i, j)], 0.0);
            }
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                pbh[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        if sv.min() < 1e-9 * scale {
            return false;
        }
    }
    true
}

/// The 12-state model together with its steady-state filter matrices.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub a_aug: Matrix12,
    pub b_aug: SMatrix<f64, 12, 2>,
    pub c_aug: SMatrix<f64, 6, 12>,
    pub k_inf: SMatrix<f64, 12, 6>,
    pub p_inf: Matrix12,
    /// `(I - K C) A_aug`
    pub a_hat: Matrix12,
    /// `(I - K C) B_aug`
    pub b_hat: SMatrix<f64, 12, 2>,
    pub d_max: f64,
}

pub fn augment(model: &DiscreteModel) -> (Matrix12, SMatrix<f64, 12, 2>, SMatrix<f64, 6, 12>) {
    let mut a = Matrix12::zeros();
    a.fixed_view_mut::<6, 6>(0, 0).copy_from(&model.a);
    a.fixed_view_mut::<6, 6>(0, 6).copy_from(&model.e);
    a.fixed_view_mut::<6, 6>(6, 6).fill_with_identity();
    let mut b = SMatrix::<f64, 12, 2>::zeros();
    b.fixed_view_mut::<6, 2>(0, 0).copy_from(&model.b);
    let mut c = SMatrix::<f64, 6, 12>::zeros();
    c.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();
    (a, b, c)
}

impl AugmentedModel {
    pub fn new(model: &DiscreteModel, noise: &NoiseConfig, d_max: f64) -> Result<Self> {
        let (a_aug, b_aug, c_aug) = augment(model);
        let a_dyn = DMatrix::from_column_slice(12, 12, a_aug.as_slice());
        let c_dyn = DMatrix::from_column_slice(6, 12, c_aug.as_slice());
        if !is_detectable(&a_dyn, &c_dyn) {
            return Err(Error::NotDetectable);
        }
        let q = DMatrix::from_column_slice(12, 12, noise.q_proc.as_slice());
        let r = DMatrix::from_column_slice(6, 6, noise.r_meas.as_slice());
        let sol = solve_dare(&a_dyn, &c_dyn, &q, &r)?;
        let k_inf = SMatrix::<f64, 12, 6>::from_column_slice(sol.k.as_slice());
        let p_inf = Matrix12::from_column_slice(sol.p.as_slice());
        let ikc = Matrix12::identity() - k_inf * c_aug;
        log::debug!("steady-state kalman gain converged after {} iterations", sol.iterations);
        Ok(Self {
            a_aug,
            b_aug,
            c_aug,
            k_inf,
            p_inf,
            a_hat: ikc * a_aug,
            b_hat: ikc * b_aug,
            d_max,
        })
    }

    pub fn from_levels(model: &DiscreteModel, levels: &NoiseLevels) -> Result<Self> {
        Self::new(model, &levels.noise_config(), levels.d_max)
    }

    pub fn recursion_spectral_radius(&self) -> f64 {
        spectral_radius(&DMatrix::from_column_slice(12, 12, self.a_hat.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceEstimate {
    pub x_hat: ArmState,
    pub d_hat: Vector6<f64>,
}

impl DisturbanceEstimate {
    pub fn zero() -> Self {
        Self { x_hat: ArmState::zeros(), d_hat: Vector6::zeros() }
    }

    pub fn from_measurement(z: &ArmState) -> Self {
        Self { x_hat: *z, d_hat: Vector6::zeros() }
    }

    fn stacked(&self) -> Vector12 {
        let mut v = Vector12::zeros();
        v.fixed_rows_mut::<6>(0).copy_from(&self.x_hat);
        v.fixed_rows_mut::<6>(6).copy_from(&self.d_hat);
        v
    }
}

/// One step of the constant-gain recursion.
pub fn kf_update(
    est: &DisturbanceEstimate,
    u_prev: &Input,
    z: &ArmState,
    model: &AugmentedModel,
) -> DisturbanceEstimate {
    let next = model.a_hat * est.stacked() + model.b_hat * u_prev + model.k_inf * z;
    let mut d_hat: Vector6<f64> = next.fixed_rows::<6>(6).into_owned();
    if d_hat.amax() > model.d_max {
        log::warn!("disturbance estimate saturated at {:.3e}", model.d_max);
        d_hat.apply(|v| *v = v.clamp(-model.d_max, model.d_max));
    }
    DisturbanceEstimate { x_hat: next.fixed_rows::<6>(0).into_owned(), d_hat }
}

/// Owns a filter instance and its current estimate.
#[derive(Debug, Clone)]
pub struct DisturbanceObserver {
    model: AugmentedModel,
    estimate: DisturbanceEstimate,
}

impl DisturbanceObserver {
    pub fn new(model: AugmentedModel, initial: DisturbanceEstimate) -> Self {
        Self { model, estimate: initial }
    }

    pub fn update(&mut self, u_prev: &Input, z: &ArmState) -> &DisturbanceEstimate {
        self.estimate = kf_update(&self.estimate, u_prev, z, &self.model);
        &self.estimate
    }

    pub fn estimate(&self) -> &DisturbanceEstimate {
        &self.estimate
    }

    pub fn model(&self) -> &AugmentedModel {
        &self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_continuous, discretize, ModelParams};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// Root of the scalar prior-covariance Riccati equation by bisection.
    fn scalar_dare_bisection(a: f64, c: f64, q: f64, r: f64) -> f64 {
        let f = |p: f64| a * a * p - a * a * p * p * c * c / (c * c * p + r) + q - p;
        let (mut lo, mut hi) = (q, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_dare_matches_bisection_root() {
        let sol = solve_dare(&scalar(0.9), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let root = scalar_dare_bisection(0.9, 1.0, 1.0, 1.0);
        assert!((sol.p[(0, 0)] - root).abs() < 1e-10, "{} vs {root}", sol.p[(0, 0)]);
        assert!((sol.k[(0, 0)] - root / (root + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn untrusted_measurements_give_vanishing_gain() {
        let sol = solve_dare(&scalar(0.9), &scalar(1.0), &scalar(1.0), &scalar(1e9)).unwrap();
        assert!(sol.k.norm() < 1e-6);
    }

    #[test]
    fn rejects_bad_covariances() {
        let r = solve_dare(&scalar(0.9), &scalar(1.0), &scalar(-1.0), &scalar(1.0));
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        let r = solve_dare(&scalar(0.9), &scalar(1.0), &scalar(1.0), &scalar(0.0));
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        let mut q = DMatrix::identity(2, 2);
        q[(0, 1)] = 1e-3;
        let r = solve_dare(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2), &q, &DMatrix::identity(2, 2));
        assert!(matches!(r, Err(Error::Asymmetric(_))));
    }

    #[test]
    fn unobservable_unstable_mode_is_not_detectable() {
        let a = DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(!is_detectable(&a, &c));
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(is_detectable(&a, &c));
    }

    #[test]
    fn singular_disturbance_map_breaks_detectability() {
        let dm = discretize(&build_continuous(&ModelParams::default()).unwrap(), 0.02).unwrap();
        let mut broken = dm.clone();
        broken.e.set_column(2, &Vector6::zeros());
        let levels = NoiseLevels::default();
        assert!(matches!(AugmentedModel::from_levels(&broken, &levels), Err(Error::NotDetectable)));
        assert!(AugmentedModel::from_levels(&dm, &levels).is_ok());
    }

    #[test]
    fn saturation_guard_clamps() {
        let dm = discretize(&build_continuous(&ModelParams::default()).unwrap(), 0.02).unwrap();
        let levels = NoiseLevels { d_max: 1.0, ..Default::default() };
        let model = AugmentedModel::from_levels(&dm, &levels).unwrap();
        let mut z = ArmState::zeros();
        z[1] = 50.0;
        let est = kf_update(&DisturbanceEstimate::zero(), &Input::zeros(), &z, &model);
        assert!(est.d_hat.amax() <= 1.0);
    }
}
