//! Receding-horizon tracking MPC on the condensed (input-only) QP.
//!
//! With the stacked inputs `z = (u_0, .., u_{N-1})` the cost
//!
//! ```text
//! |x_N - xb_N|_P + sum_i |x_i - xb_i|_Q + |u_i - ub_i|_R + |u_i - u_{i-1}|_Rd
//! ```
//!
//! (every `|v|_M` read as `v'Mv`) becomes `1/2 z'Hz + g'z + c` once the
//! states are eliminated through `x_{i+1} = A x_i + B u_i + E d`. `H` only
//! depends on the model and weights and is assembled once per controller.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector2, Vector6};

use crate::allocation::{xi_inv, ActuatorPressures, AllocatedInput, InputPolytope};
use crate::config::{KvConfig, KvSection, KvWriter};
use crate::dynamics::{ArmState, DiscreteModel, Input};
use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpIterate, QpProblem, SolveDiagnostics, SolverSettings, SparseRow};
use crate::tracking::{Setpoint, TargetCalculator, TargetPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Uses the disturbance estimate in targets and predictions.
    OffsetFree,
    /// Disturbance estimate forced to zero.
    Standard,
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offset_free" => Ok(Self::OffsetFree),
            "standard" => Ok(Self::Standard),
            other => Err(Error::InvalidParameter(format!("unknown controller mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OffsetFree => "offset_free",
            Self::Standard => "standard",
        })
    }
}

/// Diagonal per-axis weights; expanded to the full matrices in [`MpcConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub q_angle: f64,
    pub q_rate: f64,
    pub q_pressure: f64,
    pub r: f64,
    pub r_d: f64,
    /// Terminal weight as a multiple of `Q`.
    pub p_scale: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { q_angle: 100.0, q_rate: 1.0, q_pressure: 0.1, r: 0.1, r_d: 1.0, p_scale: 1.0 }
    }
}

impl KvSection for WeightSpec {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.set("mpc.q_angle", &mut self.q_angle)?;
        cfg.set("mpc.q_rate", &mut self.q_rate)?;
        cfg.set("mpc.q_pressure", &mut self.q_pressure)?;
        cfg.set("mpc.r", &mut self.r)?;
        cfg.set("mpc.r_d", &mut self.r_d)?;
        cfg.set("mpc.p_scale", &mut self.p_scale)?;
        Ok(())
    }

    fn write(&self, out: &mut KvWriter) {
        out.put("mpc.q_angle", self.q_angle)
            .put("mpc.q_rate", self.q_rate)
            .put("mpc.q_pressure", self.q_pressure)
            .put("mpc.r", self.r)
            .put("mpc.r_d", self.r_d)
            .put("mpc.p_scale", self.p_scale);
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub ts: f64,
    pub q: Matrix6<f64>,
    pub r: Matrix2<f64>,
    pub p: Matrix6<f64>,
    pub r_d: Matrix2<f64>,
    /// `None` drops the input constraints entirely.
    pub polytope: Option<InputPolytope>,
    pub solver: SolverSettings,
    pub p_bar: f64,
    pub mode: ControllerMode,
}

impl MpcConfig {
    pub fn from_weights(w: &WeightSpec, horizon: usize, ts: f64, polytope: Option<InputPolytope>) -> Self {
        let q = Matrix6::from_diagonal(&Vector6::new(
            w.q_angle, w.q_rate, w.q_pressure, w.q_angle, w.q_rate, w.q_pressure,
        ));
        Self {
            horizon,
            ts,
            q,
            r: Matrix2::identity() * w.r,
            p: q * w.p_scale,
            r_d: Matrix2::identity() * w.r_d,
            polytope,
            solver: SolverSettings::default(),
            p_bar: crate::P_BAR,
            mode: ControllerMode::OffsetFree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let sym6 = |m: &Matrix6<f64>| (m - m.transpose()).amax() <= 1e-12;
        let sym2 = |m: &Matrix2<f64>| (m - m.transpose()).amax() <= 1e-12;
        if !(sym6(&self.q) && sym6(&self.p) && sym2(&self.r) && sym2(&self.r_d)) {
            return Err(Error::InvalidParameter("weight matrices must be symmetric".into()));
        }
        let min_eig6 = |m: &Matrix6<f64>| m.symmetric_eigenvalues().min();
        let min_eig2 = |m: &Matrix2<f64>| m.symmetric_eigenvalues().min();
        if min_eig6(&self.q) < 0.0 || min_eig6(&self.p) < 0.0 || min_eig2(&self.r_d) < 0.0 {
            return Err(Error::InvalidParameter("Q, P and R_d must be positive semi-definite".into()));
        }
        if min_eig2(&self.r) <= 0.0 {
            return Err(Error::InvalidParameter("R must be positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub u0: Input,
    /// Predicted inputs `u_0..u_{N-1}`.
    pub inputs: Vec<Input>,
    /// Predicted states `x_0..x_N`.
    pub states: Vec<ArmState>,
    pub diagnostics: SolveDiagnostics,
    pub iterate: QpIterate,
}

/// Precomputed condensed prediction for one model and weight set.
#[derive(Debug, Clone)]
pub struct MpcController {
    model: DiscreteModel,
    cfg: MpcConfig,
    targets: TargetCalculator,
    /// `Gamma' Qbar`, `2N x 6N`.
    gamma_t_q: DMatrix<f64>,
    hessian: DMatrix<f64>,
    constraints: Vec<SparseRow>,
    warm: Option<QpIterate>,
}

impl MpcController {
    pub fn new(model: DiscreteModel, cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.horizon;
        let nz = 2 * n;

        // Gamma block (i, j): effect of u_j on x_{i+1} = A^(i-j) B.
        let mut a_pow_b = Vec::with_capacity(n);
        let mut acc = model.b;
        for _ in 0..n {
            a_pow_b.push(acc);
            acc = model.a * acc;
        }
        let mut gamma = DMatrix::<f64>::zeros(6 * n, nz);
        for i in 0..n {
            for j in 0..=i {
                gamma.view_mut((6 * i, 2 * j), (6, 2)).copy_from(&a_pow_b[i - j]);
            }
        }
        let mut gamma_t_q = gamma.transpose();
        for i in 0..n {
            let w = if i + 1 == n { cfg.p } else { cfg.q };
            let mut blk = gamma_t_q.view_mut((0, 6 * i), (nz, 6));
            let prod = &blk * w;
            blk.copy_from(&prod);
        }
        let mut hessian = &gamma_t_q * &gamma;
        for i in 0..n {
            let mut d = hessian.view_mut((2 * i, 2 * i), (2, 2));
            let rd_diag = if i + 1 == n { cfg.r_d } else { cfg.r_d * 2.0 };
            d += cfg.r + rd_diag;
            if i + 1 < n {
                let mut off = hessian.view_mut((2 * i, 2 * i + 2), (2, 2));
                off -= cfg.r_d;
                let mut off = hessian.view_mut((2 * i + 2, 2 * i), (2, 2));
                off -= cfg.r_d;
            }
        }
        hessian *= 2.0;
        hessian = (&hessian + hessian.transpose()) * 0.5;

        let mut constraints = Vec::new();
        if let Some(poly) = &cfg.polytope {
            for i in 0..n {
                for hp in &poly.half_planes {
                    constraints.push(SparseRow {
                        entries: vec![(2 * i, hp.normal[0]), (2 * i + 1, hp.normal[1])],
                        rhs: hp.offset,
                    });
                }
            }
        }
        let targets = TargetCalculator::new(&model);
        Ok(Self { model, cfg, targets, gamma_t_q, hessian, constraints, warm: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn model(&self) -> &DiscreteModel {
        &self.model
    }

    pub fn target_calculator(&self) -> &TargetCalculator {
        &self.targets
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    /// Disturbance actually used for prediction in the configured mode.
    pub fn effective_disturbance(&self, d_hat: &Vector6<f64>) -> Vector6<f64> {
        match self.cfg.mode {
            ControllerMode::OffsetFree => *d_hat,
            ControllerMode::Standard => Vector6::zeros(),
        }
    }

    /// Free response `x_1..x_N` under zero inputs.
    fn free_response(&self, x0: &ArmState, d: &Vector6<f64>) -> Vec<ArmState> {
        let ed = self.model.e * d;
        let mut x = *x0;
        (0..self.cfg.horizon)
            .map(|_| {
                x = self.model.a * x + ed;
                x
            })
            .collect()
    }

    /// Assembles the condensed QP. `targets` must hold `N + 1` pairs.
    pub fn build_qp(
        &self,
        x_meas: &ArmState,
        u_prev: &Input,
        d_hat: &Vector6<f64>,
        targets: &[TargetPair],
    ) -> Result<QpProblem> {
        let n = self.cfg.horizon;
        if targets.len() != n + 1 {
            return Err(Error::Dimension(format!("expected {} targets, got {}", n + 1, targets.len())));
        }
        let free = self.free_response(x_meas, d_hat);
        let mut err = DVector::<f64>::zeros(6 * n);
        let mut constant = {
            let e0 = x_meas - targets[0].x_bar;
            e0.dot(&(self.cfg.q * e0))
        };
        for i in 0..n {
            let e = free[i] - targets[i + 1].x_bar;
            let w = if i + 1 == n { &self.cfg.p } else { &self.cfg.q };
            constant += e.dot(&(w * e));
            err.rows_mut(6 * i, 6).copy_from(&e);
        }
        let mut gradient = &self.gamma_t_q * err;
        for i in 0..n {
            let ub = targets[i].u_bar;
            let mut gi = gradient.rows_mut(2 * i, 2);
            gi -= self.cfg.r * ub;
            constant += ub.dot(&(self.cfg.r * ub));
        }
        {
            let mut g0 = gradient.rows_mut(0, 2);
            g0 -= self.cfg.r_d * u_prev;
        }
        constant += u_prev.dot(&(self.cfg.r_d * u_prev));
        gradient *= 2.0;
        Ok(QpProblem { hessian: self.hessian.clone(), gradient, constant, constraints: self.constraints.clone() })
    }

    pub fn solve(&self, qp: &QpProblem, warm: Option<&QpIterate>, x_meas: &ArmState, d: &Vector6<f64>) -> Result<MpcSolution> {
        let sol = solve_qp(qp, warm, &self.cfg.solver)?;
        let z = &sol.iterate.z;
        let inputs: Vec<Input> = (0..self.cfg.horizon).map(|i| Vector2::new(z[2 * i], z[2 * i + 1])).collect();
        let mut states = Vec::with_capacity(self.cfg.horizon + 1);
        states.push(*x_meas);
        for u in &inputs {
            let next = self.model.step(states.last().unwrap(), u, d);
            states.push(next);
        }
        Ok(MpcSolution { u0: inputs[0], inputs, states, diagnostics: sol.diagnostics, iterate: sol.iterate })
    }

    /// Targets for the reference window, QP, solve, and conversion of the
    /// first input to pressure set points. On solver failure the previous
    /// input is held.
    pub fn control_step(
        &mut self,
        x_meas: &ArmState,
        u_prev: &Input,
        d_hat: &Vector6<f64>,
        refs: &[Setpoint],
    ) -> Result<ControlOutput> {
        if x_meas.iter().chain(u_prev.iter()).chain(d_hat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite controller input".into()));
        }
        let d = self.effective_disturbance(d_hat);
        let targets = self.targets.targets(refs, &d);
        let qp = self.build_qp(x_meas, u_prev, &d, &targets)?;
        let solution = self.solve(&qp, self.warm.as_ref(), x_meas, &d)?;
        let (applied, fallback) = if solution.diagnostics.converged() {
            self.warm = Some(shift_iterate(&solution.iterate, self.cfg.horizon));
            (solution.u0, false)
        } else {
            log::warn!("qp not converged ({:?}); holding previous input", solution.diagnostics.status);
            self.warm = None;
            (*u_prev, true)
        };
        let pressures = xi_inv(&AllocatedInput::from_vector(&applied, self.cfg.p_bar));
        Ok(ControlOutput { pressures, applied, fallback, solution, first_target: targets[0] })
    }
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub pressures: ActuatorPressures,
    /// Input actually sent to the plant.
    pub applied: Input,
    /// True when the previous input was reused after a solver failure.
    pub fallback: bool,
    pub solution: MpcSolution,
    pub first_target: TargetPair,
}

/// Drops the first stage and repeats the last one.
pub fn shift_iterate(it: &QpIterate, horizon: usize) -> QpIterate {
    let shift = |v: &DVector<f64>, block: usize| -> DVector<f64> {
        if v.is_empty() || horizon < 2 {
            return v.clone();
        }
        let mut out = v.clone();
        let len = v.len();
        out.rows_mut(0, len - block).copy_from(&v.rows(block, len - block));
        let tail = v.rows(len - block, block).into_owned();
        out.rows_mut(len - block, block).copy_from(&tail);
        out
    };
    let rows_per_stage = if horizon == 0 { 0 } else { it.slack.len() / horizon };
    QpIterate { z: shift(&it.z, 2), slack: shift(&it.slack, rows_per_stage), dual: shift(&it.dual, rows_per_stage) }
}

/// Free-function form: builds a controller for one call.
pub fn build_qp(
    x_meas: &ArmState,
    u_prev: &Input,
    d_hat: &Vector6<f64>,
    targets: &[TargetPair],
    model: &DiscreteModel,
    cfg: &MpcConfig,
) -> Result<QpProblem> {
    MpcController::new(model.clone(), cfg.clone())?.build_qp(x_meas, u_prev, d_hat, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::build_input_polytope;
    use crate::dynamics::{build_continuous, discretize, ModelParams};
    use crate::sphere::Angles;

    fn model() -> DiscreteModel {
        discretize(&build_continuous(&ModelParams::default()).unwrap(), 0.02).unwrap()
    }

    fn cfg(n: usize, constrained: bool) -> MpcConfig {
        let poly = constrained.then(|| build_input_polytope(1.0, 1.9, 1.05).unwrap());
        MpcConfig::from_weights(&WeightSpec::default(), n, 0.02, poly)
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = cfg(5, false);
        c.horizon = 0;
        assert!(MpcController::new(model(), c).is_err());
        let mut c = cfg(5, false);
        c.r = Matrix2::zeros();
        assert!(MpcController::new(model(), c).is_err());
    }

    #[test]
    fn hessian_symmetric_positive_definite() {
        let ctl = MpcController::new(model(), cfg(50, true)).unwrap();
        let h = ctl.hessian();
        assert!((h - h.transpose()).amax() < 1e-9 * h.amax());
        assert!(h.clone().symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn target_count_checked() {
        let ctl = MpcController::new(model(), cfg(5, false)).unwrap();
        let t = ctl.target_calculator().targets(&[Angles::ZERO; 3], &Vector6::zeros());
        assert!(ctl.build_qp(&ArmState::zeros(), &Input::zeros(), &Vector6::zeros(), &t).is_err());
    }

    #[test]
    fn objective_matches_simulated_cost() {
        let m = model();
        let c = cfg(6, false);
        let ctl = MpcController::new(m.clone(), c.clone()).unwrap();
        let d = Vector6::new(0.0, 3.0, 0.0, 0.0, -2.0, 0.1);
        let refs: Vec<_> = (0..7).map(|i| Angles::new(0.02 * i as f64, -0.01 * i as f64)).collect();
        let targets = ctl.target_calculator().targets(&refs, &d);
        let x0 = ArmState::new(0.01, 0.2, 0.0, -0.02, 0.0, 0.05);
        let u_prev = Input::new(0.05, -0.02);
        let qp = ctl.build_qp(&x0, &u_prev, &d, &targets).unwrap();
        let us: Vec<Input> = (0..6).map(|i| Input::new(0.01 * i as f64, 0.03 - 0.01 * i as f64)).collect();
        let z = DVector::from_iterator(12, us.iter().flat_map(|u| [u[0], u[1]]));
        // direct rollout of the stage costs
        let mut x = x0;
        let mut cost = 0.0;
        let mut prev = u_prev;
        for (i, u) in us.iter().enumerate() {
            let ex = x - targets[i].x_bar;
            let eu = u - targets[i].u_bar;
            let du = u - prev;
            cost += ex.dot(&(c.q * ex)) + eu.dot(&(c.r * eu)) + du.dot(&(c.r_d * du));
            x = m.step(&x, u, &d);
            prev = *u;
        }
        let ex = x - targets[6].x_bar;
        cost += ex.dot(&(c.p * ex));
        assert!((qp.objective(&z) - cost).abs() < 1e-9 * cost.max(1.0), "{} vs {cost}", qp.objective(&z));
    }

    #[test]
    fn at_target_costs_nothing() {
        let m = model();
        let mut ctl = MpcController::new(m, cfg(20, true)).unwrap();
        let d = Vector6::new(0.0, 40.0, 0.0, 0.0, 0.0, 0.0);
        let r = Angles::from_degrees(8.0, -5.0);
        let t = ctl.target_calculator().target(&r, &d);
        let out = ctl.control_step(&t.x_bar, &t.u_bar, &d, &[r; 21]).unwrap();
        assert!(out.solution.diagnostics.objective.abs() < 1e-6);
        assert!((out.applied - t.u_bar).amax() < 1e-5);
    }

    #[test]
    fn standard_mode_ignores_disturbance() {
        let mut c = cfg(10, true);
        c.mode = ControllerMode::Standard;
        let mut std_ctl = MpcController::new(model(), c).unwrap();
        let mut free = MpcController::new(model(), cfg(10, true)).unwrap();
        let d = Vector6::new(0.0, 30.0, 0.0, 0.0, 0.0, 0.0);
        let refs = [Angles::from_degrees(5.0, 0.0); 11];
        let a = std_ctl.control_step(&ArmState::zeros(), &Input::zeros(), &d, &refs).unwrap();
        let b = free.control_step(&ArmState::zeros(), &Input::zeros(), &Vector6::zeros(), &refs).unwrap();
        assert!((a.applied - b.applied).amax() < 1e-9);
    }

    #[test]
    fn far_target_saturates_on_polytope() {
        let poly = build_input_polytope(1.0, 1.9, 1.05).unwrap();
        let mut ctl = MpcController::new(model(), cfg(50, true)).unwrap();
        let refs = [Angles::from_degrees(85.0, 0.0); 51];
        let out = ctl.control_step(&ArmState::zeros(), &Input::zeros(), &Vector6::zeros(), &refs).unwrap();
        assert!(out.solution.diagnostics.converged());
        let u0 = out.solution.u0;
        assert!(poly.max_violation(&u0) <= 1e-6);
        let min_slack = poly.half_planes.iter().map(|hp| hp.slack(&u0)).fold(f64::INFINITY, f64::min);
        assert!(min_slack.abs() <= 1e-6, "closest face slack {min_slack}");
        assert!(out.pressures.within(1.0, 1.9, 1e-6));
    }

    #[test]
    fn shift_drops_first_stage() {
        let it = QpIterate {
            z: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            slack: DVector::from_vec(vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]),
            dual: DVector::from_vec(vec![0.1, 0.1, 0.2, 0.2, 0.3, 0.3]),
        };
        let s = shift_iterate(&it, 3);
        assert_eq!(s.z.as_slice(), &[3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
        assert_eq!(s.slack.as_slice(), &[2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }
}
