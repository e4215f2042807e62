//! Dense primal-dual interior-point solver for
//!
//! ```text
//! minimize   1/2 z'Hz + g'z + c
//! subject to G z <= h
//! ```
//!
//! using Mehrotra predictor-corrector steps. Constraint rows are stored
//! sparsely since in the condensed MPC problem every row touches only the
//! two inputs of one stage.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One inequality `sum(coef * z[col]) <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn dot(&self, z: &DVector<f64>) -> f64 {
        self.entries.iter().map(|&(j, v)| v * z[j]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// Constant term so that the objective equals the original cost.
    pub constant: f64,
    pub constraints: Vec<SparseRow>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z) + self.constant
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "hessian {:?} does not match gradient length {n}",
                self.hessian.shape()
            )));
        }
        if let Some(row) = self.constraints.iter().find(|r| r.entries.iter().any(|&(j, _)| j >= n)) {
            return Err(Error::Dimension(format!("constraint row {row:?} indexes past {n}")));
        }
        Ok(())
    }

    /// Largest constraint violation at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.constraints.iter().map(|r| r.dot(z) - r.rhs).fold(0.0, f64::max)
    }

    /// Minimizer ignoring all constraints.
    pub fn unconstrained_minimizer(&self) -> Option<DVector<f64>> {
        let chol = self.hessian.clone().cholesky()?;
        Some(-chol.solve(&self.gradient))
    }

    fn gt_times(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (row, &vi) in self.constraints.iter().zip(v.iter()) {
            for &(j, c) in &row.entries {
                out[j] += c * vi;
            }
        }
        out
    }

    fn g_times(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|r| r.dot(z)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    /// Tolerance on the average complementarity `s'lambda / m`.
    pub gap_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { primal_tolerance: 1e-6, dual_tolerance: 1e-6, gap_tolerance: 1e-8, max_iterations: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub mu: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub objective: f64,
    pub solve_time: Duration,
    pub history: Vec<IterationRecord>,
}

impl SolveDiagnostics {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Primal-dual point; also used as a warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct QpIterate {
    pub z: DVector<f64>,
    pub slack: DVector<f64>,
    pub dual: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub iterate: QpIterate,
    pub diagnostics: SolveDiagnostics,
}

impl QpSolution {
    pub fn z(&self) -> &DVector<f64> {
        &self.iterate.z
    }
}

struct Residuals {
    dual: DVector<f64>,
    primal: DVector<f64>,
    mu: f64,
}

fn residuals(qp: &QpProblem, it: &QpIterate) -> Residuals {
    let dual = &qp.hessian * &it.z + &qp.gradient + qp.gt_times(&it.dual);
    let m = qp.constraints.len();
    let rhs = DVector::from_iterator(m, qp.constraints.iter().map(|r| r.rhs));
    let primal = qp.g_times(&it.z) + &it.slack - rhs;
    let mu = if m == 0 { 0.0 } else { it.slack.dot(&it.dual) / m as f64 };
    Residuals { dual, primal, mu }
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest step in `(0, 1]` keeping `v + a dv >= 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

fn initial_point(qp: &QpProblem, warm: Option<&QpIterate>) -> Option<QpIterate> {
    let m = qp.constraints.len();
    if let Some(w) = warm {
        if w.z.len() == qp.dim() && w.slack.len() == m && w.dual.len() == m {
            return Some(w.clone());
        }
        log::debug!("ignoring warm start with mismatched dimensions");
    }
    let z = qp.unconstrained_minimizer()?;
    let slack = DVector::from_iterator(m, qp.constraints.iter().map(|r| (r.rhs - r.dot(&z)).max(1.0)));
    let dual = DVector::from_element(m, 1.0);
    Some(QpIterate { z, slack, dual })
}

/// Pushes a warm start back into the interior so the Newton steps have room.
fn recenter(qp: &QpProblem, it: &mut QpIterate) {
    let floor = 1e-3;
    for (i, row) in qp.constraints.iter().enumerate() {
        it.slack[i] = (row.rhs - row.dot(&it.z)).max(floor);
        it.dual[i] = it.dual[i].max(floor);
    }
}

fn converged(r: &Residuals, s: &SolverSettings) -> bool {
    amax(&r.primal) <= s.primal_tolerance && amax(&r.dual) <= s.dual_tolerance && r.mu <= s.gap_tolerance
}

/// Solves the QP. A warm start that already meets the tolerances is
/// returned unchanged after zero iterations; otherwise it is recentered.
pub fn solve_qp(qp: &QpProblem, warm: Option<&QpIterate>, settings: &SolverSettings) -> Result<QpSolution> {
    qp.validate()?;
    let started = Instant::now();
    let n = qp.dim();
    let m = qp.constraints.len();

    let finish = |it: QpIterate, status: SolveStatus, iterations: usize, history: Vec<IterationRecord>| {
        let r = residuals(qp, &it);
        let diagnostics = SolveDiagnostics {
            status,
            iterations,
            primal_residual: amax(&r.primal),
            dual_residual: amax(&r.dual),
            gap: r.mu,
            objective: qp.objective(&it.z),
            solve_time: started.elapsed(),
            history,
        };
        QpSolution { iterate: it, diagnostics }
    };

    let Some(mut it) = initial_point(qp, warm) else {
        let empty = QpIterate { z: DVector::zeros(n), slack: DVector::zeros(m), dual: DVector::zeros(m) };
        return Ok(finish(empty, SolveStatus::NumericalFailure, 0, Vec::new()));
    };
    if m == 0 {
        return Ok(finish(it, SolveStatus::Converged, 0, Vec::new()));
    }

    let mut history = Vec::new();
    let r0 = residuals(qp, &it);
    history.push(IterationRecord { mu: r0.mu, primal_residual: amax(&r0.primal), dual_residual: amax(&r0.dual) });
    if converged(&r0, settings) {
        return Ok(finish(it, SolveStatus::Converged, 0, history));
    }
    if warm.is_some() {
        recenter(qp, &mut it);
    }

    for iter in 1..=settings.max_iterations {
        let r = residuals(qp, &it);
        let w = it.dual.component_div(&it.slack);

        // H + G' W G; rows are sparse so accumulate entry pairs.
        let mut kkt = qp.hessian.clone();
        for (row, &wi) in qp.constraints.iter().zip(w.iter()) {
            for &(a, ca) in &row.entries {
                for &(b, cb) in &row.entries {
                    kkt[(a, b)] += wi * ca * cb;
                }
            }
        }
        let Some(chol) = kkt.cholesky() else {
            return Ok(finish(it, SolveStatus::NumericalFailure, iter, history));
        };

        // rc: complementarity residual target; returns (dz, ds, dl)
        let newton = |rc: &DVector<f64>| {
            let rc_over_s = rc.component_div(&it.slack);
            let rhs = -&r.dual - qp.gt_times(&(w.component_mul(&r.primal) - &rc_over_s));
            let dz = chol.solve(&rhs);
            let gdz = qp.g_times(&dz);
            let dl = w.component_mul(&(&gdz + &r.primal)) - rc_over_s;
            let ds = -&r.primal - gdz;
            (dz, ds, dl)
        };

        let rc_aff = it.slack.component_mul(&it.dual);
        let (_, ds_aff, dl_aff) = newton(&rc_aff);
        let a_aff = max_step(&it.slack, &ds_aff).min(max_step(&it.dual, &dl_aff));
        let mu_aff = (&it.slack + &ds_aff * a_aff).dot(&(&it.dual + &dl_aff * a_aff)) / m as f64;
        let sigma = (mu_aff / r.mu).clamp(0.0, 1.0).powi(3);

        let rc = rc_aff + ds_aff.component_mul(&dl_aff) - DVector::from_element(m, sigma * r.mu);
        let (dz, ds, dl) = newton(&rc);
        let step = (0.99 * max_step(&it.slack, &ds).min(max_step(&it.dual, &dl))).min(1.0);

        it.z += dz * step;
        it.slack += ds * step;
        it.dual += dl * step;

        let rn = residuals(qp, &it);
        if !rn.mu.is_finite() || !amax(&rn.dual).is_finite() {
            return Ok(finish(it, SolveStatus::NumericalFailure, iter, history));
        }
        history.push(IterationRecord { mu: rn.mu, primal_residual: amax(&rn.primal), dual_residual: amax(&rn.dual) });
        if converged(&rn, settings) {
            return Ok(finish(it, SolveStatus::Converged, iter, history));
        }
    }
    let iters = settings.max_iterations;
    Ok(finish(it, SolveStatus::MaxIterations, iters, history))
}
