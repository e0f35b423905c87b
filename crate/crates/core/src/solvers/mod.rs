//! Iteration families for `min f(u) s.t. A u = b`: mirror descent,
//! variable metric, quasi-Newton with secant updates, and an RK4 integrator
//! for the underlying continuous flow. Every run produces a [`SolveReport`]
//! from which [`certify`] re-checks the convergence bounds.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::bregman::{bregman_divergence, objective_divergence, MirrorMap};
use crate::error::{Error, Result};
use crate::linalg::{dense_solve, mat_t_vec, mat_vec};
use crate::math;
use crate::objective::{ConstrainedProblem, Objective};

pub mod certify;
mod flow;
mod metric;
mod mirror;

pub use certify::{
    certify_averaged_flow, certify_bounds, certify_flow_decay, superlinear_ratios, Certificate,
    CertificateMode,
};
pub use flow::{integrate_flow, FlowPoint, Trajectory};
pub use metric::{quasi_newton_solve, variable_metric_solve};
pub use mirror::{mirror_descent_solve, sufficient_descent_step, DescentStep};

/// Step-size control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearch {
    Fixed,
    /// Backtracking from `min(η, 1)` until
    /// `f(u⁺) ≤ f(u) + α ∇f(u)ᵀ(u⁺ − u)`, with `0 < α < ½`.
    SufficientDescent {
        alpha: f64,
    },
    /// Exact minimization along the search direction; quadratic objectives
    /// with a Hessian only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    MirrorDescent,
    VariableMetric,
    QuasiNewtonSecant,
    ContinuousFlowRk4 { dt: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    /// Stop once `‖u^{k+1} − u^k‖ / ‖u^k‖ ≤ rel_tol`.
    pub rel_tol: f64,
    pub line_search: LineSearch,
    pub family: Family,
    pub store_iterates: bool,
    /// `B₀` for the quasi-Newton family; identity when absent.
    pub initial_hessian: Option<DMatrix<f64>>,
}

impl SolverConfig {
    pub fn new(family: Family, step_size: f64) -> Self {
        Self {
            step_size,
            max_iterations: 1000,
            rel_tol: 1e-6,
            line_search: LineSearch::Fixed,
            family,
            store_iterates: false,
            initial_hessian: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidParameter {
                name: "eta",
                reason: "step size must be positive",
            });
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tol",
                reason: "relative tolerance must be positive",
            });
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter {
                name: "iterMax",
                reason: "iteration budget must be positive",
            });
        }
        if let LineSearch::SufficientDescent { alpha } = self.line_search {
            if !(alpha > 0.0 && alpha < 0.5) {
                return Err(Error::InvalidParameter {
                    name: "alpha",
                    reason: "sufficient-descent parameter must lie in (0, 0.5)",
                });
            }
        }
        if let Family::ContinuousFlowRk4 { dt } = self.family {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "dt",
                    reason: "time step must be positive",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    DomainViolation,
    MultiplierFailure,
    LineSearchFailure,
    SingularMetric,
}

/// Quantities of the step taken from one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_size: f64,
    pub accepted: bool,
    pub halvings: usize,
    pub multiplier: Vec<f64>,
    pub multiplier_iterations: usize,
    /// `‖∇f(u^k) + Aᵀc(u^k)‖₂`.
    pub grad_map_norm: f64,
    /// The same vector in the dual of the map's declared norm, squared.
    pub grad_map_dual_sq: Option<f64>,
    /// `‖∇²Φ(u^k)⁻¹ g_k‖₂²` (variable metric) or `g_kᵀ B_k⁻¹ g_k` (quasi-Newton).
    pub preconditioned_sq: Option<f64>,
    /// `‖B_{k+1} s_k − y_k‖₂`, quasi-Newton only.
    pub secant_residual: Option<f64>,
    /// `‖B_{k+1} B_k⁻¹ − I‖₂`, quasi-Newton only.
    pub metric_change: Option<f64>,
    pub curvature_skipped: bool,
    /// `‖(G_k − ∇²f(u*)) Δu‖ / ‖Δu‖`, when the Hessian and `u*` are known.
    pub dennis_more: Option<f64>,
}

/// Diagnostics of one iterate `u^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    pub constraint_residual: f64,
    pub bound_violation: bool,
    /// `D_Φ(u*, u^k)`.
    pub bregman_to_reference: Option<f64>,
    /// `D_f(u*, u^k)`.
    pub objective_divergence: Option<f64>,
    pub distance_to_reference: Option<f64>,
    /// `f` at the mean of `u^0, …, u^k`.
    pub prefix_mean_objective: f64,
    /// The step leaving `u^k`; absent for the last iterate.
    pub step: Option<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub family: Family,
    pub records: Vec<IterationRecord>,
    pub iterates: Option<Vec<Vec<f64>>>,
    pub final_iterate: Vec<f64>,
    pub reference_objective: Option<f64>,
    pub termination: Termination,
    pub failure: Option<Error>,
    /// First step index at which the line search accepted `η = 1`.
    pub first_unit_step: Option<usize>,
}

impl SolveReport {
    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn objective_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn constraint_residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.constraint_residual).collect()
    }

    pub fn bregman_to_reference(&self) -> Option<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.bregman_to_reference)
            .collect()
    }

    pub fn grad_map_norms(&self) -> Vec<f64> {
        self.steps().map(|s| s.grad_map_norm).collect()
    }

    pub fn step_accepted(&self) -> Vec<bool> {
        self.steps().map(|s| s.accepted).collect()
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| r.step.as_ref())
    }

    pub fn any_bound_violation(&self) -> bool {
        self.records.iter().any(|r| r.bound_violation)
    }
}

/// Builds the per-iterate records shared by all families.
pub(crate) struct Recorder<'a, O: Objective> {
    problem: &'a ConstrainedProblem<O>,
    map: Option<&'a MirrorMap>,
    reference: Option<&'a [f64]>,
    sum: Vec<f64>,
    count: usize,
    report: SolveReport,
}

impl<'a, O: Objective> Recorder<'a, O> {
    pub(crate) fn new(
        problem: &'a ConstrainedProblem<O>,
        map: Option<&'a MirrorMap>,
        reference: Option<&'a [f64]>,
        family: Family,
        store_iterates: bool,
    ) -> Self {
        Self {
            problem,
            map,
            reference,
            sum: alloc::vec![0.0; problem.dim()],
            count: 0,
            report: SolveReport {
                family,
                records: Vec::new(),
                iterates: store_iterates.then(Vec::new),
                final_iterate: Vec::new(),
                reference_objective: reference.map(|r| problem.objective.value(r)),
                termination: Termination::MaxIter,
                failure: None,
                first_unit_step: None,
            },
        }
    }

    pub(crate) fn observe(&mut self, u: &[f64]) {
        let f = &self.problem.objective;
        self.count += 1;
        for (s, x) in self.sum.iter_mut().zip(u) {
            *s += x;
        }
        let mean: Vec<f64> = self.sum.iter().map(|s| s / self.count as f64).collect();
        let (bregman, df, dist) = match self.reference {
            Some(r) => (
                self.map
                    .and_then(|m| bregman_divergence(m, r, u).ok())
                    .map(|v| v.value()),
                Some(objective_divergence(f, r, u)),
                Some(math::norm2(&math::sub(u, r))),
            ),
            None => (None, None, None),
        };
        self.report.records.push(IterationRecord {
            objective: f.value(u),
            constraint_residual: self.problem.constraint_residual(u),
            bound_violation: self.problem.violates_bounds(u)
                || self.map.is_some_and(|m| m.check_domain(u).is_err()),
            bregman_to_reference: bregman,
            objective_divergence: df,
            distance_to_reference: dist,
            prefix_mean_objective: f.value(&mean),
            step: None,
        });
        if let Some(it) = self.report.iterates.as_mut() {
            it.push(u.to_vec());
        }
        self.report.final_iterate = u.to_vec();
    }

    /// Attaches the step leaving the latest iterate. Fills the Dennis-Moré
    /// measure using `G_k Δu = −η g_k`, which holds for every family.
    pub(crate) fn step(&mut self, mut step: StepRecord, u: &[f64], u_next: &[f64], gmap: &[f64]) {
        if step.step_size == 1.0 && step.accepted && self.report.first_unit_step.is_none() {
            self.report.first_unit_step = Some(self.report.records.len() - 1);
        }
        if let Some(r) = self.reference {
            let du = math::sub(u_next, u);
            let norm = math::norm2(&du);
            if norm > 0.0 {
                if let Some(hdu) = self.problem.objective.hessian_apply(r, &du) {
                    let diff: Vec<f64> = gmap
                        .iter()
                        .zip(&hdu)
                        .map(|(g, h)| -step.step_size * g - h)
                        .collect();
                    step.dennis_more = Some(math::norm2(&diff) / norm);
                }
            }
        }
        if let Some(last) = self.report.records.last_mut() {
            last.step = Some(step);
        }
    }

    pub(crate) fn finish(
        mut self,
        termination: Termination,
        failure: Option<Error>,
    ) -> SolveReport {
        self.report.termination = termination;
        self.report.failure = failure;
        self.report
    }
}

pub(crate) fn termination_for(err: &Error) -> Termination {
    match err {
        Error::DomainViolation { .. } => Termination::DomainViolation,
        Error::MultiplierNotFound { .. } => Termination::MultiplierFailure,
        Error::LineSearchFailure { .. } => Termination::LineSearchFailure,
        _ => Termination::SingularMetric,
    }
}

/// Multiplier and search direction for a metric `G`: solves
/// `(A G⁻¹ Aᵀ) c = −A G⁻¹ ∇f`, so that `A G⁻¹(∇f + Aᵀc) = 0`.
/// Returns `(c, g = ∇f + Aᵀc, G⁻¹ g)`.
pub(crate) fn metric_direction(
    a: &DMatrix<f64>,
    grad: &[f64],
    solve: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let m = a.nrows();
    let ginv_grad = solve(grad)?;
    if m == 0 {
        return Ok((Vec::new(), grad.to_vec(), ginv_grad));
    }
    let mut cols = Vec::with_capacity(m);
    let mut schur = DMatrix::zeros(m, m);
    for j in 0..m {
        let row: Vec<f64> = a.row(j).iter().copied().collect();
        let col = solve(&row)?;
        let acol = mat_vec(a, &col);
        for i in 0..m {
            schur[(i, j)] = acol[i];
        }
        cols.push(col);
    }
    let rhs: Vec<f64> = mat_vec(a, &ginv_grad).iter().map(|x| -x).collect();
    let c = dense_solve(&schur, &rhs)?;
    let atc = mat_t_vec(a, &c);
    let gmap: Vec<f64> = grad.iter().zip(&atc).map(|(g, s)| g + s).collect();
    let mut dir = ginv_grad;
    for (cj, col) in c.iter().zip(&cols) {
        for (d, x) in dir.iter_mut().zip(col) {
            *d += cj * x;
        }
    }
    Ok((c, gmap, dir))
}

/// Runs the family selected in `config`. The flow family integrates to
/// `T = max_iterations · dt` and reports one record per time step.
pub fn solve<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    config: &SolverConfig,
    u0: &[f64],
    reference: Option<&[f64]>,
) -> Result<SolveReport> {
    match config.family {
        Family::MirrorDescent => mirror_descent_solve(problem, map, config, u0, reference),
        Family::VariableMetric => variable_metric_solve(problem, map, config, u0, reference),
        Family::QuasiNewtonSecant => quasi_newton_solve(problem, config, u0, reference),
        Family::ContinuousFlowRk4 { dt } => {
            config.validate()?;
            let total = dt * config.max_iterations as f64;
            let traj = integrate_flow(problem, map, u0, total, dt, reference)?;
            let mut rec = Recorder::new(
                problem,
                Some(map),
                reference,
                config.family,
                config.store_iterates,
            );
            for p in &traj.points {
                rec.observe(&p.state);
            }
            Ok(rec.finish(Termination::MaxIter, None))
        }
    }
}
