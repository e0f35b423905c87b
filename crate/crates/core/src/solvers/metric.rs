use alloc::vec::Vec;
use nalgebra::DMatrix;

use super::mirror::check_start;
use super::{
    metric_direction, termination_for, LineSearch, Recorder, SolveReport, SolverConfig, StepRecord,
    Termination,
};
use crate::bregman::MirrorMap;
use crate::error::{check_len, Error, Result};
use crate::linalg::{dense_solve, dvec, mat_vec, spectral_norm};
use crate::math;
use crate::objective::{ConstrainedProblem, Objective};

const MAX_HALVINGS: usize = 60;

/// Step length along `u − t·d` for the configured line search.
fn step_length<O: Objective>(
    problem: &ConstrainedProblem<O>,
    search: LineSearch,
    eta: f64,
    u: &[f64],
    grad: &[f64],
    dir: &[f64],
) -> Result<(f64, usize)> {
    let trial = |t: f64| -> Vec<f64> { u.iter().zip(dir).map(|(x, d)| x - t * d).collect() };
    match search {
        LineSearch::Fixed => Ok((eta, 0)),
        LineSearch::Exact => {
            let hd = problem
                .objective
                .hessian_apply(u, dir)
                .ok_or(Error::InvalidParameter {
                    name: "lineSearch",
                    reason: "exact line search needs the objective's Hessian",
                })?;
            let curv = math::dot(dir, &hd);
            if curv > 0.0 {
                Ok((math::dot(grad, dir) / curv, 0))
            } else {
                Ok((eta, 0))
            }
        }
        LineSearch::SufficientDescent { alpha } => {
            let f0 = problem.objective.value(u);
            let slope = -math::dot(grad, dir);
            let mut t = eta.min(1.0);
            for halvings in 0..=MAX_HALVINGS {
                let f1 = problem.objective.value(&trial(t));
                if f1 <= f0 + alpha * t * slope {
                    return Ok((t, halvings));
                }
                t *= 0.5;
            }
            Err(Error::LineSearchFailure {
                halvings: MAX_HALVINGS,
            })
        }
    }
}

/// `u^{k+1} = u^k − η ∇²Φ(u^k)⁻¹(∇f(u^k) + Aᵀc)`. Iterates are not kept
/// inside the map's domain; leaving it ends the run with
/// [`Termination::DomainViolation`] since the metric is undefined there.
pub fn variable_metric_solve<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    config: &SolverConfig,
    u0: &[f64],
    reference: Option<&[f64]>,
) -> Result<SolveReport> {
    config.validate()?;
    check_start(problem, u0)?;
    map.check_domain(u0)?;
    let mut rec = Recorder::new(
        problem,
        Some(map),
        reference,
        config.family,
        config.store_iterates,
    );
    let mut u = u0.to_vec();
    rec.observe(&u);
    for _ in 0..config.max_iterations {
        let grad = problem.objective.gradient(&u);
        let solve = |v: &[f64]| map.hessian_solve(&u, v);
        let (c, gmap, dir) = match metric_direction(problem.constraint_matrix(), &grad, &solve) {
            Ok(d) => d,
            Err(e) => return Ok(rec.finish(termination_for(&e), Some(e))),
        };
        let (eta, halvings) = match step_length(
            problem,
            config.line_search,
            config.step_size,
            &u,
            &grad,
            &dir,
        ) {
            Ok(s) => s,
            Err(e) => return Ok(rec.finish(termination_for(&e), Some(e))),
        };
        let u_next: Vec<f64> = u.iter().zip(&dir).map(|(x, d)| x - eta * d).collect();
        let record = StepRecord {
            step_size: eta,
            accepted: true,
            halvings,
            multiplier: c,
            multiplier_iterations: 0,
            grad_map_norm: math::norm2(&gmap),
            grad_map_dual_sq: map.dual_norm_sq(&gmap),
            preconditioned_sq: Some(math::dot(&dir, &dir)),
            secant_residual: None,
            metric_change: None,
            curvature_skipped: false,
            dennis_more: None,
        };
        rec.step(record, &u, &u_next, &gmap);
        rec.observe(&u_next);
        let change = math::relative_change(&u_next, &u);
        u = u_next;
        if let Err(e) = map.check_domain(&u) {
            return Ok(rec.finish(Termination::DomainViolation, Some(e)));
        }
        if change <= config.rel_tol {
            return Ok(rec.finish(Termination::Converged, None));
        }
    }
    Ok(rec.finish(Termination::MaxIter, None))
}

/// Symmetric BFGS update; returns `None` when the curvature `yᵀs` is not
/// safely positive.
fn bfgs_update(b: &DMatrix<f64>, s: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
    let ys = math::dot(y, s);
    if !(ys > 1e-14 * math::norm2(y) * math::norm2(s)) {
        return None;
    }
    let bs = mat_vec(b, s);
    let sbs = math::dot(s, &bs);
    if !(sbs > 0.0) {
        return None;
    }
    let bs = dvec(&bs);
    let y = dvec(y);
    let mut next = b - &bs * bs.transpose() / sbs + &y * y.transpose() / ys;
    // Restore exact symmetry lost to rounding.
    next = (&next + next.transpose()) * 0.5;
    Some(next)
}

/// `u^{k+1} = u^k − η B_k⁻¹(∇f(u^k) + Aᵀc)` with `B_k` updated by BFGS so
/// that `B_{k+1}(u^{k+1} − u^k) = ∇f(u^{k+1}) − ∇f(u^k)`.
pub fn quasi_newton_solve<O: Objective>(
    problem: &ConstrainedProblem<O>,
    config: &SolverConfig,
    u0: &[f64],
    reference: Option<&[f64]>,
) -> Result<SolveReport> {
    config.validate()?;
    check_start(problem, u0)?;
    let n = problem.dim();
    let mut b = match &config.initial_hessian {
        Some(h) => {
            check_len(n, h.nrows())?;
            check_len(n, h.ncols())?;
            h.clone()
        }
        None => DMatrix::identity(n, n),
    };
    if b.clone().cholesky().is_none() {
        return Err(Error::SingularMetric);
    }
    let mut rec = Recorder::new(
        problem,
        None,
        reference,
        config.family,
        config.store_iterates,
    );
    let mut u = u0.to_vec();
    rec.observe(&u);
    let mut grad = problem.objective.gradient(&u);
    for _ in 0..config.max_iterations {
        if math::norm_inf(&grad) == 0.0 {
            return Ok(rec.finish(Termination::Converged, None));
        }
        let solve = |v: &[f64]| dense_solve(&b, v);
        let (c, gmap, dir) = match metric_direction(problem.constraint_matrix(), &grad, &solve) {
            Ok(d) => d,
            Err(e) => return Ok(rec.finish(termination_for(&e), Some(e))),
        };
        let (eta, halvings) = match step_length(
            problem,
            config.line_search,
            config.step_size,
            &u,
            &grad,
            &dir,
        ) {
            Ok(s) => s,
            Err(e) => return Ok(rec.finish(termination_for(&e), Some(e))),
        };
        let u_next: Vec<f64> = u.iter().zip(&dir).map(|(x, d)| x - eta * d).collect();
        let grad_next = problem.objective.gradient(&u_next);
        let s = math::sub(&u_next, &u);
        let y = math::sub(&grad_next, &grad);
        let updated = bfgs_update(&b, &s, &y);
        let mut record = StepRecord {
            step_size: eta,
            accepted: true,
            halvings,
            multiplier: c,
            multiplier_iterations: 0,
            grad_map_norm: math::norm2(&gmap),
            grad_map_dual_sq: None,
            preconditioned_sq: Some(math::dot(&gmap, &dir)),
            secant_residual: None,
            metric_change: None,
            curvature_skipped: updated.is_none(),
            dennis_more: None,
        };
        if let Some(next) = updated {
            let residual = math::sub(&mat_vec(&next, &s), &y);
            record.secant_residual = Some(math::norm2(&residual));
            // B_{k+1} B_k⁻¹ − I = (B_{k+1} − B_k) B_k⁻¹
            if let Some(binv) = b.clone().try_inverse() {
                record.metric_change = Some(spectral_norm(&((&next - &b) * binv)));
            }
            b = next;
        }
        rec.step(record, &u, &u_next, &gmap);
        rec.observe(&u_next);
        let change = math::relative_change(&u_next, &u);
        u = u_next;
        grad = grad_next;
        if change <= config.rel_tol {
            return Ok(rec.finish(Termination::Converged, None));
        }
    }
    Ok(rec.finish(Termination::MaxIter, None))
}
