use alloc::vec::Vec;

use super::{
    termination_for, LineSearch, Recorder, SolveReport, SolverConfig, StepRecord, Termination,
};
use crate::bregman::{solve_multiplier, MirrorMap, MultiplierStep};
use crate::error::{check_len, Error, Result};
use crate::linalg::mat_t_vec;
use crate::math;
use crate::objective::{ConstrainedProblem, Objective};

const MAX_HALVINGS: usize = 60;

/// An accepted backtracking mirror step.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentStep {
    pub eta: f64,
    pub step: MultiplierStep,
    pub halvings: usize,
}

/// Mirror step with backtracking: tries `η = min(η_init, 1)` and halves until
/// `f(u⁺) ≤ f(u) + α ∇f(u)ᵀ(u⁺ − u)`.
pub fn sufficient_descent_step<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    u: &[f64],
    alpha: f64,
    eta_init: f64,
) -> Result<DescentStep> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "sufficient-descent parameter must lie in (0, 0.5)",
        });
    }
    let f0 = problem.objective.value(u);
    let grad = problem.objective.gradient(u);
    let mut eta = eta_init.min(1.0);
    for halvings in 0..=MAX_HALVINGS {
        match solve_multiplier(map, problem, u, eta) {
            Ok(step) => {
                let predicted = math::dot(&grad, &math::sub(&step.u_next, u));
                let f1 = problem.objective.value(&step.u_next);
                if f1 <= f0 + alpha * predicted {
                    return Ok(DescentStep {
                        eta,
                        step,
                        halvings,
                    });
                }
            }
            Err(Error::DomainViolation { .. }) => {}
            Err(e) => return Err(e),
        }
        eta *= 0.5;
    }
    Err(Error::LineSearchFailure {
        halvings: MAX_HALVINGS,
    })
}

pub(crate) fn check_start<O: Objective>(problem: &ConstrainedProblem<O>, u0: &[f64]) -> Result<()> {
    check_len(problem.dim(), u0.len())?;
    let scale = math::norm_inf(problem.constraint_rhs()).max(1.0);
    if problem.constraint_residual(u0) > 1e-8 * scale {
        return Err(Error::InvalidParameter {
            name: "u0",
            reason: "initial iterate violates the linear constraint",
        });
    }
    Ok(())
}

/// `∇Φ(u^{k+1}) = ∇Φ(u^k) − η(∇f(u^k) + Aᵀc)`, with `c` enforcing
/// `A u^{k+1} = b` at every step.
pub fn mirror_descent_solve<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    config: &SolverConfig,
    u0: &[f64],
    reference: Option<&[f64]>,
) -> Result<SolveReport> {
    config.validate()?;
    check_start(problem, u0)?;
    map.check_domain(u0)?;
    if config.line_search == LineSearch::Exact {
        return Err(Error::InvalidParameter {
            name: "lineSearch",
            reason: "exact line search applies to the variable-metric and quasi-Newton families",
        });
    }
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
        let attempt = match config.line_search {
            LineSearch::SufficientDescent { alpha } => {
                sufficient_descent_step(problem, map, &u, alpha, config.step_size)
            }
            _ => solve_multiplier(map, problem, &u, config.step_size).map(|step| DescentStep {
                eta: config.step_size,
                step,
                halvings: 0,
            }),
        };
        let ds = match attempt {
            Ok(ds) => ds,
            Err(e) => return Ok(rec.finish(termination_for(&e), Some(e))),
        };
        let grad = problem.objective.gradient(&u);
        let atc = mat_t_vec(problem.constraint_matrix(), &ds.step.c);
        let gmap: Vec<f64> = grad.iter().zip(&atc).map(|(g, s)| g + s).collect();
        let record = StepRecord {
            step_size: ds.eta,
            accepted: true,
            halvings: ds.halvings,
            multiplier: ds.step.c.clone(),
            multiplier_iterations: ds.step.iterations,
            grad_map_norm: math::norm2(&gmap),
            grad_map_dual_sq: map.dual_norm_sq(&gmap),
            preconditioned_sq: None,
            secant_residual: None,
            metric_change: None,
            curvature_skipped: false,
            dennis_more: None,
        };
        let u_next = ds.step.u_next;
        rec.step(record, &u, &u_next, &gmap);
        rec.observe(&u_next);
        let change = math::relative_change(&u_next, &u);
        u = u_next;
        if change <= config.rel_tol {
            return Ok(rec.finish(Termination::Converged, None));
        }
    }
    Ok(rec.finish(Termination::MaxIter, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{EntropyLinear, FnObjective, Quadratic};
    use crate::solvers::Family;
    use alloc::vec;
    use nalgebra::DMatrix;

    fn config(eta: f64) -> SolverConfig {
        SolverConfig::new(Family::MirrorDescent, eta)
    }

    #[test]
    fn converges_to_interior_optimum() {
        let f = Quadratic::new(DMatrix::identity(2, 2), vec![0.25, 0.75]).unwrap();
        let p = ConstrainedProblem::sum_constrained(f, 2, 1.0);
        let map = MirrorMap::entropy(1.0).unwrap();
        let mut cfg = config(0.5);
        cfg.rel_tol = 1e-12;
        let r = mirror_descent_solve(&p, &map, &cfg, &[0.5, 0.5], None).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        let gap = p.objective.value(&r.final_iterate);
        assert!(gap < 1e-8, "gap {gap}");
        assert!(r.constraint_residuals().iter().all(|c| *c <= 1e-10));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let f = FnObjective {
            value: |_: &[f64]| 0.0,
            gradient: |_: &[f64]| vec![0.0; 3],
        };
        let p = ConstrainedProblem::sum_constrained(f, 3, 1.0);
        let map = MirrorMap::entropy(1.0).unwrap();
        let u0 = [0.2, 0.3, 0.5];
        let r = mirror_descent_solve(&p, &map, &config(1.0), &u0, None).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        assert_eq!(r.iterations(), 1);
        for (a, b) in r.final_iterate.iter().zip(u0) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gibbs_step_is_exact() {
        let v = vec![0.3, -0.2, 1.1, 0.0];
        let p = ConstrainedProblem::sum_constrained(EntropyLinear { v: v.clone() }, 4, 1.0);
        let map = MirrorMap::entropy(1.0).unwrap();
        let r = mirror_descent_solve(&p, &map, &config(1.0), &[0.25; 4], None).unwrap();
        // u* ∝ exp(−V − 1); the normalization absorbs the constant.
        let w: Vec<f64> = v.iter().map(|x| math::exp(-x - 1.0)).collect();
        let s: f64 = w.iter().sum();
        let first = r.iterates.as_ref().map_or(&r.final_iterate, |it| &it[1]);
        for (a, b) in first.iter().zip(&w) {
            assert!((a - b / s).abs() < 1e-12);
        }
        assert!(r.iterations() <= 2);
        // Brute-force oracle: scan a fine grid of the 2-simplex slice through u*.
        let f = |u: &[f64]| p.objective.value(u);
        let best = f(first);
        let n = 400;
        for i in 1..n {
            for j in 1..(n - i) {
                let a = i as f64 / n as f64;
                let b = j as f64 / n as f64;
                let rest = 1.0 - a - b;
                let scale = rest / (first[2] + first[3]);
                let cand = [a, b, first[2] * scale, first[3] * scale];
                assert!(f(&cand) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn line_search_accepts_unit_step_on_newton_like_problem() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let f = Quadratic::new(h.clone(), vec![1.0, -2.0]).unwrap();
        let p = ConstrainedProblem::unconstrained(f, 2);
        let map = MirrorMap::quadratic(h).unwrap();
        let ds = sufficient_descent_step(&p, &map, &[4.0, 4.0], 0.25, 1.0).unwrap();
        assert_eq!(ds.eta, 1.0);
        assert!((ds.step.u_next[0] - 1.0).abs() < 1e-12);
        assert!((ds.step.u_next[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn line_search_zero_gradient() {
        let f = FnObjective {
            value: |_: &[f64]| 1.0,
            gradient: |_: &[f64]| vec![0.0; 2],
        };
        let p = ConstrainedProblem::unconstrained(f, 2);
        let ds =
            sufficient_descent_step(&p, &MirrorMap::euclidean(2), &[0.3, 0.4], 0.3, 0.7).unwrap();
        assert_eq!(ds.halvings, 0);
        assert_eq!(ds.step.u_next, vec![0.3, 0.4]);
    }

    #[test]
    fn line_search_respects_lipschitz_bound() {
        // f = ½ L ‖u‖² has an L-Lipschitz gradient; the accepted step is at
        // least one halving below min{1, 2(1 − α)/L}.
        for (l, alpha) in [(1.0, 0.25), (4.0, 0.1), (10.0, 0.4), (0.5, 0.3)] {
            let f = Quadratic::new(DMatrix::from_diagonal_element(3, 3, l), vec![0.0; 3]).unwrap();
            let p = ConstrainedProblem::unconstrained(f, 3);
            let ds = sufficient_descent_step(
                &p,
                &MirrorMap::euclidean(3),
                &[1.0, -2.0, 0.5],
                alpha,
                1.0,
            )
            .unwrap();
            let bound = f64::min(1.0, 2.0 * (1.0 - alpha) / l);
            assert!(ds.eta >= 0.5 * bound, "L={l}: η={} bound={bound}", ds.eta);
            let f0 = p.objective.value(&[1.0, -2.0, 0.5]);
            assert!(p.objective.value(&ds.step.u_next) < f0);
        }
    }

    #[test]
    fn infeasible_start_rejected() {
        let p = ConstrainedProblem::sum_constrained(EntropyLinear { v: vec![0.0; 2] }, 2, 1.0);
        let map = MirrorMap::entropy(1.0).unwrap();
        assert!(mirror_descent_solve(&p, &map, &config(0.1), &[0.3, 0.3], None).is_err());
        assert!(matches!(
            mirror_descent_solve(&p, &map, &config(0.1), &[-0.3, 1.3], None),
            Err(Error::DomainViolation { .. })
        ));
    }
}
