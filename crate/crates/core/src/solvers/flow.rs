use alloc::vec::Vec;

use super::metric_direction;
use crate::bregman::{bregman_divergence, MirrorMap};
use crate::error::{check_len, Error, Result};
use crate::objective::{ConstrainedProblem, Objective};

/// Deepest recursive halving of a step whose stages leave the domain.
const MAX_SPLITS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint {
    pub t: f64,
    pub state: Vec<f64>,
    /// `D_Φ(u*, u(t))` when a reference was supplied.
    pub bregman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<FlowPoint>,
}

impl Trajectory {
    /// `(1/T) ∫₀ᵀ u(t) dt` by the trapezoid rule over the stored points with
    /// `t ≤ T`.
    pub fn time_average(&self, until: f64) -> Vec<f64> {
        let n = self.points[0].state.len();
        let mut acc = alloc::vec![0.0; n];
        let mut end = 0.0;
        for w in self.points.windows(2) {
            if w[1].t > until * (1.0 + 1e-12) {
                break;
            }
            let h = w[1].t - w[0].t;
            for (a, (x, y)) in acc.iter_mut().zip(w[0].state.iter().zip(&w[1].state)) {
                *a += 0.5 * h * (x + y);
            }
            end = w[1].t;
        }
        if end > 0.0 {
            acc.iter_mut().for_each(|a| *a /= end);
            acc
        } else {
            self.points[0].state.clone()
        }
    }
}

fn velocity<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    u: &[f64],
) -> Result<Vec<f64>> {
    map.check_domain(u)?;
    let grad = problem.objective.gradient(u);
    let solve = |v: &[f64]| map.hessian_solve(u, v);
    let (_, _, dir) = metric_direction(problem.constraint_matrix(), &grad, &solve)?;
    Ok(dir.into_iter().map(|d| -d).collect())
}

fn axpy(u: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    u.iter().zip(k).map(|(x, y)| x + h * y).collect()
}

fn rk4_step<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    u: &[f64],
    h: f64,
    depth: usize,
) -> Result<Vec<f64>> {
    let attempt = || -> Result<Vec<f64>> {
        let k1 = velocity(problem, map, u)?;
        let k2 = velocity(problem, map, &axpy(u, 0.5 * h, &k1))?;
        let k3 = velocity(problem, map, &axpy(u, 0.5 * h, &k2))?;
        let k4 = velocity(problem, map, &axpy(u, h, &k3))?;
        let next: Vec<f64> = (0..u.len())
            .map(|i| u[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        map.check_domain(&next)?;
        Ok(next)
    };
    match attempt() {
        Err(Error::DomainViolation { .. }) if depth < MAX_SPLITS => {
            let mid = rk4_step(problem, map, u, 0.5 * h, depth + 1)?;
            rk4_step(problem, map, &mid, 0.5 * h, depth + 1)
        }
        other => other,
    }
}

/// Classical RK4 on `u̇ = −∇²Φ(u)⁻¹(∇f(u) + Aᵀc(u))` with `c(u)` from the
/// Schur system, so `A u̇ = 0`. A step whose stages leave the domain is
/// retried as two half steps.
pub fn integrate_flow<O: Objective>(
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    u0: &[f64],
    total_time: f64,
    dt: f64,
    reference: Option<&[f64]>,
) -> Result<Trajectory> {
    check_len(problem.dim(), u0.len())?;
    if !(dt > 0.0) || !(total_time >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: "time step and horizon must be positive",
        });
    }
    map.check_domain(u0)?;
    let steps = libm::ceil(total_time / dt - 1e-9).max(0.0) as usize;
    let h = if steps > 0 {
        total_time / steps as f64
    } else {
        dt
    };
    let divergence = |u: &[f64]| -> Option<f64> {
        reference.and_then(|r| bregman_divergence(map, r, u).ok().map(|v| v.value()))
    };
    let mut points = Vec::with_capacity(steps + 1);
    let mut u = u0.to_vec();
    points.push(FlowPoint {
        t: 0.0,
        bregman: divergence(&u),
        state: u.clone(),
    });
    for i in 1..=steps {
        u = rk4_step(problem, map, &u, h, 0)?;
        points.push(FlowPoint {
            t: i as f64 * h,
            bregman: divergence(&u),
            state: u.clone(),
        });
    }
    Ok(Trajectory { points })
}
