//! Damped, row-scaled Newton for `φ(x) + s D x = b`, where `φ` acts
//! pointwise and is strictly increasing and `D` is a weighted Laplacian.
//!
//! Both PDE mirror steps take this form in the dual variable: `φ = exp` for
//! the entropy map and `φ = g⁻¹` for the double-log barrier `g`.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::grid::WeightedLaplacian;
use crate::linalg::Tridiagonal;
use crate::math;

const MAX_DAMPING_HALVINGS: usize = 30;

pub(crate) struct DualSystem<'a> {
    pub op: &'a WeightedLaplacian,
    pub scale: f64,
    pub rhs: &'a [f64],
    /// Box the iterate is projected onto.
    pub lower: f64,
    pub upper: f64,
    /// `x ↦ (φ(x), φ'(x))`.
    pub primal: &'a dyn Fn(f64) -> (f64, f64),
}

impl DualSystem<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let dx = self.op.apply_values(x);
        (0..x.len())
            .map(|j| (self.primal)(x[j]).0 + self.scale * dx[j] - self.rhs[j])
            .collect()
    }

    /// `‖h‖₁` at rounding level relative to the magnitude of its terms.
    fn negligible(&self, x: &[f64], h: &[f64]) -> bool {
        let dx = self.op.apply_values(x);
        let magnitude: f64 = (0..x.len())
            .map(|j| (self.primal)(x[j]).0.abs() + self.scale * dx[j].abs() + self.rhs[j].abs())
            .sum();
        math::norm1(h) <= 1e-13 * magnitude
    }

    /// `A = diag(φ'(x)) + s D`.
    pub fn jacobian(&self, x: &[f64]) -> Tridiagonal {
        let mut d = self.op.tridiagonal();
        let s = self.scale;
        d.sub.iter_mut().for_each(|v| *v *= s);
        d.sup.iter_mut().for_each(|v| *v *= s);
        for (v, xj) in d.diag.iter_mut().zip(x) {
            *v = (self.primal)(*xj).1 + s * *v;
        }
        d
    }

    /// `P = diag(1 / max(φ'(xⱼ), s Dⱼⱼ))`: the inverse of `φ'` wherever the
    /// pointwise term dominates, the inverse coupling elsewhere.
    pub fn scaling(&self, x: &[f64]) -> Vec<f64> {
        let d = self.op.tridiagonal();
        x.iter()
            .zip(&d.diag)
            .map(|(xj, dj)| 1.0 / (self.primal)(*xj).1.max(self.scale * dj))
            .collect()
    }

    pub fn scaled_jacobian(&self, x: &[f64]) -> Tridiagonal {
        let a = self.jacobian(x);
        let p = self.scaling(x);
        let n = x.len();
        Tridiagonal {
            sub: (0..n - 1).map(|i| p[i + 1] * a.sub[i]).collect(),
            diag: (0..n).map(|i| p[i] * a.diag[i]).collect(),
            sup: (0..n - 1).map(|i| p[i] * a.sup[i]).collect(),
        }
    }

    /// Newton from `x0`, returning the solution and the iteration count.
    ///
    /// A step is halved (at most 30 times) while it would increase `‖h‖₂`.
    /// The iteration stops once `‖Δx‖ / max(‖x‖, 1) ≤ tol` and the residual is
    /// negligible, or the update itself is at rounding level.
    pub fn solve(&self, x0: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
        let n = self.op.grid().cells();
        check_len(n, self.rhs.len())?;
        check_len(n, x0.len())?;
        let clamp = |v: f64| v.max(self.lower).min(self.upper);
        let mut x: Vec<f64> = x0.iter().map(|v| clamp(*v)).collect();
        let mut h = self.residual(&x);
        if self.negligible(&x, &h) {
            return Ok((x, 0));
        }
        let mut change = f64::INFINITY;
        for iteration in 1..=max_iter {
            let p = self.scaling(&x);
            let rhs: Vec<f64> = p.iter().zip(&h).map(|(a, b)| a * b).collect();
            let delta = self.scaled_jacobian(&x).solve(&rhs)?;
            let current = math::norm2(&h);
            let x_norm = math::norm2(&x).max(1.0);
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_DAMPING_HALVINGS {
                let trial: Vec<f64> = x
                    .iter()
                    .zip(&delta)
                    .map(|(a, d)| clamp(a - lambda * d))
                    .collect();
                let ht = self.residual(&trial);
                let norm = math::norm2(&ht);
                if norm.is_finite() && (norm <= current || self.negligible(&trial, &ht)) {
                    accepted = Some((trial, ht));
                    break;
                }
                lambda *= 0.5;
            }
            let Some((trial, ht)) = accepted else {
                if self.negligible(&x, &h) || math::norm2(&delta) <= 1e-14 * x_norm {
                    return Ok((x, iteration));
                }
                return Err(Error::NewtonDivergence {
                    iterations: iteration,
                    update: change,
                    residual: math::norm1(&h),
                });
            };
            change = math::norm2(&math::sub(&trial, &x)) / x_norm;
            x = trial;
            h = ht;
            if change <= tol && (self.negligible(&x, &h) || change <= 1e-14) {
                return Ok((x, iteration));
            }
        }
        Err(Error::NewtonDivergence {
            iterations: max_iter,
            update: change,
            residual: math::norm1(&h),
        })
    }
}
