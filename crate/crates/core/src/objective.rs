//! Objectives and linearly constrained problems `min f(u) s.t. A u = b`.

use alloc::boxed::Box;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{dvec, mat_vec};
use crate::math;

/// A smooth convex function with gradient and optional Hessian action.
pub trait Objective {
    fn value(&self, u: &[f64]) -> f64;

    fn gradient(&self, u: &[f64]) -> Vec<f64>;

    /// `∇²f(u) v`, when the Hessian is available.
    fn hessian_apply(&self, _u: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn value(&self, u: &[f64]) -> f64 {
        (**self).value(u)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        (**self).gradient(u)
    }

    fn hessian_apply(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        (**self).hessian_apply(u, v)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn value(&self, u: &[f64]) -> f64 {
        (**self).value(u)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        (**self).gradient(u)
    }

    fn hessian_apply(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        (**self).hessian_apply(u, v)
    }
}

/// Objective assembled from closures.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, u: &[f64]) -> f64 {
        (self.value)(u)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        (self.gradient)(u)
    }
}

/// `f(u) = ½ (u − a)ᵀ H (u − a)` with `H` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub center: Vec<f64>,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>, center: Vec<f64>) -> Result<Self> {
        check_len(hessian.nrows(), hessian.ncols())?;
        check_len(hessian.nrows(), center.len())?;
        Ok(Self { hessian, center })
    }
}

impl Objective for Quadratic {
    fn value(&self, u: &[f64]) -> f64 {
        let d = math::sub(u, &self.center);
        0.5 * math::dot(&d, &mat_vec(&self.hessian, &d))
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        mat_vec(&self.hessian, &math::sub(u, &self.center))
    }

    fn hessian_apply(&self, _u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        Some(mat_vec(&self.hessian, v))
    }
}

/// `f(u) = Σ uᵢ log uᵢ + vᵀu` on the positive orthant.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyLinear {
    pub v: Vec<f64>,
}

impl Objective for EntropyLinear {
    fn value(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.v)
            .map(|(x, v)| x * math::ln(*x) + v * x)
            .sum()
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.v)
            .map(|(x, v)| math::ln(*x) + 1.0 + v)
            .collect()
    }

    fn hessian_apply(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        Some(u.iter().zip(v).map(|(x, y)| y / x).collect())
    }
}

/// `min f(u)` subject to `A u = b` and optional coordinate bounds.
pub struct ConstrainedProblem<O = Box<dyn Objective>> {
    pub objective: O,
    a: DMatrix<f64>,
    b: Vec<f64>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
}

impl<O: Objective> ConstrainedProblem<O> {
    /// `a` is `m × n`; `m` may be zero. Rows must be linearly independent.
    pub fn new(objective: O, a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        check_len(a.nrows(), b.len())?;
        if a.nrows() > 0 {
            let gram = &a * a.transpose();
            if gram.cholesky().is_none() || a.nrows() > a.ncols() {
                return Err(Error::InvalidParameter {
                    name: "A",
                    reason: "constraint matrix must have full row rank",
                });
            }
        }
        Ok(Self {
            objective,
            a,
            b,
            lower: None,
            upper: None,
        })
    }

    pub fn unconstrained(objective: O, n: usize) -> Self {
        Self {
            objective,
            a: DMatrix::zeros(0, n),
            b: Vec::new(),
            lower: None,
            upper: None,
        }
    }

    /// Single constraint `Σ uᵢ = total`.
    pub fn sum_constrained(objective: O, n: usize, total: f64) -> Self {
        Self {
            objective,
            a: DMatrix::from_element(1, n, 1.0),
            b: alloc::vec![total],
            lower: None,
            upper: None,
        }
    }

    pub fn with_bounds(mut self, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> Result<Self> {
        for bound in lower.iter().chain(upper.iter()) {
            check_len(self.dim(), bound.len())?;
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn constraint_count(&self) -> usize {
        self.a.nrows()
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn constraint_rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn lower(&self) -> Option<&[f64]> {
        self.lower.as_deref()
    }

    pub fn upper(&self) -> Option<&[f64]> {
        self.upper.as_deref()
    }

    /// `‖A u − b‖∞`.
    pub fn constraint_residual(&self, u: &[f64]) -> f64 {
        if self.a.nrows() == 0 {
            return 0.0;
        }
        let au = &self.a * dvec(u);
        au.iter()
            .zip(&self.b)
            .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
    }

    /// Tolerance used for the constraint: `10⁻¹⁰ ‖b‖∞`, or `10⁻¹²` when `b = 0`.
    pub fn multiplier_tolerance(&self) -> f64 {
        let scale = math::norm_inf(&self.b);
        if scale > 0.0 {
            1e-10 * scale
        } else {
            1e-12
        }
    }

    /// Whether some coordinate lies outside the declared bounds.
    pub fn violates_bounds(&self, u: &[f64]) -> bool {
        let below = self
            .lower
            .as_ref()
            .is_some_and(|l| u.iter().zip(l).any(|(x, l)| x < l));
        let above = self
            .upper
            .as_ref()
            .is_some_and(|h| u.iter().zip(h).any(|(x, h)| x > h));
        below || above
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn rank_deficient_constraint_rejected() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let f = EntropyLinear { v: vec![0.0; 3] };
        assert!(ConstrainedProblem::new(f, a, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn residual_and_bounds() {
        let f = EntropyLinear { v: vec![0.0; 2] };
        let p = ConstrainedProblem::sum_constrained(f, 2, 1.0)
            .with_bounds(Some(vec![0.0; 2]), None)
            .unwrap();
        assert!((p.constraint_residual(&[0.25, 0.5]) - 0.25).abs() < 1e-15);
        assert!(p.violates_bounds(&[-0.1, 1.1]));
        assert!(!p.violates_bounds(&[0.1, 0.9]));
        assert_eq!(p.multiplier_tolerance(), 1e-10);
    }

    proptest! {
        #[test]
        fn quadratic_midpoint_convexity(x in proptest::collection::vec(-2.0..2.0f64, 3),
                                        y in proptest::collection::vec(-2.0..2.0f64, 3)) {
            let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 3.0]);
            let f = Quadratic::new(h, vec![0.1, -0.2, 0.3]).unwrap();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            prop_assert!(f.value(&mid) <= 0.5 * (f.value(&x) + f.value(&y)) + 1e-12);
        }

        #[test]
        fn entropy_midpoint_convexity(x in proptest::collection::vec(0.01..2.0f64, 4),
                                      y in proptest::collection::vec(0.01..2.0f64, 4)) {
            let f = EntropyLinear { v: vec![0.3, -1.0, 0.0, 2.0] };
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            prop_assert!(f.value(&mid) <= 0.5 * (f.value(&x) + f.value(&y)) + 1e-12);
        }
    }
}
