//! Uniform cell-centred 1D meshes, grid functions, and the mass-preserving
//! weighted Laplacian `D_w u = −∂ₓ(w ∂ₓ u)` with no-flux boundaries.
//!
//! The operator is assembled from cell weights `w_j` through face averages
//! `w_{j+½} = (w_j + w_{j+1}) / 2`; the two outermost faces carry no flux, so
//! every column of the matrix sums to zero and constants span its kernel.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linalg::Tridiagonal;
use crate::math;

/// Uniform mesh of `cells` cells on `[x_left, x_right]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_left: f64,
    x_right: f64,
    cells: usize,
}

impl Grid1D {
    pub fn new(x_left: f64, x_right: f64, cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::InvalidParameter {
                name: "cells",
                reason: "a grid needs at least two cells",
            });
        }
        if !(x_right > x_left) || !x_left.is_finite() || !x_right.is_finite() {
            return Err(Error::InvalidParameter {
                name: "x_right",
                reason: "domain must satisfy x_left < x_right",
            });
        }
        Ok(Self {
            x_left,
            x_right,
            cells,
        })
    }

    /// Grid with the given spacing; the cell count is rounded to the nearest
    /// integer.
    pub fn with_spacing(x_left: f64, x_right: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dx",
                reason: "spacing must be positive",
            });
        }
        let cells = libm::round((x_right - x_left) / dx) as usize;
        Self::new(x_left, x_right, cells)
    }

    pub fn x_left(&self) -> f64 {
        self.x_left
    }

    pub fn x_right(&self) -> f64 {
        self.x_right
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        (self.x_right - self.x_left) / self.cells as f64
    }

    /// Centre of cell `j` (0-based).
    pub fn center(&self, j: usize) -> f64 {
        self.x_left + (j as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center(j)).collect()
    }
}

/// Real values sampled at the cell centres of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid1D,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        check_len(grid.cells(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: alloc::vec![0.0; grid.cells()],
        }
    }

    pub fn from_fn(grid: Grid1D, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = (0..grid.cells()).map(|j| f(grid.center(j))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        math::min(&self.values)
    }

    pub fn max(&self) -> f64 {
        math::max(&self.values)
    }

    /// Midpoint-rule integral `Δx Σ f_j`.
    pub fn integrate(&self) -> f64 {
        integrate(self)
    }
}

/// Midpoint-rule integral `Δx Σ f_j`.
pub fn integrate(f: &Field) -> f64 {
    f.grid.dx() * f.values.iter().sum::<f64>()
}

/// Discrete weighted Laplacian with no-flux boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLaplacian {
    grid: Grid1D,
    /// `w_{j+½}` for the `cells − 1` interior faces.
    face_weights: Vec<f64>,
}

impl WeightedLaplacian {
    /// Assembles the operator from nonnegative cell weights.
    pub fn assemble(weights: &Field) -> Result<Self> {
        if let Some((index, &value)) = weights
            .values
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w >= 0.0) || !w.is_finite())
        {
            return Err(Error::NegativeWeight { index, value });
        }
        let face_weights = weights
            .values
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect();
        Ok(Self {
            grid: weights.grid,
            face_weights,
        })
    }

    /// Operator with unit weights: the homogeneous-Neumann `−Δₕ`.
    pub fn unit(grid: Grid1D) -> Self {
        Self {
            grid,
            face_weights: alloc::vec![1.0; grid.cells() - 1],
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    /// The operator as a symmetric tridiagonal matrix.
    pub fn tridiagonal(&self) -> Tridiagonal {
        let n = self.grid.cells();
        let inv = 1.0 / (self.grid.dx() * self.grid.dx());
        let off: Vec<f64> = self.face_weights.iter().map(|w| -w * inv).collect();
        let diag = (0..n)
            .map(|j| {
                let left = if j > 0 { off[j - 1] } else { 0.0 };
                let right = if j + 1 < n { off[j] } else { 0.0 };
                -(left + right)
            })
            .collect();
        Tridiagonal {
            sub: off.clone(),
            diag,
            sup: off,
        }
    }

    /// `D u` on raw values. Panics if the length does not match the grid.
    pub fn apply_values(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.cells();
        assert_eq!(u.len(), n, "field length does not match the grid");
        let inv = 1.0 / (self.grid.dx() * self.grid.dx());
        // Face fluxes q_{j+½} = w_{j+½}(u_{j+1} − u_j)/Δx²; (Du)_j = q_{j−½} − q_{j+½}.
        let flux: Vec<f64> = self
            .face_weights
            .iter()
            .zip(u.windows(2))
            .map(|(w, p)| w * (p[1] - p[0]) * inv)
            .collect();
        (0..n)
            .map(|j| {
                let left = if j > 0 { flux[j - 1] } else { 0.0 };
                let right = if j + 1 < n { flux[j] } else { 0.0 };
                left - right
            })
            .collect()
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        check_len(self.grid.cells(), u.len())?;
        Ok(Field {
            grid: self.grid,
            values: self.apply_values(&u.values),
        })
    }

    /// Mean-zero solution of `D x = rhs` for `rhs` in the range of `D`.
    pub fn solve_pseudo_inverse(&self, rhs: &Field) -> Result<Field> {
        check_len(self.grid.cells(), rhs.len())?;
        let tolerance = 1e-8 * math::norm1(&rhs.values);
        let sum: f64 = rhs.values.iter().sum();
        if sum.abs() > tolerance {
            return Err(Error::RhsNotInRange { sum, tolerance });
        }
        Ok(Field {
            grid: self.grid,
            values: self.flux_solve(&rhs.values, tolerance)?,
        })
    }

    /// Moore-Penrose pseudo-inverse applied to arbitrary values: the component
    /// of `v` in the kernel (its mean on every connected piece of the mesh) is
    /// discarded before solving.
    pub fn pseudo_inverse_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.cells(), v.len())?;
        let mut projected = v.to_vec();
        for (start, end) in self.components() {
            let piece = &mut projected[start..end];
            let mean = piece.iter().sum::<f64>() / piece.len() as f64;
            piece.iter_mut().for_each(|x| *x -= mean);
        }
        let tolerance = 1e-8 * math::norm1(&projected).max(f64::MIN_POSITIVE);
        self.flux_solve(&projected, tolerance)
    }

    /// Weighted `H⁻¹` norm squared, `Δx · fᵀ D⁺ f`, for mean-zero `f`.
    pub fn h_minus1_norm_sq(&self, f: &Field) -> Result<f64> {
        let x = self.solve_pseudo_inverse(f)?;
        Ok(self.grid.dx() * math::dot(&f.values, &x.values))
    }

    /// Index ranges of the pieces left connected by nonzero face weights.
    fn components(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for (face, w) in self.face_weights.iter().enumerate() {
            if *w == 0.0 {
                out.push((start, face + 1));
                start = face + 1;
            }
        }
        out.push((start, self.grid.cells()));
        out
    }

    /// Integrates the face fluxes: in 1D `D x = r` fixes every flux as a
    /// partial sum of `r`, and each cell difference follows from its face
    /// weight. Each connected piece is then shifted to mean zero.
    fn flux_solve(&self, rhs: &[f64], tolerance: f64) -> Result<Vec<f64>> {
        let n = self.grid.cells();
        let dx2 = self.grid.dx() * self.grid.dx();
        let mut x = alloc::vec![0.0; n];
        let mut partial = 0.0;
        for face in 0..n - 1 {
            partial += rhs[face];
            let w = self.face_weights[face];
            if w == 0.0 {
                if partial.abs() > tolerance {
                    return Err(Error::DisconnectedOperator { face, sum: partial });
                }
                partial = 0.0;
                x[face + 1] = x[face];
            } else {
                x[face + 1] = x[face] - dx2 * partial / w;
            }
        }
        for (start, end) in self.components() {
            let piece = &mut x[start..end];
            let mean = piece.iter().sum::<f64>() / piece.len() as f64;
            piece.iter_mut().for_each(|v| *v -= mean);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Grid1D {
        Grid1D::new(0.0, n as f64, n).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = Grid1D::new(-1.0, 1.0, 50).unwrap();
        assert!((g.dx() - 0.04).abs() < 1e-15);
        assert!((g.center(0) + 0.98).abs() < 1e-15);
        let c = g.centers();
        assert!(c.windows(2).all(|p| p[1] > p[0]));
        assert!(Grid1D::new(0.0, 1.0, 1).is_err());
        assert!(Grid1D::new(1.0, 0.0, 4).is_err());
        assert_eq!(Grid1D::with_spacing(0.0, 1.0, 0.02).unwrap().cells(), 50);
    }

    #[test]
    fn integrate_examples() {
        for n in [2, 7, 40] {
            let g = Grid1D::new(-1.0, 1.0, n).unwrap();
            assert!((Field::from_fn(g, |_| 1.0).integrate() - 2.0).abs() < 1e-14);
            assert_eq!(Field::zeros(g).integrate(), 0.0);
            assert!(Field::from_fn(g, |x| x).integrate().abs() < 1e-12);
        }
    }

    #[test]
    fn three_cell_hand_evaluation() {
        let g = unit_grid(3);
        let op = WeightedLaplacian::assemble(&Field::new(g, vec![1.0; 3]).unwrap()).unwrap();
        let du = op
            .apply(&Field::new(g, vec![0.0, 1.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(du.values(), &[-1.0, 2.0, -1.0]);
        let tri = op.tridiagonal();
        assert_eq!(tri.apply(&[0.0, 1.0, 0.0]), vec![-1.0, 2.0, -1.0]);
    }

    #[test]
    fn constants_and_zero_are_annihilated() {
        let g = unit_grid(5);
        let w = Field::new(g, vec![0.3, 1.0, 2.0, 0.1, 0.7]).unwrap();
        let op = WeightedLaplacian::assemble(&w).unwrap();
        assert!(op.apply_values(&[2.5; 5]).iter().all(|v| *v == 0.0));
        assert!(op.apply_values(&[0.0; 5]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn negative_weight_rejected() {
        let g = unit_grid(3);
        let w = Field::new(g, vec![1.0, -0.5, 1.0]).unwrap();
        assert_eq!(
            WeightedLaplacian::assemble(&w),
            Err(Error::NegativeWeight {
                index: 1,
                value: -0.5
            })
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let op = WeightedLaplacian::unit(unit_grid(3));
        let other = Field::zeros(unit_grid(4));
        assert!(matches!(op.apply(&other), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn two_cell_pseudo_inverse() {
        let g = unit_grid(2);
        let op = WeightedLaplacian::unit(g);
        let x = op
            .solve_pseudo_inverse(&Field::new(g, vec![1.0, -1.0]).unwrap())
            .unwrap();
        assert!((x.values()[0] - 0.5).abs() < 1e-15);
        assert!((x.values()[1] + 0.5).abs() < 1e-15);
        let zero = op.solve_pseudo_inverse(&Field::zeros(g)).unwrap();
        assert_eq!(zero.values(), &[0.0, 0.0]);
    }

    #[test]
    fn h_minus1_examples() {
        let g = unit_grid(2);
        let op = WeightedLaplacian::unit(g);
        let f = Field::new(g, vec![1.0, -1.0]).unwrap();
        assert!((op.h_minus1_norm_sq(&f).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(op.h_minus1_norm_sq(&Field::zeros(g)).unwrap(), 0.0);
        let f2 = Field::new(g, vec![2.0, -2.0]).unwrap();
        assert!((op.h_minus1_norm_sq(&f2).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn rhs_outside_range_rejected() {
        let g = unit_grid(3);
        let op = WeightedLaplacian::unit(g);
        let r = Field::new(g, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            op.solve_pseudo_inverse(&r),
            Err(Error::RhsNotInRange { .. })
        ));
    }

    #[test]
    fn disconnected_operator() {
        let g = unit_grid(4);
        // Cells 1 and 2 carry zero weight, so face 1½ has zero weight.
        let op =
            WeightedLaplacian::assemble(&Field::new(g, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let bad = Field::new(g, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(
            op.solve_pseudo_inverse(&bad),
            Err(Error::DisconnectedOperator { face: 1, .. })
        ));
        // Balanced on each piece: solvable, each piece mean-zero.
        let ok = Field::new(g, vec![0.5, -0.5, 0.25, -0.25]).unwrap();
        let x = op.solve_pseudo_inverse(&ok).unwrap();
        let back = op.apply(&x).unwrap();
        for (a, b) in back.values().iter().zip(ok.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((x.values()[0] + x.values()[1]).abs() < 1e-15);
        assert!((x.values()[2] + x.values()[3]).abs() < 1e-15);
    }

    #[test]
    fn boundary_rows_match_reflected_ghost_cells() {
        // With a ghost cell u_0 = u_1 (no normal flux), the interior stencil at
        // j = 1 reduces to the one-sided boundary row; likewise at the right end.
        let g = Grid1D::new(0.0, 1.0, 6).unwrap();
        let w = [0.0, 0.4, 1.3, 0.8, 0.2, 0.0];
        let u = [0.3, -1.0, 2.0, 0.5, 0.1, 0.9];
        let op = WeightedLaplacian::assemble(&Field::new(g, w.to_vec()).unwrap()).unwrap();
        let du = op.apply_values(&u);
        let dx2 = g.dx() * g.dx();
        let interior = |wm: f64, w0: f64, wp: f64, um: f64, u0: f64, up: f64| {
            -((w0 + wp) / 2.0 * up - (wp + 2.0 * w0 + wm) / 2.0 * u0 + (w0 + wm) / 2.0 * um) / dx2
        };
        // Reflected ghost: weight and value mirrored.
        let left = interior(w[0], w[0], w[1], u[0], u[0], u[1]);
        let right = interior(w[4], w[5], w[5], u[4], u[5], u[5]);
        assert!((du[0] - left).abs() < 1e-12);
        assert!((du[5] - right).abs() < 1e-12);
    }

    fn weights_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0..5.0f64, n)
    }

    proptest! {
        #[test]
        fn mass_preserving_and_symmetric(w in weights_strategy(12), u in proptest::collection::vec(-3.0..3.0f64, 12)) {
            let g = Grid1D::new(-1.0, 1.0, 12).unwrap();
            let op = WeightedLaplacian::assemble(&Field::new(g, w).unwrap()).unwrap();
            let du = op.apply_values(&u);
            let scale = 1.0 / (g.dx() * g.dx());
            prop_assert!(du.iter().sum::<f64>().abs() <= 1e-12 * scale.max(1.0) * 10.0);
            let m = op.tridiagonal().to_dense();
            for j in 0..12 {
                let col: f64 = (0..12).map(|i| m[(i, j)]).sum();
                prop_assert!(col.abs() <= 1e-12 * scale);
                for i in 0..12 {
                    prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn psd_on_mean_zero(w in weights_strategy(10), u in proptest::collection::vec(-3.0..3.0f64, 10)) {
            let g = Grid1D::new(0.0, 1.0, 10).unwrap();
            let op = WeightedLaplacian::assemble(&Field::new(g, w).unwrap()).unwrap();
            let mean = u.iter().sum::<f64>() / 10.0;
            let v: Vec<f64> = u.iter().map(|x| x - mean).collect();
            let q = math::dot(&v, &op.apply_values(&v));
            prop_assert!(q >= -1e-12 * math::dot(&v, &v));
        }

        #[test]
        fn linearity(w in weights_strategy(8), u in proptest::collection::vec(-3.0..3.0f64, 8),
                     v in proptest::collection::vec(-3.0..3.0f64, 8), a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let g = Grid1D::new(0.0, 8.0, 8).unwrap();
            let op = WeightedLaplacian::assemble(&Field::new(g, w).unwrap()).unwrap();
            let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = op.apply_values(&combo);
            let du = op.apply_values(&u);
            let dv = op.apply_values(&v);
            for j in 0..8 {
                prop_assert!((lhs[j] - (a * du[j] + b * dv[j])).abs() <= 1e-12 * 100.0);
            }
        }

        #[test]
        fn pseudo_inverse_round_trip(w in proptest::collection::vec(0.05..5.0f64, 15), r in proptest::collection::vec(-1.0..1.0f64, 15)) {
            let g = Grid1D::new(-2.0, 2.0, 15).unwrap();
            let op = WeightedLaplacian::assemble(&Field::new(g, w).unwrap()).unwrap();
            let mean = r.iter().sum::<f64>() / 15.0;
            let rhs = Field::new(g, r.iter().map(|x| x - mean).collect()).unwrap();
            let x = op.solve_pseudo_inverse(&rhs).unwrap();
            prop_assert!(x.values().iter().sum::<f64>().abs() < 1e-10);
            let back = op.apply(&x).unwrap();
            let err = math::norm_inf(&math::sub(back.values(), rhs.values()));
            prop_assert!(err <= 1e-10 * math::norm_inf(rhs.values()).max(1e-300));
        }
    }
}
