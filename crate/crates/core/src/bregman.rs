//! Mirror maps, Bregman divergences and the multiplier solve that keeps a
//! mirror step on the affine set `A u = b`.

use alloc::vec::Vec;
use nalgebra::{linalg::Cholesky, DMatrix, Dyn};

use crate::error::{check_len, Error, Result};
use crate::grid::WeightedLaplacian;
use crate::linalg::{dense_solve, dvec, mat_t_vec, mat_vec};
use crate::math;
use crate::objective::{ConstrainedProblem, Objective};

/// Convex generator `Φ` of the mirror geometry.
#[derive(Debug, Clone)]
pub enum MirrorMap {
    /// `Φ(u) = ½ uᵀ W u` with `W` symmetric positive definite.
    Quadratic(QuadraticMap),
    /// `Φ(u) = ε Σ uᵢ log uᵢ` on the positive orthant.
    Entropy { eps: f64 },
    /// `Φ(ρ) = (Δx/2τ) (ρ − ρₙ)ᵀ D⁺ (ρ − ρₙ) + ε Δx Σ ρⱼ log ρⱼ`.
    WeightedH1Entropy(WassersteinMap),
    /// `Φ(u) = (Δx/2τ) (u − uₙ)ᵀ D⁺ (u − uₙ)
    ///        + Δx Σ [ε₁(1+uⱼ)log(1+uⱼ) + ε₂(1−uⱼ)log(1−uⱼ)]`.
    DoubleLogBarrier(BarrierMap),
}

#[derive(Debug, Clone)]
pub struct QuadraticMap {
    weight: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone)]
pub struct WassersteinMap {
    pub op: WeightedLaplacian,
    pub rho_n: Vec<f64>,
    pub tau: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BarrierMap {
    pub op: WeightedLaplacian,
    pub u_n: Vec<f64>,
    pub tau: f64,
    pub eps1: f64,
    pub eps2: f64,
}

/// Norm with respect to which a map is 1-strongly convex.
#[derive(Debug, Clone, PartialEq)]
pub enum DeclaredNorm {
    /// `‖x‖² = xᵀ W x`; dual `‖g‖²_* = gᵀ W⁻¹ g`.
    Weighted,
    /// `‖x‖² = s ‖x‖₁²`; dual `‖g‖²_* = ‖g‖∞² / s`. For the entropy map
    /// `s = ε`, valid on the probability simplex (Pinsker).
    L1 { modulus: f64 },
}

/// A nonnegative Bregman divergence.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BregmanValue(f64);

impl BregmanValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Output of [`solve_multiplier`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierStep {
    pub c: Vec<f64>,
    pub u_next: Vec<f64>,
    pub iterations: usize,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: "must be positive and finite",
        })
    }
}

impl MirrorMap {
    pub fn quadratic(weight: DMatrix<f64>) -> Result<Self> {
        check_len(weight.nrows(), weight.ncols())?;
        let chol = weight.clone().cholesky().ok_or(Error::SingularMetric)?;
        Ok(Self::Quadratic(QuadraticMap { weight, chol }))
    }

    /// `Φ(u) = ½‖u‖²`.
    pub fn euclidean(n: usize) -> Self {
        Self::quadratic(DMatrix::identity(n, n)).expect("identity is positive definite")
    }

    pub fn entropy(eps: f64) -> Result<Self> {
        positive("epsilon", eps)?;
        Ok(Self::Entropy { eps })
    }

    pub fn weighted_h1_entropy(
        op: WeightedLaplacian,
        rho_n: Vec<f64>,
        tau: f64,
        eps: f64,
    ) -> Result<Self> {
        check_len(op.grid().cells(), rho_n.len())?;
        positive("tau", tau)?;
        positive("epsilon", eps)?;
        Ok(Self::WeightedH1Entropy(WassersteinMap {
            op,
            rho_n,
            tau,
            eps,
        }))
    }

    pub fn double_log_barrier(
        op: WeightedLaplacian,
        u_n: Vec<f64>,
        tau: f64,
        eps1: f64,
        eps2: f64,
    ) -> Result<Self> {
        check_len(op.grid().cells(), u_n.len())?;
        positive("tau", tau)?;
        positive("epsilon1", eps1)?;
        positive("epsilon2", eps2)?;
        Ok(Self::DoubleLogBarrier(BarrierMap {
            op,
            u_n,
            tau,
            eps1,
            eps2,
        }))
    }

    /// Dimension fixed by the map, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Quadratic(q) => Some(q.weight.nrows()),
            Self::Entropy { .. } => None,
            Self::WeightedH1Entropy(w) => Some(w.rho_n.len()),
            Self::DoubleLogBarrier(b) => Some(b.u_n.len()),
        }
    }

    pub fn check_domain(&self, u: &[f64]) -> Result<()> {
        if let Some(n) = self.dim() {
            check_len(n, u.len())?;
        }
        let bad = match self {
            Self::Quadratic(_) => u.iter().position(|x| !x.is_finite()),
            Self::Entropy { .. } | Self::WeightedH1Entropy(_) => {
                u.iter().position(|x| !(*x > 0.0) || !x.is_finite())
            }
            Self::DoubleLogBarrier(_) => u.iter().position(|x| !(x.abs() < 1.0)),
        };
        match bad {
            Some(index) => Err(Error::DomainViolation {
                index,
                value: u[index],
            }),
            None => Ok(()),
        }
    }

    pub fn declared_norm(&self) -> Option<DeclaredNorm> {
        match self {
            Self::Quadratic(_) => Some(DeclaredNorm::Weighted),
            Self::Entropy { eps } => Some(DeclaredNorm::L1 { modulus: *eps }),
            _ => None,
        }
    }

    /// `‖x‖²_ω` in the declared norm.
    pub fn norm_sq(&self, x: &[f64]) -> Option<f64> {
        match self.declared_norm()? {
            DeclaredNorm::Weighted => {
                let Self::Quadratic(q) = self else {
                    return None;
                };
                Some(math::dot(x, &mat_vec(&q.weight, x)))
            }
            DeclaredNorm::L1 { modulus } => Some(modulus * math::norm1(x) * math::norm1(x)),
        }
    }

    /// `‖g‖²_{ω,*}` in the dual of the declared norm.
    pub fn dual_norm_sq(&self, g: &[f64]) -> Option<f64> {
        match self.declared_norm()? {
            DeclaredNorm::Weighted => {
                let Self::Quadratic(q) = self else {
                    return None;
                };
                let x = q.chol.solve(&dvec(g));
                Some(math::dot(g, x.as_slice()))
            }
            DeclaredNorm::L1 { modulus } => Some(math::norm_inf(g) * math::norm_inf(g) / modulus),
        }
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        self.check_domain(u)?;
        Ok(match self {
            Self::Quadratic(q) => 0.5 * math::dot(u, &mat_vec(&q.weight, u)),
            Self::Entropy { eps } => eps * u.iter().map(|x| x * math::ln(*x)).sum::<f64>(),
            Self::WeightedH1Entropy(w) => {
                let dx = w.op.grid().dx();
                let d = math::sub(u, &w.rho_n);
                let x = w.op.pseudo_inverse_values(&d)?;
                dx / (2.0 * w.tau) * math::dot(&d, &x)
                    + w.eps * dx * u.iter().map(|r| r * math::ln(*r)).sum::<f64>()
            }
            Self::DoubleLogBarrier(b) => {
                let dx = b.op.grid().dx();
                let d = math::sub(u, &b.u_n);
                let x = b.op.pseudo_inverse_values(&d)?;
                let barrier: f64 = u
                    .iter()
                    .map(|v| {
                        b.eps1 * (1.0 + v) * math::ln_1p(*v) + b.eps2 * (1.0 - v) * math::ln_1p(-v)
                    })
                    .sum();
                dx / (2.0 * b.tau) * math::dot(&d, &x) + dx * barrier
            }
        })
    }

    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(u)?;
        Ok(match self {
            Self::Quadratic(q) => mat_vec(&q.weight, u),
            Self::Entropy { eps } => u.iter().map(|x| eps * (math::ln(*x) + 1.0)).collect(),
            Self::WeightedH1Entropy(w) => {
                let dx = w.op.grid().dx();
                let x = w.op.pseudo_inverse_values(&math::sub(u, &w.rho_n))?;
                x.iter()
                    .zip(u)
                    .map(|(xi, r)| dx / w.tau * xi + w.eps * dx * (math::ln(*r) + 1.0))
                    .collect()
            }
            Self::DoubleLogBarrier(b) => {
                let dx = b.op.grid().dx();
                let x = b.op.pseudo_inverse_values(&math::sub(u, &b.u_n))?;
                x.iter()
                    .zip(u)
                    .map(|(xi, v)| dx / b.tau * xi + dx * barrier_gradient(*v, b.eps1, b.eps2))
                    .collect()
            }
        })
    }

    /// `∇²Φ(u) v`.
    pub fn hessian_apply(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(u)?;
        check_len(u.len(), v.len())?;
        Ok(match self {
            Self::Quadratic(q) => mat_vec(&q.weight, v),
            Self::Entropy { eps } => u.iter().zip(v).map(|(x, y)| eps * y / x).collect(),
            Self::WeightedH1Entropy(w) => {
                let dx = w.op.grid().dx();
                let x = w.op.pseudo_inverse_values(v)?;
                x.iter()
                    .zip(u.iter().zip(v))
                    .map(|(xi, (r, vi))| dx / w.tau * xi + w.eps * dx * vi / r)
                    .collect()
            }
            Self::DoubleLogBarrier(b) => {
                let dx = b.op.grid().dx();
                let x = b.op.pseudo_inverse_values(v)?;
                x.iter()
                    .zip(u.iter().zip(v))
                    .map(|(xi, (ui, vi))| {
                        dx / b.tau * xi + dx * barrier_curvature(*ui, b.eps1, b.eps2) * vi
                    })
                    .collect()
            }
        })
    }

    /// `∇²Φ(u)⁻¹ v`. Composite maps assemble the Hessian densely.
    pub fn hessian_solve(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(u)?;
        check_len(u.len(), v.len())?;
        match self {
            Self::Quadratic(q) => Ok(q.chol.solve(&dvec(v)).as_slice().to_vec()),
            Self::Entropy { eps } => Ok(u.iter().zip(v).map(|(x, y)| x * y / eps).collect()),
            _ => dense_solve(&self.hessian_matrix(u)?, v),
        }
    }

    /// Dense `∇²Φ(u)`.
    pub fn hessian_matrix(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let n = u.len();
        let mut h = DMatrix::zeros(n, n);
        let mut e = alloc::vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.hessian_apply(u, &e)?;
            h.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(h)
    }

    /// Solves `∇Φ(u) = g` in closed form. The composite maps have no
    /// pointwise inverse; their applications run a Newton solve instead.
    pub fn inverse_gradient(&self, g: &[f64]) -> Result<Vec<f64>> {
        let u = match self {
            Self::Quadratic(q) => {
                check_len(q.weight.nrows(), g.len())?;
                q.chol.solve(&dvec(g)).as_slice().to_vec()
            }
            Self::Entropy { eps } => g.iter().map(|x| math::exp(x / eps - 1.0)).collect(),
            _ => return Err(Error::InverseGradientUnavailable),
        };
        self.check_domain(&u)?;
        Ok(u)
    }
}

/// `d/du [ε₁(1+u)log(1+u) + ε₂(1−u)log(1−u)]`.
pub fn barrier_gradient(u: f64, eps1: f64, eps2: f64) -> f64 {
    eps1 * math::ln_1p(u) - eps2 * math::ln_1p(-u) + (eps1 - eps2)
}

/// Second derivative of the scalar barrier, `ε₁/(1+u) + ε₂/(1−u)`.
pub fn barrier_curvature(u: f64, eps1: f64, eps2: f64) -> f64 {
    eps1 / (1.0 + u) + eps2 / (1.0 - u)
}

/// `D_Φ(x, y) = Φ(x) − Φ(y) − ∇Φ(y)ᵀ(x − y)`.
///
/// Rounding can leave a tiny negative number when `x ≈ y`; it is reported
/// as zero.
pub fn bregman_divergence(map: &MirrorMap, x: &[f64], y: &[f64]) -> Result<BregmanValue> {
    check_len(x.len(), y.len())?;
    let d = match map {
        // Closed forms avoid cancellation between large Φ values.
        MirrorMap::Entropy { eps } => {
            map.check_domain(x)?;
            map.check_domain(y)?;
            eps * x
                .iter()
                .zip(y)
                .map(|(a, b)| a * math::ln(a / b) - a + b)
                .sum::<f64>()
        }
        MirrorMap::Quadratic(q) => {
            let d = math::sub(x, y);
            0.5 * math::dot(&d, &mat_vec(&q.weight, &d))
        }
        _ => {
            let g = map.gradient(y)?;
            map.value(x)? - map.value(y)? - math::dot(&g, &math::sub(x, y))
        }
    };
    Ok(BregmanValue(d.max(0.0)))
}

/// `D_f(x, y)` for an objective.
pub fn objective_divergence<O: Objective + ?Sized>(f: &O, x: &[f64], y: &[f64]) -> f64 {
    f.value(x) - f.value(y) - math::dot(&f.gradient(y), &math::sub(x, y))
}

/// Mirror step with multiplier: finds `c` and `u⁺` with
/// `∇Φ(u⁺) = ∇Φ(u) − η(∇f(u) + Aᵀc)` and `A u⁺ = b`.
pub fn solve_multiplier<O: Objective>(
    map: &MirrorMap,
    problem: &ConstrainedProblem<O>,
    u: &[f64],
    eta: f64,
) -> Result<MultiplierStep> {
    positive("eta", eta)?;
    check_len(problem.dim(), u.len())?;
    map.check_domain(u)?;
    let grad = problem.objective.gradient(u);
    let dual: Vec<f64> = map
        .gradient(u)?
        .iter()
        .zip(&grad)
        .map(|(p, g)| p - eta * g)
        .collect();
    let a = problem.constraint_matrix();
    let m = a.nrows();
    if m == 0 {
        return Ok(MultiplierStep {
            c: Vec::new(),
            u_next: map.inverse_gradient(&dual)?,
            iterations: 0,
        });
    }
    let b = problem.constraint_rhs();
    let tol = problem.multiplier_tolerance();

    if let (MirrorMap::Entropy { eps }, Some(scale)) = (map, constant_row(a)) {
        return entropy_normalization(*eps, &dual, scale, b[0], eta);
    }

    // u(c) = (∇Φ)⁻¹(dual − η Aᵀ c)
    let primal = |c: &[f64]| -> Result<Vec<f64>> {
        let shift = mat_t_vec(a, c);
        let z: Vec<f64> = dual.iter().zip(&shift).map(|(d, s)| d - eta * s).collect();
        map.inverse_gradient(&z)
    };
    let residual = |v: &[f64]| -> Vec<f64> { math::sub(&mat_vec(a, v), b) };
    // ∂r/∂c = −η A ∇²Φ(u)⁻¹ Aᵀ
    let jacobian = |v: &[f64]| -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(m, m);
        for col in 0..m {
            let row: Vec<f64> = a.row(col).iter().copied().collect();
            let hinv = map.hessian_solve(v, &row)?;
            let ahinv = mat_vec(a, &hinv);
            for r in 0..m {
                j[(r, col)] = -eta * ahinv[r];
            }
        }
        Ok(j)
    };

    if m == 1 {
        scalar_multiplier(&primal, &residual, &jacobian, tol)
    } else {
        vector_multiplier(m, &primal, &residual, &jacobian, tol)
    }
}

/// Returns `s` when every column of the single-row `a` equals `s`.
fn constant_row(a: &DMatrix<f64>) -> Option<f64> {
    if a.nrows() != 1 {
        return None;
    }
    let s = a[(0, 0)];
    (s != 0.0 && a.iter().all(|x| *x == s)).then_some(s)
}

/// Closed-form multiplicative-weights normalization for the entropy map
/// with the constraint `s Σ uᵢ = b`.
fn entropy_normalization(
    eps: f64,
    dual: &[f64],
    s: f64,
    b: f64,
    eta: f64,
) -> Result<MultiplierStep> {
    let target = b / s;
    if !(target > 0.0) {
        return Err(Error::DomainViolation {
            index: 0,
            value: target,
        });
    }
    let logw: Vec<f64> = dual.iter().map(|z| z / eps - 1.0).collect();
    let shift = math::max(&logw);
    let weights: Vec<f64> = logw.iter().map(|l| math::exp(l - shift)).collect();
    let total: f64 = weights.iter().sum();
    let u_next: Vec<f64> = weights.iter().map(|w| target * w / total).collect();
    if let Some(index) = u_next.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::DomainViolation {
            index,
            value: u_next[index],
        });
    }
    // exp(−η s c/ε) Σ w = target
    let log_sum = shift + math::ln(total);
    let c = -(eps / (eta * s)) * (math::ln(target) - log_sum);
    Ok(MultiplierStep {
        c: alloc::vec![c],
        u_next,
        iterations: 0,
    })
}

const MULTIPLIER_MAX_ITER: usize = 200;

/// Newton on the scalar multiplier, safeguarded by a bracket. `r(c)` is
/// strictly decreasing, so its sign tells which side of the root `c` lies.
fn scalar_multiplier(
    primal: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    residual: &dyn Fn(&[f64]) -> Vec<f64>,
    jacobian: &dyn Fn(&[f64]) -> Result<DMatrix<f64>>,
    tol: f64,
) -> Result<MultiplierStep> {
    let eval = |c: f64| -> Result<(Vec<f64>, f64)> {
        let u = primal(&[c])?;
        let r = residual(&u)[0];
        Ok((u, r))
    };
    let mut c = 0.0;
    let (mut u, mut r) = eval(c)?;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for it in 0..MULTIPLIER_MAX_ITER {
        if r.abs() <= tol {
            return Ok(MultiplierStep {
                c: alloc::vec![c],
                u_next: u,
                iterations: it,
            });
        }
        if r > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let slope = jacobian(&u).map(|j| j[(0, 0)]).unwrap_or(0.0);
        let newton = if slope < 0.0 { c - r / slope } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            // Expand away from the known side.
            let step = (c.abs()).max(1.0) * 2.0;
            if lo.is_finite() {
                lo + step
            } else {
                hi - step
            }
        };
        c = next;
        match eval(c) {
            Ok((un, rn)) if rn.is_finite() => {
                u = un;
                r = rn;
            }
            _ => {
                // Overflow or domain exit: the root is between c and the last good point.
                if r > 0.0 {
                    hi = c;
                    c = lo;
                } else {
                    lo = c;
                    c = hi;
                }
                let (un, rn) = eval(c)?;
                u = un;
                r = rn;
            }
        }
    }
    Err(Error::MultiplierNotFound {
        iterations: MULTIPLIER_MAX_ITER,
        residual: r.abs(),
    })
}

/// Damped Newton on the `m`-dimensional residual.
fn vector_multiplier(
    m: usize,
    primal: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    residual: &dyn Fn(&[f64]) -> Vec<f64>,
    jacobian: &dyn Fn(&[f64]) -> Result<DMatrix<f64>>,
    tol: f64,
) -> Result<MultiplierStep> {
    let mut c = alloc::vec![0.0; m];
    let mut u = primal(&c)?;
    let mut r = residual(&u);
    for it in 0..MULTIPLIER_MAX_ITER {
        let norm = math::norm_inf(&r);
        if norm <= tol {
            return Ok(MultiplierStep {
                c,
                u_next: u,
                iterations: it,
            });
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = dense_solve(&jacobian(&u)?, &neg).map_err(|_| Error::MultiplierNotFound {
            iterations: it,
            residual: norm,
        })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = c.iter().zip(&delta).map(|(x, d)| x + t * d).collect();
            if let Ok(ut) = primal(&trial) {
                let rt = residual(&ut);
                if math::norm_inf(&rt) < norm {
                    c = trial;
                    u = ut;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::MultiplierNotFound {
                iterations: it,
                residual: norm,
            });
        }
    }
    Err(Error::MultiplierNotFound {
        iterations: MULTIPLIER_MAX_ITER,
        residual: math::norm_inf(&r),
    })
}

/// `μ = min_s D_f(u*, s) / D_Φ(u*, s)` over the samples.
pub fn strong_convexity_ratio<O: Objective>(
    map: &MirrorMap,
    problem: &ConstrainedProblem<O>,
    samples: &[Vec<f64>],
    reference: &[f64],
) -> Result<f64> {
    let mut mu = f64::INFINITY;
    for (index, s) in samples.iter().enumerate() {
        let dphi = bregman_divergence(map, reference, s)?.value();
        if dphi <= 0.0 {
            return Err(Error::DegenerateSample { index });
        }
        let df = objective_divergence(&problem.objective, reference, s);
        mu = mu.min(df / dphi);
    }
    Ok(mu)
}
