//! Minimizing movements for the Cahn-Hilliard equation with degenerate
//! mobility, `∂ₜu = ∇·(M(u)∇ δE/δu)`, `M(u) = 1 − u²`.
//!
//! The mirror map adds the double-log barrier to `(1/2τ)‖u − uₙ‖²_{D⁺}`, so
//! the update reads
//!
//! ```text
//! u⁺ + τ D g(u⁺) = u + τ D g(u) − η[u − uₙ + τ D δE(u)]
//! g(u) = ε₁ log(1+u) − ε₂ log(1−u) + (ε₁ − ε₂)
//! ```
//!
//! and is solved by Newton in the dual variable `z = g(u⁺)`. Since
//! `u⁺ = g⁻¹(z)` the iterate stays in `(−1, 1)` by construction.

use alloc::vec::Vec;

use crate::bregman::barrier_gradient;
use crate::dual_newton::DualSystem;
use crate::error::{check_len, Error, Result};
use crate::grid::{Field, Grid1D, WeightedLaplacian};
use crate::math;
use crate::wasserstein::{Schedule, Scheme, Snapshot, Stall, DISSIPATION_TOLERANCE};

/// Distance to `±1` clamped on initial data.
pub const INITIAL_CLAMP: f64 = 1e-8;

/// Distance from `±1` to the nearest interior double.
const HALF_ULP: f64 = f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `Ψ(u) = ¼(1 − u²)²`.
    GinzburgLandau,
    /// `Ψ(u) = ½(1 − u²)`.
    QuadraticWell,
}

impl Potential {
    pub fn value(self, u: f64) -> f64 {
        let w = 1.0 - u * u;
        match self {
            Self::GinzburgLandau => 0.25 * w * w,
            Self::QuadraticWell => 0.5 * w,
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Self::GinzburgLandau => -u * (1.0 - u * u),
            Self::QuadraticWell => -u,
        }
    }
}

/// `E(u) = Δx Σ Ψ(uⱼ) + Δx Σ_faces ½α²((u_{j+1} − uⱼ)/Δx)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CHEnergy {
    grid: Grid1D,
    /// Capillary coefficient `α`.
    pub alpha: f64,
    pub potential: Potential,
}

impl CHEnergy {
    pub fn new(grid: Grid1D, alpha: f64, potential: Potential) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "capillary coefficient must be positive",
            });
        }
        Ok(Self {
            grid,
            alpha,
            potential,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        check_len(self.grid.cells(), u.len())?;
        let dx = self.grid.dx();
        let bulk: f64 = u.iter().map(|v| self.potential.value(*v)).sum();
        let grad: f64 = u
            .windows(2)
            .map(|w| {
                let g = (w[1] - w[0]) / dx;
                0.5 * self.alpha * self.alpha * g * g
            })
            .sum();
        Ok(dx * (bulk + grad))
    }

    /// Pointwise `δE/δu = Ψ'(u) − α²Δₕu`, with `−Δₕ` the unit-weight operator.
    pub fn first_variation(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.cells(), u.len())?;
        let lap = WeightedLaplacian::unit(self.grid).apply_values(u);
        let a2 = self.alpha * self.alpha;
        Ok(u.iter()
            .zip(&lap)
            .map(|(v, l)| self.potential.derivative(*v) + a2 * l)
            .collect())
    }
}

fn check_open(u: &[f64]) -> Result<()> {
    match u
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > -1.0 && **v < 1.0))
    {
        Some((index, &value)) => Err(Error::DomainViolation { index, value }),
        None => Ok(()),
    }
}

/// `M(u) = (1 + u)(1 − u)`, cut at zero.
pub fn mobility(u: f64) -> f64 {
    ((1.0 + u) * (1.0 - u)).max(0.0)
}

/// Current outer state `uₙ` with `D_{M(uₙ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CHState {
    pub n: usize,
    pub tau: f64,
    u: Field,
    op: WeightedLaplacian,
    /// `(ε₁, ε₂, g(u))` from the previous mirror step. Near `±1` the stored
    /// `u` is rounded and no longer determines `g(u)`.
    dual: Option<(f64, f64, Vec<f64>)>,
}

impl CHState {
    /// Requires `−1 < uⱼ < 1`.
    pub fn new(n: usize, u: Field, tau: f64) -> Result<Self> {
        check_open(u.values())?;
        Self::relaxed(n, u, tau)
    }

    /// Any finite `u`; the mobility is cut at zero outside `[−1, 1]`.
    pub fn relaxed(n: usize, u: Field, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: "must be positive and finite",
            });
        }
        let m = Field::new(*u.grid(), u.values().iter().map(|v| mobility(*v)).collect())?;
        let op = WeightedLaplacian::assemble(&m)?;
        Ok(Self {
            n,
            tau,
            u,
            op,
            dual: None,
        })
    }

    /// Pairs `u` with an operator assembled elsewhere.
    pub fn with_operator(n: usize, u: Field, op: WeightedLaplacian, tau: f64) -> Result<Self> {
        check_len(op.grid().cells(), u.len())?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: "must be positive and finite",
            });
        }
        Ok(Self {
            n,
            tau,
            u,
            op,
            dual: None,
        })
    }

    pub fn u(&self) -> &Field {
        &self.u
    }

    pub fn op(&self) -> &WeightedLaplacian {
        &self.op
    }

    pub fn time(&self) -> f64 {
        self.n as f64 * self.tau
    }

    pub fn mass(&self) -> f64 {
        self.u.integrate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CHConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub eta: f64,
    pub tol: f64,
    pub iter_max: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub scheme: Scheme,
}

impl CHConfig {
    /// Equal barrier weights `ε₁ = ε₂ = ε`.
    pub fn new(eps: f64, eta: f64, tol: f64, iter_max: usize) -> Self {
        Self {
            eps1: eps,
            eps2: eps,
            eta,
            tol,
            iter_max,
            newton_tol: 1e-6,
            newton_max_iter: 50,
            scheme: Scheme::Mirror,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("epsilon1", self.eps1),
            ("epsilon2", self.eps2),
            ("eta", self.eta),
            ("tol", self.tol),
            ("newtonTol", self.newton_tol),
        ];
        for (name, v) in checks {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be positive and finite",
                });
            }
        }
        if self.iter_max == 0 || self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "iterMax",
                reason: "iteration budgets must be positive",
            });
        }
        Ok(())
    }
}

/// Solves `k₁ s − k₂ ln(2 − eˢ) = w` for `s ≤ 0`, given `w ≤ 0`.
fn barrier_side(k1: f64, k2: f64, w: f64) -> f64 {
    let ln2 = core::f64::consts::LN_2;
    let (mut lo, mut hi) = (w / k1, ((w + k2 * ln2) / k1).min(0.0));
    let f = |s: f64| k1 * s - k2 * math::ln(2.0 - math::exp(s)) - w;
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(s);
        if v == 0.0 {
            return s;
        }
        if v > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let e = math::exp(s);
        let newton = s - v / (k1 + k2 * e / (2.0 - e));
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    s
}

/// `(1 + u, 1 − u)` for `u = g⁻¹(z)`, each accurate even when tiny.
pub fn barrier_inverse(z: f64, eps1: f64, eps2: f64) -> (f64, f64) {
    let w = z - (eps1 - eps2);
    if eps1 == eps2 {
        let r = w / eps1;
        if r <= 0.0 {
            let e = math::exp(r);
            (2.0 * e / (1.0 + e), 2.0 / (1.0 + e))
        } else {
            let e = math::exp(-r);
            (2.0 / (1.0 + e), 2.0 * e / (1.0 + e))
        }
    } else if w <= 0.0 {
        let a = math::exp(barrier_side(eps1, eps2, w));
        (a, 2.0 - a)
    } else {
        let b = math::exp(barrier_side(eps2, eps1, -w));
        (2.0 - b, b)
    }
}

fn barrier_primal(z: f64, eps1: f64, eps2: f64) -> (f64, f64) {
    let (a, b) = barrier_inverse(z, eps1, eps2);
    // Rounded onto the nearest interior double when 1 ± u is below an ulp.
    let u = if a <= b {
        (a - 1.0).max(-1.0 + HALF_ULP)
    } else {
        (1.0 - b).min(1.0 - HALF_ULP)
    };
    // du/dz = 1 / g'(u) with g'(u) = ε₁/(1+u) + ε₂/(1−u).
    (u, a * b / (eps1 * b + eps2 * a))
}

/// One mirror update in both variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CHInnerStep {
    pub u: Vec<f64>,
    /// `g(u)`, carried so that the next update does not recompute it from
    /// `u` near the bounds.
    pub z: Vec<f64>,
    pub newton_iterations: usize,
}

fn dual_step(
    state: &CHState,
    energy: &CHEnergy,
    cfg: &CHConfig,
    u_k: &[f64],
    z_k: &[f64],
) -> Result<CHInnerStep> {
    let n = state.op.grid().cells();
    check_len(n, u_k.len())?;
    check_len(n, z_k.len())?;
    let dz = state.op.apply_values(z_k);
    let dv = state.op.apply_values(&energy.first_variation(u_k)?);
    let u_n = state.u.values();
    let tau = state.tau;
    let rhs: Vec<f64> = (0..n)
        .map(|j| u_k[j] + tau * dz[j] - cfg.eta * (u_k[j] - u_n[j] + tau * dv[j]))
        .collect();
    let primal = |z: f64| barrier_primal(z, cfg.eps1, cfg.eps2);
    let system = DualSystem {
        op: &state.op,
        scale: tau,
        rhs: &rhs,
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
        primal: &primal,
    };
    let (z, newton_iterations) = system.solve(z_k, cfg.newton_tol, cfg.newton_max_iter)?;
    let u: Vec<f64> = z.iter().map(|v| primal(*v).0).collect();
    check_open(&u)?;
    Ok(CHInnerStep {
        u,
        z,
        newton_iterations,
    })
}

fn dual_of(u: &[f64], cfg: &CHConfig) -> Vec<f64> {
    u.iter()
        .map(|v| barrier_gradient(*v, cfg.eps1, cfg.eps2))
        .collect()
}

/// `u^{k+1}` from `u^k` by the barrier mirror update.
pub fn ch_inner_step(
    state: &CHState,
    energy: &CHEnergy,
    cfg: &CHConfig,
    u_k: &[f64],
) -> Result<CHInnerStep> {
    check_open(u_k)?;
    dual_step(state, energy, cfg, u_k, &dual_of(u_k, cfg))
}

/// Explicit `u − η(u − uₙ) − ητ D δE(u)`; no bound safeguard.
pub fn ch_variable_metric_step(
    state: &CHState,
    energy: &CHEnergy,
    eta: f64,
    u_k: &[f64],
) -> Result<Vec<f64>> {
    check_len(state.op.grid().cells(), u_k.len())?;
    let dv = state.op.apply_values(&energy.first_variation(u_k)?);
    let u_n = state.u.values();
    Ok((0..u_k.len())
        .map(|j| u_k[j] - eta * (u_k[j] - u_n[j]) - eta * state.tau * dv[j])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CHOuterStep {
    pub state: CHState,
    pub inner_iterations: usize,
    pub newton_iterations: usize,
    pub errors: Vec<f64>,
    pub energy_before: f64,
    pub energy: f64,
    /// Extremes of `u` over every inner iterate.
    pub min_u: f64,
    pub max_u: f64,
    pub stall: Option<Stall>,
}

/// Inner iterations from `u⁰ = uₙ` until the relative change drops to `tol`.
pub fn ch_outer_step(state: &CHState, energy: &CHEnergy, cfg: &CHConfig) -> Result<CHOuterStep> {
    cfg.validate()?;
    let mut u = state.u.values().to_vec();
    let mut z: Vec<f64> = match cfg.scheme {
        Scheme::Mirror => {
            check_open(&u)?;
            match &state.dual {
                Some((e1, e2, z)) if *e1 == cfg.eps1 && *e2 == cfg.eps2 => z.clone(),
                _ => dual_of(&u, cfg),
            }
        }
        Scheme::VariableMetric => Vec::new(),
    };
    let mut errors = Vec::new();
    let mut newton_iterations = 0;
    let (mut min_u, mut max_u) = (math::min(&u), math::max(&u));
    let mut converged = false;
    while errors.len() < cfg.iter_max {
        let next = match cfg.scheme {
            Scheme::Mirror => {
                let step = dual_step(state, energy, cfg, &u, &z)?;
                newton_iterations += step.newton_iterations;
                z = step.z;
                step.u
            }
            Scheme::VariableMetric => ch_variable_metric_step(state, energy, cfg.eta, &u)?,
        };
        min_u = min_u.min(math::min(&next));
        max_u = max_u.max(math::max(&next));
        let err = math::relative_change(&next, &u);
        errors.push(err);
        u = next;
        if err <= cfg.tol {
            converged = true;
            break;
        }
    }
    let energy_before = energy.value(state.u.values())?;
    let e = energy.value(&u)?;
    let stall = if !converged {
        Some(Stall::IterMax)
    } else if e > energy_before + DISSIPATION_TOLERANCE * (1.0 + energy_before.abs()) {
        Some(Stall::EnergyIncrease)
    } else {
        None
    };
    let field = Field::new(*state.u.grid(), u)?;
    let next = match cfg.scheme {
        Scheme::Mirror => {
            let mut next = CHState::new(state.n + 1, field, state.tau)?;
            next.dual = Some((cfg.eps1, cfg.eps2, z));
            next
        }
        Scheme::VariableMetric => CHState::relaxed(state.n + 1, field, state.tau)?,
    };
    Ok(CHOuterStep {
        state: next,
        inner_iterations: errors.len(),
        newton_iterations,
        errors,
        energy_before,
        energy: e,
        min_u,
        max_u,
        stall,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CHSummary {
    pub n: usize,
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub inner_iterations: usize,
    pub newton_iterations: usize,
    pub stall: Option<Stall>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CHEvolution {
    pub summaries: Vec<CHSummary>,
    pub snapshots: Vec<Snapshot>,
    pub inner_errors: Vec<Vec<f64>>,
    pub final_state: CHState,
}

impl CHEvolution {
    pub fn min_u(&self) -> f64 {
        self.summaries
            .iter()
            .map(|s| s.min_u)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_u(&self) -> f64 {
        self.summaries
            .iter()
            .map(|s| s.max_u)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.summaries[0].mass;
        self.summaries
            .iter()
            .map(|s| (s.mass - m0).abs())
            .fold(0.0, f64::max)
    }
}

/// Chained outer steps from `u_in`, first clamped to `[−1 + δ, 1 − δ]`.
pub fn ch_evolve(
    u_in: Field,
    energy: &CHEnergy,
    cfg: &CHConfig,
    schedule: &Schedule,
) -> Result<CHEvolution> {
    cfg.validate()?;
    let lo = -1.0 + INITIAL_CLAMP;
    let hi = 1.0 - INITIAL_CLAMP;
    let grid = *u_in.grid();
    let clamped = Field::new(
        grid,
        u_in.into_values()
            .into_iter()
            .map(|v| v.max(lo).min(hi))
            .collect(),
    )?;
    let mut state = match cfg.scheme {
        Scheme::Mirror => CHState::new(0, clamped, schedule.tau)?,
        Scheme::VariableMetric => CHState::relaxed(0, clamped, schedule.tau)?,
    };
    let mut summaries = Vec::with_capacity(schedule.steps + 1);
    let mut snapshots = Vec::new();
    let mut inner_errors = Vec::with_capacity(schedule.steps);
    summaries.push(CHSummary {
        n: 0,
        t: 0.0,
        mass: state.mass(),
        energy: energy.value(state.u.values())?,
        min_u: state.u.min(),
        max_u: state.u.max(),
        inner_iterations: 0,
        newton_iterations: 0,
        stall: None,
    });
    if schedule.wants(0) {
        snapshots.push(Snapshot {
            n: 0,
            t: 0.0,
            density: state.u.clone(),
        });
    }
    for _ in 0..schedule.steps {
        let step = ch_outer_step(&state, energy, cfg)?;
        state = step.state;
        summaries.push(CHSummary {
            n: state.n,
            t: state.time(),
            mass: state.mass(),
            energy: step.energy,
            min_u: step.min_u,
            max_u: step.max_u,
            inner_iterations: step.inner_iterations,
            newton_iterations: step.newton_iterations,
            stall: step.stall,
        });
        inner_errors.push(step.errors);
        if schedule.wants(state.n) {
            snapshots.push(Snapshot {
                n: state.n,
                t: state.time(),
                density: state.u.clone(),
            });
        }
    }
    Ok(CHEvolution {
        summaries,
        snapshots,
        inner_errors,
        final_state: state,
    })
}

/// `cos((x − ½)/α) − 1` on `|x − ½| ≤ πα/2`, else `−1`.
pub fn ch_initial_profile(x: f64, alpha: f64) -> f64 {
    let s = x - 0.5;
    if s.abs() <= core::f64::consts::FRAC_PI_2 * alpha {
        math::cos(s / alpha) - 1.0
    } else {
        -1.0
    }
}

/// `(1/π)[1 + cos((x − ½)/α)] − 1` on `|x − ½| ≤ πα`, else `−1`.
pub fn ch_steady_state(x: f64, alpha: f64) -> f64 {
    let s = x - 0.5;
    if s.abs() <= core::f64::consts::PI * alpha {
        (1.0 + math::cos(s / alpha)) / core::f64::consts::PI - 1.0
    } else {
        -1.0
    }
}
