//! The convergence-bound suite: every bound is re-checked from the recorded
//! iterates of a run on two instances, the simplex toy and a random strongly
//! convex quadratic on the simplex hyperplane.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use mdflow_core::bregman::strong_convexity_ratio;
use mdflow_core::objective::{EntropyLinear, Quadratic};
use mdflow_core::solvers::certify::AVERAGED_TOLERANCE;
use mdflow_core::solvers::{
    certify_averaged_flow, certify_bounds, certify_flow_decay, integrate_flow,
    mirror_descent_solve, quasi_newton_solve, superlinear_ratios, variable_metric_solve,
    Certificate, CertificateMode, Family, SolveReport, SolverConfig, Trajectory,
};
use mdflow_core::{math, ConstrainedProblem, MirrorMap, Objective};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CertifyKeys, Experiment, Params, RunConfig};
use crate::csvio::{fmt_real, write_table};
use crate::error::{config_err, Result};
use crate::run::{finish, gibbs, simplex_potential, AuditReport, RunSummary};

/// Steps of the linear-rate runs.
pub const LINEAR_RATE_STEPS: usize = 60;
/// Iterations within which the error ratio must fall below
/// [`SUPERLINEAR_RATIO`] when `Φ = f`.
pub const SUPERLINEAR_WINDOW: usize = 10;
pub const SUPERLINEAR_RATIO: f64 = 0.1;
/// Errors below this are at rounding level and end the ratio sequence.
const RATIO_FLOOR: f64 = 1e-12;
pub const FLOW_DT: f64 = 1e-3;
pub const FLOW_HORIZON: f64 = 5.0;
pub const AVERAGING_HORIZONS: [f64; 3] = [1.0, 2.0, 5.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRow {
    pub theorem: &'static str,
    pub instance: &'static str,
    /// Step size, or the time step for the flow.
    pub eta: f64,
    /// `μ` for the rate bounds, the smallest ratio for the superlinear check,
    /// `NaN` otherwise.
    pub parameter: f64,
    pub worst_slack: f64,
    pub tolerance: f64,
    pub holds: bool,
}

impl CertificateRow {
    fn from_certificate(
        theorem: &'static str,
        instance: &'static str,
        eta: f64,
        parameter: f64,
        c: &Certificate,
    ) -> Self {
        Self {
            theorem,
            instance,
            eta,
            parameter,
            worst_slack: c.worst_slack(),
            tolerance: c.tolerance,
            holds: c.holds,
        }
    }
}

/// `½(u − c)ᵀH(u − c)` with `H = Q diag(λ) Qᵀ`, `λ ∈ [½, 2)`, and `Σcᵢ = 1`
/// so that `c` is the constrained minimizer.
pub fn random_qp(dimension: usize, seed: u64) -> (ConstrainedProblem<Quadratic>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let a = DMatrix::from_fn(dimension, dimension, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dimension, |_, _| {
        rng.random_range(0.5..2.0)
    }));
    let h = &q * lambda * q.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let mut c: Vec<f64> = (0..dimension).map(|_| rng.random_range(0.0..1.0)).collect();
    let shift = (1.0 - c.iter().sum::<f64>()) / dimension as f64;
    c.iter_mut().for_each(|x| *x += shift);
    let f = Quadratic::new(h, c.clone()).expect("symmetric positive definite by construction");
    (ConstrainedProblem::sum_constrained(f, dimension, 1.0), c)
}

fn config(family: Family, eta: f64, steps: usize) -> SolverConfig {
    let mut cfg = SolverConfig::new(family, eta);
    cfg.max_iterations = steps;
    // Fixed-length runs: the bounds are checked at every prefix.
    cfg.rel_tol = 1e-300;
    cfg.store_iterates = true;
    cfg
}

fn samples(report: &SolveReport, star: &[f64]) -> Vec<Vec<f64>> {
    report
        .iterates
        .clone()
        .unwrap_or_default()
        .into_iter()
        .filter(|u| math::norm2(&math::sub(u, star)) > 1e-6)
        .collect()
}

fn flow_rows<O: Objective>(
    rows: &mut Vec<CertificateRow>,
    instance: &'static str,
    problem: &ConstrainedProblem<O>,
    map: &MirrorMap,
    u0: &[f64],
    star: &[f64],
) -> Result<()> {
    let traj: Trajectory = integrate_flow(problem, map, u0, FLOW_HORIZON, FLOW_DT, Some(star))?;
    let pts: Vec<Vec<f64>> = traj
        .points
        .iter()
        .skip(1)
        .step_by(50)
        .map(|p| p.state.clone())
        .filter(|u| math::norm2(&math::sub(u, star)) > 1e-6)
        .collect();
    let mu = strong_convexity_ratio(map, problem, &pts, star)?;
    let decay = certify_flow_decay(&traj, mu)?;
    rows.push(CertificateRow::from_certificate(
        "flow-decay",
        instance,
        FLOW_DT,
        mu,
        &decay,
    ));
    let avg = certify_averaged_flow(
        &traj,
        problem,
        star,
        &AVERAGING_HORIZONS,
        AVERAGED_TOLERANCE,
    )?;
    rows.push(CertificateRow::from_certificate(
        "averaged-flow",
        instance,
        FLOW_DT,
        f64::NAN,
        &avg,
    ));
    Ok(())
}

fn superlinear_row(instance: &'static str, report: &SolveReport) -> Result<CertificateRow> {
    let ratios = superlinear_ratios(report, RATIO_FLOOR)?;
    let best = ratios
        .iter()
        .take(SUPERLINEAR_WINDOW)
        .copied()
        .fold(f64::INFINITY, f64::min);
    // A run that reaches rounding level at once has no ratio left to report.
    let best = if ratios.is_empty() { 0.0 } else { best };
    Ok(CertificateRow {
        theorem: "superlinear",
        instance,
        eta: 1.0,
        parameter: best,
        worst_slack: SUPERLINEAR_RATIO - best,
        tolerance: 0.0,
        holds: best < SUPERLINEAR_RATIO,
    })
}

/// Runs every check of the suite.
pub fn certify_suite(keys: &CertifyKeys) -> Result<Vec<CertificateRow>> {
    let mut rows = Vec::new();
    let n = keys.dimension;
    let u0 = vec![1.0 / n as f64; n];

    // Simplex toy: f(u) = Σ uᵢ log uᵢ + vᵀu, entropy map.
    let v = simplex_potential(n, keys.seed);
    let star = gibbs(&v);
    let toy = ConstrainedProblem::sum_constrained(EntropyLinear { v }, n, 1.0);
    let entropy = MirrorMap::entropy(1.0)?;
    let md = mirror_descent_solve(
        &toy,
        &entropy,
        &config(Family::MirrorDescent, keys.eta, keys.iter_max),
        &u0,
        Some(&star),
    )?;
    let c = certify_bounds(&md, CertificateMode::Ineq2)?;
    rows.push(CertificateRow::from_certificate(
        "ineq2",
        "simplex-toy",
        keys.eta,
        f64::NAN,
        &c,
    ));
    let lr = mirror_descent_solve(
        &toy,
        &entropy,
        &config(
            Family::MirrorDescent,
            keys.linear_rate_eta,
            LINEAR_RATE_STEPS,
        ),
        &u0,
        Some(&star),
    )?;
    let mu = strong_convexity_ratio(&entropy, &toy, &samples(&lr, &star), &star)?;
    let c = certify_bounds(&lr, CertificateMode::LinearRate { mu })?;
    rows.push(CertificateRow::from_certificate(
        "linear-rate",
        "simplex-toy",
        keys.linear_rate_eta,
        mu,
        &c,
    ));
    let sl = mirror_descent_solve(
        &toy,
        &entropy,
        &config(Family::MirrorDescent, 1.0, SUPERLINEAR_WINDOW),
        &u0,
        Some(&star),
    )?;
    rows.push(superlinear_row("simplex-toy", &sl)?);
    flow_rows(&mut rows, "simplex-toy", &toy, &entropy, &u0, &star)?;

    // Random strongly convex quadratic, Euclidean map.
    let (qp, center) = random_qp(n, keys.seed);
    let euclid = MirrorMap::euclidean(n);
    let q0: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let md = mirror_descent_solve(
        &qp,
        &euclid,
        &config(Family::MirrorDescent, keys.eta, keys.iter_max),
        &q0,
        Some(&center),
    )?;
    let c = certify_bounds(&md, CertificateMode::Ineq2)?;
    rows.push(CertificateRow::from_certificate(
        "ineq2",
        "random-qp",
        keys.eta,
        f64::NAN,
        &c,
    ));
    let lr = mirror_descent_solve(
        &qp,
        &euclid,
        &config(
            Family::MirrorDescent,
            keys.linear_rate_eta,
            LINEAR_RATE_STEPS,
        ),
        &q0,
        Some(&center),
    )?;
    let mu = strong_convexity_ratio(&euclid, &qp, &samples(&lr, &center), &center)?;
    let c = certify_bounds(&lr, CertificateMode::LinearRate { mu })?;
    rows.push(CertificateRow::from_certificate(
        "linear-rate",
        "random-qp",
        keys.linear_rate_eta,
        mu,
        &c,
    ));
    // The Euclidean Hessian is constant and f is quadratic: both Lipschitz
    // constants of the metric bounds vanish.
    let vm = variable_metric_solve(
        &qp,
        &euclid,
        &config(Family::VariableMetric, keys.eta, keys.iter_max),
        &q0,
        Some(&center),
    )?;
    let c = certify_bounds(&vm, CertificateMode::Ineq3 { lipschitz: 0.0 })?;
    rows.push(CertificateRow::from_certificate(
        "ineq3",
        "random-qp",
        keys.eta,
        0.0,
        &c,
    ));
    let qn = quasi_newton_solve(
        &qp,
        &config(Family::QuasiNewtonSecant, keys.eta, keys.iter_max),
        &q0,
        Some(&center),
    )?;
    let c = certify_bounds(&qn, CertificateMode::Ineq4 { lipschitz: 0.0 })?;
    rows.push(CertificateRow::from_certificate(
        "ineq4",
        "random-qp",
        keys.eta,
        0.0,
        &c,
    ));
    let phi_f = MirrorMap::quadratic(qp.objective.hessian.clone())?;
    let sl = mirror_descent_solve(
        &qp,
        &phi_f,
        &config(Family::MirrorDescent, 1.0, SUPERLINEAR_WINDOW),
        &q0,
        Some(&center),
    )?;
    rows.push(superlinear_row("random-qp", &sl)?);
    flow_rows(&mut rows, "random-qp", &qp, &euclid, &q0, &center)?;
    Ok(rows)
}

const HEADER: [&str; 7] = [
    "theorem",
    "instance",
    "eta",
    "parameter",
    "worstSlack",
    "tolerance",
    "holds",
];

fn write_rows(path: &Path, rows: &[CertificateRow]) -> Result<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.theorem.to_owned(),
                r.instance.to_owned(),
                fmt_real(r.eta),
                fmt_real(r.parameter),
                fmt_real(r.worst_slack),
                fmt_real(r.tolerance),
                u8::from(r.holds).to_string(),
            ]
        })
        .collect();
    write_table(path, &HEADER, &table)
}

/// Verdicts read back from `certificate.csv`: each row must report that it
/// holds and its worst slack must clear the tolerance.
fn audit_certificate(path: &Path) -> Result<bool> {
    let mut r = csv::Reader::from_path(path)?;
    let mut all = true;
    let mut count = 0;
    for rec in r.records() {
        let rec = rec?;
        let slack: f64 = rec[4].parse().unwrap_or(f64::NAN);
        let tol: f64 = rec[5].parse().unwrap_or(f64::NAN);
        all &= &rec[6] == "1" && slack >= -tol;
        count += 1;
    }
    Ok(all && count > 0)
}

pub fn certify(cfg: &RunConfig) -> Result<RunSummary> {
    let Params::Certify(keys) = cfg.params else {
        return Err(config_err("certify needs a certify-theorems configuration"));
    };
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();
    let rows = certify_suite(&keys)?;
    let wall = start.elapsed().as_secs_f64();
    let path = out.join("certificate.csv");
    write_rows(&path, &rows)?;
    let ok = audit_certificate(&path)?;
    let report = AuditReport {
        audits: BTreeMap::from([("allCertified", ok)]),
        declared: vec!["allCertified"],
        error: None,
    };
    let failing = rows.iter().filter(|r| !r.holds).count();
    let status = if failing == 0 {
        "completed".to_owned()
    } else {
        format!("completed with {failing} failing certificates")
    };
    finish(cfg, &out, status, None, report, wall)
}

/// `mdflow certify`: the `experiment` key may be omitted.
pub fn certify_file(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text, Some(Experiment::CertifyTheorems))?;
    if cfg.experiment != Experiment::CertifyTheorems {
        return Err(config_err(format!(
            "certify expects experiment = certify-theorems, got {}",
            cfg.experiment.name()
        )));
    }
    certify(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_qp_minimizer_is_feasible() {
        let (p, c) = random_qp(5, 42);
        assert!(p.constraint_residual(&c) < 1e-14);
        let g = p.objective.gradient(&c);
        assert!(math::norm_inf(&g) < 1e-14);
        let sym = &p.objective.hessian - p.objective.hessian.transpose();
        assert!(sym.amax() < 1e-15);
        let eig = p.objective.hessian.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|l| (0.5..2.0).contains(l)));
    }

    #[test]
    fn seeds_are_reproducible() {
        assert_eq!(simplex_potential(5, 42), simplex_potential(5, 42));
        assert_ne!(simplex_potential(5, 42), simplex_potential(5, 43));
        assert_eq!(random_qp(4, 7).1, random_qp(4, 7).1);
    }
}
