//! Experiment execution: runs the solver selected by a [`RunConfig`], writes
//! the CSV artifacts, then audits them by reading the files back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mdflow_core::cahn_hilliard::{self as ch, CHConfig, CHEnergy};
use mdflow_core::objective::EntropyLinear;
use mdflow_core::solvers::{self, Family, SolverConfig, Termination};
use mdflow_core::wasserstein::{
    self as w, EnergyFunctional, InnerConfig, Schedule, Scheme, DISSIPATION_TOLERANCE,
};
use mdflow_core::{math, ConstrainedProblem, Field, Grid1D, MirrorMap, Objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Experiment, FamilyKey, Params, RunConfig};
use crate::csvio::{fmt_real, write_field, write_table, Table};
use crate::error::{CliError, Result};

/// Mass drift allowed by the audits: relative for densities, absolute for
/// the phase field.
pub const MASS_TOLERANCE: f64 = 1e-10;
/// Linear-constraint residual allowed by the simplex audit.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub l1: f64,
    pub linf: f64,
    pub reference: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub experiment: &'static str,
    pub config: BTreeMap<String, String>,
    pub termination: String,
    pub final_time: Option<f64>,
    pub error: Option<Metrics>,
    pub audits: BTreeMap<&'static str, bool>,
    /// Audits that decide the exit status; the others are findings only.
    pub declared_audits: Vec<&'static str>,
    pub passed: bool,
    pub wall_clock_seconds: f64,
    pub output_dir: String,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Loads, runs and audits the experiment in `path`.
pub fn run_file(path: &Path) -> Result<RunSummary> {
    let cfg = RunConfig::load(path)?;
    run(&cfg)
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    if cfg.experiment == Experiment::CertifyTheorems {
        return crate::certify::certify(cfg);
    }
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();
    let (termination, final_time) = match cfg.experiment {
        Experiment::PorousMedium | Experiment::Aggregation => run_wasserstein(cfg, &out)?,
        Experiment::CahnHilliard => run_cahn_hilliard(cfg, &out)?,
        Experiment::SimplexToy => run_simplex(cfg, &out)?,
        Experiment::CertifyTheorems => unreachable!(),
    };
    let wall = start.elapsed().as_secs_f64();
    let report = audit(cfg, &out)?;
    finish(cfg, &out, termination, final_time, report, wall)
}

pub(crate) fn finish(
    cfg: &RunConfig,
    out: &Path,
    termination: String,
    final_time: Option<f64>,
    report: AuditReport,
    wall: f64,
) -> Result<RunSummary> {
    let passed = report
        .declared
        .iter()
        .all(|name| report.audits.get(name).copied().unwrap_or(false));
    let summary = RunSummary {
        experiment: cfg.experiment.name(),
        config: cfg.echo.clone(),
        termination,
        final_time,
        error: report.error,
        audits: report.audits,
        declared_audits: report.declared,
        passed,
        wall_clock_seconds: wall,
        output_dir: out.display().to_string(),
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

fn snapshot_path(out: &Path, n: usize) -> PathBuf {
    out.join(format!("snapshot_{n:06}.csv"))
}

fn termination(stalls: usize) -> String {
    if stalls == 0 {
        "completed".into()
    } else {
        format!("completed with {stalls} flagged outer steps")
    }
}

fn grid_of(cfg: &RunConfig) -> Result<Grid1D> {
    Ok(Grid1D::new(cfg.grid.x_left, cfg.grid.x_right, cfg.grid.nx)?)
}

fn schedule_of(cfg: &RunConfig) -> Schedule {
    Schedule {
        tau: cfg.time.tau,
        steps: cfg.time.nt,
        snapshot_every: cfg.time.snapshot_every,
    }
}

fn scheme_of(family: FamilyKey) -> Scheme {
    match family {
        FamilyKey::VariableMetric => Scheme::VariableMetric,
        _ => Scheme::Mirror,
    }
}

fn run_wasserstein(cfg: &RunConfig, out: &Path) -> Result<(String, Option<f64>)> {
    let grid = grid_of(cfg)?;
    let (energy, rho0) = match cfg.params {
        Params::PorousMedium { m, t0, c } => (
            EnergyFunctional::porous_medium(grid, m)?,
            w::porous_initial(grid, m, t0, c),
        ),
        Params::Aggregation { sigma } => (
            EnergyFunctional::aggregation(grid),
            w::aggregation_initial(grid, sigma),
        ),
        _ => unreachable!(),
    };
    let s = &cfg.solver;
    let mut inner = InnerConfig::new(s.epsilon1, s.eta, s.tol, s.iter_max);
    inner.scheme = scheme_of(s.family);
    let run = w::evolve(rho0, &energy, &inner, &schedule_of(cfg))?;
    for snap in &run.snapshots {
        write_field(&snapshot_path(out, snap.n), "rho", &snap.density)?;
    }
    let rows: Vec<Vec<String>> = run
        .summaries
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_real(r.t),
                fmt_real(r.mass),
                fmt_real(r.energy),
                r.inner_iterations.to_string(),
                fmt_real(r.min_density),
            ]
        })
        .collect();
    write_table(
        &out.join("summary.csv"),
        &[
            "n",
            "t_n",
            "mass",
            "energy",
            "innerIterations",
            "minDensity",
        ],
        &rows,
    )?;
    let stalls = run.summaries.iter().filter(|r| r.stall.is_some()).count();
    Ok((termination(stalls), Some(run.final_state.time())))
}

fn run_cahn_hilliard(cfg: &RunConfig, out: &Path) -> Result<(String, Option<f64>)> {
    let grid = grid_of(cfg)?;
    let Params::CahnHilliard { alpha, potential } = cfg.params else {
        unreachable!()
    };
    let energy = CHEnergy::new(grid, alpha, potential)?;
    let s = &cfg.solver;
    let mut inner = CHConfig::new(s.epsilon1, s.eta, s.tol, s.iter_max);
    inner.eps2 = s.epsilon2;
    inner.scheme = scheme_of(s.family);
    let u0 = Field::from_fn(grid, |x| ch::ch_initial_profile(x, alpha));
    let run = ch::ch_evolve(u0, &energy, &inner, &schedule_of(cfg))?;
    for snap in &run.snapshots {
        write_field(&snapshot_path(out, snap.n), "u", &snap.density)?;
    }
    let rows: Vec<Vec<String>> = run
        .summaries
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_real(r.t),
                fmt_real(r.mass),
                fmt_real(r.energy),
                fmt_real(r.min_u),
                fmt_real(r.max_u),
                r.inner_iterations.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("summary.csv"),
        &[
            "n",
            "t_n",
            "mass",
            "energy",
            "minU",
            "maxU",
            "innerIterations",
        ],
        &rows,
    )?;
    let stalls = run.summaries.iter().filter(|r| r.stall.is_some()).count();
    Ok((termination(stalls), Some(run.final_state.time())))
}

/// Potential `v` of the simplex toy `f(u) = Σ uᵢ log uᵢ + vᵀu`, uniform on
/// `[−1, 1)` from `seed`.
pub fn simplex_potential(dimension: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dimension)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Minimizer of the simplex toy: `u* ∝ exp(−v − 1)`.
pub fn gibbs(v: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = v.iter().map(|x| (-x - 1.0).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn run_simplex(cfg: &RunConfig, out: &Path) -> Result<(String, Option<f64>)> {
    let Params::SimplexToy { dimension, seed } = cfg.params else {
        unreachable!()
    };
    let v = simplex_potential(dimension, seed);
    let star = gibbs(&v);
    let problem = ConstrainedProblem::sum_constrained(EntropyLinear { v }, dimension, 1.0);
    let map = MirrorMap::entropy(cfg.solver.epsilon1)?;
    let family = match cfg.solver.family {
        FamilyKey::Mirror => Family::MirrorDescent,
        FamilyKey::VariableMetric => Family::VariableMetric,
        FamilyKey::QuasiNewton => Family::QuasiNewtonSecant,
    };
    let mut sc = SolverConfig::new(family, cfg.solver.eta);
    sc.max_iterations = cfg.solver.iter_max;
    sc.rel_tol = cfg.solver.tol;
    sc.store_iterates = true;
    let u0 = vec![1.0 / dimension as f64; dimension];
    let report = solvers::solve(&problem, &map, &sc, &u0, Some(&star))?;
    let iterates = report.iterates.clone().unwrap_or_default();
    let f_star = problem.objective.value(&star);
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .zip(&iterates)
        .enumerate()
        .map(|(k, (r, u))| {
            vec![
                k.to_string(),
                fmt_real(r.objective),
                fmt_real(r.objective - f_star),
                fmt_real(r.constraint_residual),
                fmt_real(r.bregman_to_reference.unwrap_or(f64::NAN)),
                fmt_real(math::min(u)),
            ]
        })
        .collect();
    write_table(
        &out.join("iterates.csv"),
        &[
            "k",
            "objective",
            "gap",
            "constraintResidual",
            "bregmanToReference",
            "minU",
        ],
        &rows,
    )?;
    let last: Vec<Vec<String>> = report
        .final_iterate
        .iter()
        .zip(&star)
        .enumerate()
        .map(|(i, (u, s))| vec![i.to_string(), fmt_real(*u), fmt_real(*s)])
        .collect();
    write_table(&out.join("solution.csv"), &["i", "u", "reference"], &last)?;
    let name = match report.termination {
        Termination::Converged => "converged",
        Termination::MaxIter => "iteration budget exhausted",
        Termination::DomainViolation => "left the domain",
        Termination::MultiplierFailure => "multiplier solve failed",
        Termination::LineSearchFailure => "line search failed",
        Termination::SingularMetric => "singular metric",
    };
    let status = match &report.failure {
        Some(e) => format!("{name}: {e}"),
        None => name.to_owned(),
    };
    Ok((status, None))
}

/// Audit verdicts recomputed from the files of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub audits: BTreeMap<&'static str, bool>,
    pub declared: Vec<&'static str>,
    pub error: Option<Metrics>,
}

fn artifact_err(path: &Path, reason: &str) -> CliError {
    CliError::Artifact {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn column(table: &Table, path: &Path, name: &str) -> Result<Vec<f64>> {
    table
        .column(name)
        .ok_or_else(|| artifact_err(path, &format!("missing column {name}")))
}

/// Snapshot tables on disk in step order.
fn snapshots(out: &Path) -> Result<Vec<(usize, Table)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(out)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        if let Some(n) = name
            .strip_prefix("snapshot_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            found.push((n, Table::read(&path)?));
        }
    }
    found.sort_by_key(|(n, _)| *n);
    Ok(found)
}

fn energy_dissipated(energy: &[f64], absolute_floor: f64) -> bool {
    energy
        .windows(2)
        .all(|w| w[1] <= w[0] + DISSIPATION_TOLERANCE * (absolute_floor + w[0].abs()))
}

fn profile_error(
    x: &[f64],
    values: &[f64],
    dx: f64,
    exact: impl Fn(f64) -> f64,
    reference: &'static str,
) -> Metrics {
    let diff: Vec<f64> = x
        .iter()
        .zip(values)
        .map(|(x, v)| (v - exact(*x)).abs())
        .collect();
    Metrics {
        l1: dx * diff.iter().sum::<f64>(),
        linf: diff.iter().copied().fold(0.0, f64::max),
        reference,
    }
}

pub fn audit(cfg: &RunConfig, out: &Path) -> Result<AuditReport> {
    let mirror = cfg.solver.family == FamilyKey::Mirror;
    let mut audits = BTreeMap::new();
    let mut declared = Vec::new();
    if cfg.experiment == Experiment::SimplexToy {
        let path = out.join("iterates.csv");
        let t = Table::read(&path)?;
        let residual = column(&t, &path, "constraintResidual")?;
        let min_u = column(&t, &path, "minU")?;
        audits.insert(
            "feasible",
            residual.iter().all(|r| *r <= CONSTRAINT_TOLERANCE),
        );
        audits.insert("positive", min_u.iter().all(|u| *u > 0.0));
        declared.push("feasible");
        if mirror {
            declared.push("positive");
        }
        return Ok(AuditReport {
            audits,
            declared,
            error: None,
        });
    }

    let path = out.join("summary.csv");
    let t = Table::read(&path)?;
    let mass = column(&t, &path, "mass")?;
    let energy = column(&t, &path, "energy")?;
    let times = column(&t, &path, "t_n")?;
    let inner = column(&t, &path, "innerIterations")?;
    let snaps = snapshots(out)?;
    let (_, last) = snaps
        .last()
        .ok_or_else(|| artifact_err(out, "no snapshot written"))?;
    let x = last.rows.iter().map(|r| r[0]).collect::<Vec<_>>();
    let values = last.rows.iter().map(|r| r[1]).collect::<Vec<_>>();
    let dx = (cfg.grid.x_right - cfg.grid.x_left) / cfg.grid.nx as f64;
    let t_final = *times.last().unwrap_or(&0.0);
    let m0 = mass[0];
    let drift = mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    let snapshot_values = || snaps.iter().flat_map(|(_, s)| s.rows.iter().map(|r| r[1]));

    let (error, bound_key, bounded, mass_ok, floor) = match &cfg.params {
        Params::CahnHilliard { alpha, .. } => {
            let min_u = column(&t, &path, "minU")?;
            let max_u = column(&t, &path, "maxU")?;
            let inside = min_u.iter().all(|u| *u > -1.0)
                && max_u.iter().all(|u| *u < 1.0)
                && snapshot_values().all(|u| u > -1.0 && u < 1.0);
            let a = *alpha;
            let e = profile_error(
                &x,
                &values,
                dx,
                |x| ch::ch_steady_state(x, a),
                "steady state",
            );
            (e, "boundsPreserved", inside, drift <= MASS_TOLERANCE, 1.0)
        }
        Params::PorousMedium { m, t0, c } => {
            let min_rho = column(&t, &path, "minDensity")?;
            let positive = min_rho.iter().all(|r| *r > 0.0) && snapshot_values().all(|r| r > 0.0);
            let (m, t0, c) = (*m, *t0, *c);
            let e = profile_error(
                &x,
                &values,
                dx,
                |x| w::barenblatt(x, t_final, m, t0, c, 1.0),
                "Barenblatt profile",
            );
            (
                e,
                "positive",
                positive,
                drift <= MASS_TOLERANCE * m0.abs(),
                0.0,
            )
        }
        Params::Aggregation { .. } => {
            let min_rho = column(&t, &path, "minDensity")?;
            let positive = min_rho.iter().all(|r| *r > 0.0) && snapshot_values().all(|r| r > 0.0);
            let e = profile_error(&x, &values, dx, w::aggregation_equilibrium, "equilibrium");
            (
                e,
                "positive",
                positive,
                drift <= MASS_TOLERANCE * m0.abs(),
                0.0,
            )
        }
        _ => unreachable!(),
    };
    audits.insert("massConserved", mass_ok);
    audits.insert(bound_key, bounded);
    audits.insert("energyDissipated", energy_dissipated(&energy, floor));
    let budget = cfg.solver.iter_max as f64;
    audits.insert("innerConverged", inner.iter().skip(1).all(|k| *k < budget));
    declared.push("massConserved");
    if mirror {
        declared.extend([bound_key, "energyDissipated", "innerConverged"]);
    }
    Ok(AuditReport {
        audits,
        declared,
        error: Some(error),
    })
}
