//! INI-style run configuration.
//!
//! ```ini
//! experiment = porous-medium
//!
//! [grid]
//! Nx = 50
//!
//! [solver]
//! eta = 0.2
//! ```
//!
//! Sections only group keys; a key may appear in the unnamed section or in
//! any of `run`, `grid`, `time`, `solver`, `certify` or the section named
//! after the experiment, but at most once. Keys that the selected experiment
//! does not use are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;
use mdflow_core::cahn_hilliard::Potential;

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    PorousMedium,
    Aggregation,
    CahnHilliard,
    SimplexToy,
    CertifyTheorems,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::PorousMedium => "porous-medium",
            Self::Aggregation => "aggregation",
            Self::CahnHilliard => "cahn-hilliard",
            Self::SimplexToy => "simplex-toy",
            Self::CertifyTheorems => "certify-theorems",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        [
            Self::PorousMedium,
            Self::Aggregation,
            Self::CahnHilliard,
            Self::SimplexToy,
            Self::CertifyTheorems,
        ]
        .into_iter()
        .find(|e| e.name() == s)
        .ok_or_else(|| config_err(format!("unknown experiment `{s}`")))
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Self::PorousMedium => &[
                "xLeft",
                "xRight",
                "Nx",
                "tau",
                "Nt",
                "snapshotEvery",
                "eta",
                "epsilon",
                "tol",
                "iterMax",
                "family",
                "output",
                "m",
                "t0",
                "C",
            ],
            Self::Aggregation => &[
                "xLeft",
                "xRight",
                "Nx",
                "tau",
                "Nt",
                "snapshotEvery",
                "eta",
                "epsilon",
                "tol",
                "iterMax",
                "family",
                "output",
                "sigma",
            ],
            Self::CahnHilliard => &[
                "xLeft",
                "xRight",
                "Nx",
                "tau",
                "Nt",
                "snapshotEvery",
                "eta",
                "epsilon",
                "epsilon1",
                "epsilon2",
                "tol",
                "iterMax",
                "family",
                "output",
                "alpha",
                "potential",
            ],
            Self::SimplexToy => &[
                "eta",
                "epsilon",
                "tol",
                "iterMax",
                "family",
                "output",
                "dimension",
                "seed",
            ],
            Self::CertifyTheorems => &[
                "eta",
                "iterMax",
                "output",
                "seed",
                "linearRateEta",
                "dimension",
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKey {
    Mirror,
    VariableMetric,
    QuasiNewton,
}

impl FamilyKey {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mirror => "mirror",
            Self::VariableMetric => "variable-metric",
            Self::QuasiNewton => "quasi-newton",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridKeys {
    pub x_left: f64,
    pub x_right: f64,
    pub nx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeKeys {
    pub tau: f64,
    pub nt: usize,
    /// 0 writes only the first and last snapshots.
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverKeys {
    pub eta: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub tol: f64,
    pub iter_max: usize,
    pub family: FamilyKey,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    PorousMedium { m: f64, t0: f64, c: f64 },
    Aggregation { sigma: f64 },
    CahnHilliard { alpha: f64, potential: Potential },
    SimplexToy { dimension: usize, seed: u64 },
    Certify(CertifyKeys),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyKeys {
    pub seed: u64,
    /// Length of the mirror-descent runs behind the averaged bounds.
    pub iter_max: usize,
    /// Step of the averaged-bound runs.
    pub eta: f64,
    /// Step of the linear-rate runs.
    pub linear_rate_eta: f64,
    pub dimension: usize,
}

impl Default for CertifyKeys {
    fn default() -> Self {
        Self {
            seed: 42,
            iter_max: 200,
            eta: 0.05,
            linear_rate_eta: 0.2,
            dimension: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub grid: GridKeys,
    pub time: TimeKeys,
    pub solver: SolverKeys,
    pub params: Params,
    pub output: PathBuf,
    /// Every resolved key with its value, for the summary.
    pub echo: BTreeMap<String, String>,
}

const SECTIONS: [&str; 6] = ["run", "grid", "time", "solver", "certify", ""];

struct Raw {
    values: BTreeMap<String, String>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| config_err(format!("parse error: {e}")))?;
        let experiment_sections = [
            "porous-medium",
            "aggregation",
            "cahn-hilliard",
            "simplex-toy",
            "certify-theorems",
        ];
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            if let Some(name) = section {
                if !SECTIONS.contains(&name) && !experiment_sections.contains(&name) {
                    return Err(config_err(format!("unknown section [{name}]")));
                }
            }
            for (k, v) in props.iter() {
                if values.insert(k.to_owned(), v.trim().to_owned()).is_some() {
                    return Err(config_err(format!("key `{k}` given more than once")));
                }
            }
        }
        Ok(Self { values })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| config_err(format!("`{key}` = `{v}` is not a valid number")))
}

struct Resolver {
    raw: Raw,
    echo: BTreeMap<String, String>,
}

impl Resolver {
    fn real(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = match self.raw.take(key) {
            Some(s) => parse_num::<f64>(key, &s)?,
            None => default,
        };
        if !v.is_finite() {
            return Err(config_err(format!("`{key}` must be finite")));
        }
        self.echo.insert(key.to_owned(), v.to_string());
        Ok(v)
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.real(key, default)?;
        if v <= 0.0 {
            return Err(config_err(format!("`{key}` must be positive, got {v}")));
        }
        Ok(v)
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = match self.raw.take(key) {
            Some(s) => parse_num::<usize>(key, &s)?,
            None => default,
        };
        if v < min {
            return Err(config_err(format!(
                "`{key}` must be at least {min}, got {v}"
            )));
        }
        self.echo.insert(key.to_owned(), v.to_string());
        Ok(v)
    }

    fn word(&mut self, key: &str, default: &str) -> String {
        let v = self.raw.take(key).unwrap_or_else(|| default.to_owned());
        self.echo.insert(key.to_owned(), v.clone());
        v
    }
}

struct Defaults {
    grid: GridKeys,
    time: TimeKeys,
    eta: f64,
    epsilon: f64,
    tol: f64,
    iter_max: usize,
}

fn defaults(e: Experiment) -> Defaults {
    let (grid, time, eta, epsilon, iter_max) = match e {
        Experiment::PorousMedium => (
            GridKeys {
                x_left: -1.0,
                x_right: 1.0,
                nx: 50,
            },
            TimeKeys {
                tau: 2e-4,
                nt: 100,
                snapshot_every: 25,
            },
            0.2,
            0.005,
            5000,
        ),
        Experiment::Aggregation => (
            GridKeys {
                x_left: -2.0,
                x_right: 2.0,
                nx: 50,
            },
            TimeKeys {
                tau: 0.016,
                nt: 188,
                snapshot_every: 47,
            },
            0.8,
            0.1,
            20000,
        ),
        Experiment::CahnHilliard => (
            GridKeys {
                x_left: 0.0,
                x_right: 1.0,
                nx: 50,
            },
            TimeKeys {
                tau: 1e-3,
                nt: 200,
                snapshot_every: 50,
            },
            0.02,
            0.5,
            100_000,
        ),
        Experiment::SimplexToy => (
            GridKeys {
                x_left: 0.0,
                x_right: 1.0,
                nx: 1,
            },
            TimeKeys {
                tau: 1.0,
                nt: 0,
                snapshot_every: 0,
            },
            0.5,
            1.0,
            200,
        ),
        Experiment::CertifyTheorems => (
            GridKeys {
                x_left: 0.0,
                x_right: 1.0,
                nx: 1,
            },
            TimeKeys {
                tau: 1.0,
                nt: 0,
                snapshot_every: 0,
            },
            CertifyKeys::default().eta,
            1.0,
            CertifyKeys::default().iter_max,
        ),
    };
    Defaults {
        grid,
        time,
        eta,
        epsilon,
        tol: if e == Experiment::SimplexToy {
            1e-12
        } else {
            1e-8
        },
        iter_max,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, None)
    }

    /// `fallback` names the experiment when the text has no `experiment` key.
    pub fn parse(text: &str, fallback: Option<Experiment>) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let experiment = match raw.take("experiment") {
            Some(s) => Experiment::parse(&s)?,
            None => fallback.ok_or_else(|| config_err("missing key `experiment`"))?,
        };
        let allowed = experiment.keys();
        if let Some(k) = raw.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(config_err(format!(
                "unknown key `{k}` for experiment {}",
                experiment.name()
            )));
        }
        let d = defaults(experiment);
        let mut r = Resolver {
            raw,
            echo: BTreeMap::new(),
        };
        r.echo.insert("experiment".into(), experiment.name().into());
        let pde = matches!(
            experiment,
            Experiment::PorousMedium | Experiment::Aggregation | Experiment::CahnHilliard
        );

        let grid = if pde {
            let x_left = r.real("xLeft", d.grid.x_left)?;
            let x_right = r.real("xRight", d.grid.x_right)?;
            if x_right <= x_left {
                return Err(config_err("`xRight` must exceed `xLeft`"));
            }
            GridKeys {
                x_left,
                x_right,
                nx: r.count("Nx", d.grid.nx, 2)?,
            }
        } else {
            d.grid
        };
        let time = if pde {
            TimeKeys {
                tau: r.positive("tau", d.time.tau)?,
                nt: r.count("Nt", d.time.nt, 1)?,
                snapshot_every: r.count("snapshotEvery", d.time.snapshot_every, 0)?,
            }
        } else {
            d.time
        };

        let eta = r.positive("eta", d.eta)?;
        let (epsilon1, epsilon2, tol, family) = if experiment == Experiment::CertifyTheorems {
            (1.0, 1.0, d.tol, FamilyKey::Mirror)
        } else {
            let eps = r.positive("epsilon", d.epsilon)?;
            let (e1, e2) = if experiment == Experiment::CahnHilliard {
                (r.positive("epsilon1", eps)?, r.positive("epsilon2", eps)?)
            } else {
                (eps, eps)
            };
            let tol = r.positive("tol", d.tol)?;
            let family = match r.word("family", "mirror").as_str() {
                "mirror" => FamilyKey::Mirror,
                "variable-metric" => FamilyKey::VariableMetric,
                "quasi-newton" if !pde => FamilyKey::QuasiNewton,
                other => {
                    return Err(config_err(format!(
                        "family `{other}` is not available for {}",
                        experiment.name()
                    )))
                }
            };
            (e1, e2, tol, family)
        };
        let iter_max = r.count("iterMax", d.iter_max, 1)?;
        let solver = SolverKeys {
            eta,
            epsilon1,
            epsilon2,
            tol,
            iter_max,
            family,
        };

        let params = match experiment {
            Experiment::PorousMedium => {
                let m = r.real("m", 2.0)?;
                if m <= 1.0 {
                    return Err(config_err("`m` must exceed 1"));
                }
                Params::PorousMedium {
                    m,
                    t0: r.positive("t0", 1e-3)?,
                    c: r.positive("C", 0.8)?,
                }
            }
            Experiment::Aggregation => Params::Aggregation {
                sigma: r.positive("sigma", 0.25)?,
            },
            Experiment::CahnHilliard => {
                let alpha = r.positive("alpha", 0.1)?;
                let potential = match r.word("potential", "quadratic-well").as_str() {
                    "quadratic-well" => Potential::QuadraticWell,
                    "ginzburg-landau" => Potential::GinzburgLandau,
                    other => return Err(config_err(format!("unknown potential `{other}`"))),
                };
                Params::CahnHilliard { alpha, potential }
            }
            Experiment::SimplexToy => Params::SimplexToy {
                dimension: r.count("dimension", 5, 2)?,
                seed: r.count("seed", 42, 0)? as u64,
            },
            Experiment::CertifyTheorems => {
                let def = CertifyKeys::default();
                Params::Certify(CertifyKeys {
                    seed: r.count("seed", def.seed as usize, 0)? as u64,
                    iter_max,
                    eta,
                    linear_rate_eta: r.positive("linearRateEta", def.linear_rate_eta)?,
                    dimension: r.count("dimension", def.dimension, 2)?,
                })
            }
        };
        let output = PathBuf::from(r.word("output", &format!("mdflow-out/{}", experiment.name())));
        debug_assert!(r.raw.values.is_empty());
        Ok(Self {
            experiment,
            grid,
            time,
            solver,
            params,
            output,
            echo: r.echo,
        })
    }

    /// `MDFLOW_OUT` when set, otherwise the configured directory.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os("MDFLOW_OUT") {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_presets() {
        let c = RunConfig::parse("experiment = porous-medium", None).unwrap();
        assert_eq!(c.grid.nx, 50);
        assert_eq!(c.time.tau, 2e-4);
        assert_eq!(c.solver.eta, 0.2);
        assert_eq!(
            c.params,
            Params::PorousMedium {
                m: 2.0,
                t0: 1e-3,
                c: 0.8
            }
        );
        let c =
            RunConfig::parse("experiment = cahn-hilliard\n[solver]\nepsilon1 = 0.3", None).unwrap();
        assert_eq!((c.solver.epsilon1, c.solver.epsilon2), (0.3, 0.5));
    }

    #[test]
    fn sections_group_keys() {
        let text = "[run]\nexperiment = aggregation\n[grid]\nNx = 20\n[aggregation]\nsigma = 0.3\n[solver]\nfamily = variable-metric\n";
        let c = RunConfig::parse(text, None).unwrap();
        assert_eq!(c.grid.nx, 20);
        assert_eq!(c.params, Params::Aggregation { sigma: 0.3 });
        assert_eq!(c.solver.family, FamilyKey::VariableMetric);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "experiment = porous-medium\nsigma = 0.2",
            "experiment = porous-medium\ntau = -1",
            "experiment = porous-medium\n[weird]\ntau = 1",
            "experiment = porous-medium\ntau = 1\n[time]\ntau = 2",
            "experiment = nothing",
            "tau = 1",
            "experiment = cahn-hilliard\nfamily = quasi-newton",
            "experiment = aggregation\nNx = many",
            "experiment = porous-medium\nm = 1",
        ] {
            let err = RunConfig::parse(text, None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }
}
