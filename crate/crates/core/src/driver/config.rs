//! Run configuration and its flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Nuclei are given as repeated
//! `nucleus = x, y, z, Z` lines; vectors are comma separated.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapt::IndicatorMode;
use crate::error::{Error, Result};
use crate::flow::{FlowOptions, Metric};
use crate::ksmodel::{ExternalModel, HartreeBc, ModelOptions, Molecule, Nucleus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HartreeMode {
    None,
    Zero,
    Multipole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Nucleus-centred Gaussians assigned round-robin.
    Gaussian,
    /// Seeded random nodal values under a decaying envelope.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub nuclei: Vec<Nucleus>,
    pub occupations: Vec<f64>,
    pub domain_lo: [f64; 3],
    pub domain_hi: [f64; 3],
    /// Cells per axis of the initial Kuhn mesh.
    pub cells: usize,
    /// Rounds of bisection around each nucleus before the first level.
    pub prerefine: usize,
    pub maxrefine: usize,
    pub theta: f64,
    pub epsilon: f64,
    /// Initial Δt of every level; `None` means the squared smallest element size.
    #[serde(default)]
    pub dt_init: Option<f64>,
    pub dt_max: f64,
    pub max_halvings: usize,
    pub max_steps: usize,
    pub metric: Metric,
    pub hartree: HartreeMode,
    pub multipole_order: usize,
    pub xc: bool,
    pub external: ExternalModel,
    pub indicator: IndicatorMode,
    pub quad_degree: usize,
    pub quad_degree_singular: usize,
    pub singular_radius: f64,
    pub r_min: f64,
    pub poisson_tol: f64,
    pub mass_tol: f64,
    pub init: InitialGuess,
    pub seed: u64,
    pub export_density: bool,
    pub export_indicator: bool,
    pub deterministic: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            nuclei: Vec::new(),
            occupations: vec![2.0],
            domain_lo: [-10.0; 3],
            domain_hi: [10.0; 3],
            cells: 8,
            prerefine: 0,
            maxrefine: 6,
            theta: 0.5,
            epsilon: 1e-6,
            dt_init: None,
            dt_max: 0.1,
            max_halvings: 40,
            max_steps: 200_000,
            metric: Metric::L2,
            hartree: HartreeMode::Zero,
            multipole_order: 0,
            xc: true,
            external: ExternalModel::Coulomb,
            indicator: IndicatorMode::Literal,
            quad_degree: 2,
            quad_degree_singular: 4,
            singular_radius: 2.0,
            r_min: 1e-8,
            poisson_tol: 1e-10,
            mass_tol: 1e-12,
            init: InitialGuess::Gaussian,
            seed: 0,
            export_density: false,
            export_indicator: false,
            deterministic: false,
            output_dir: None,
        }
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("he", include_str!("../../configs/he.conf")),
    ("h2", include_str!("../../configs/h2.conf")),
    ("h2_paper", include_str!("../../configs/h2_paper.conf")),
    ("lih", include_str!("../../configs/lih.conf")),
    ("harmonic", include_str!("../../configs/harmonic.conf")),
];

/// Names of the configurations compiled into the binary.
pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_value(key, v)).collect()
}

fn parse_vec3(key: &str, value: &str) -> Result<[f64; 3]> {
    match parse_list(key, value)?.as_slice() {
        [s] => Ok([*s; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(Error::Config(format!("'{key}' needs one or three numbers"))),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!("invalid boolean '{other}' for '{key}'"))),
    }
}

impl RunConfig {
    /// A compiled-in configuration by name.
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| RunConfig::parse(text).expect("built-in configurations are valid"))
    }

    /// Reads a configuration file, falling back to a built-in of the same name.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => RunConfig::parse(&text),
            Err(e) => path
                .to_str()
                .and_then(RunConfig::builtin)
                .ok_or_else(|| Error::io(path, e)),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut orbitals: Option<usize> = None;
        let mut occupations: Option<Vec<f64>> = None;
        let mut omega: Option<f64> = None;
        let mut external = "coulomb".to_string();
        let mut metric = "l2".to_string();
        let mut metric_shift = 1.0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "name" => c.name = value.to_string(),
                "nucleus" => match parse_list(key, value)?.as_slice() {
                    [x, y, z, charge] => c.nuclei.push(Nucleus::new([*x, *y, *z], *charge)),
                    _ => return Err(Error::Config(format!("line {}: nucleus needs x, y, z, Z", lineno + 1))),
                },
                "orbitals" => orbitals = Some(parse_value(key, value)?),
                "occupations" => occupations = Some(parse_list(key, value)?),
                "domain_lo" => c.domain_lo = parse_vec3(key, value)?,
                "domain_hi" => c.domain_hi = parse_vec3(key, value)?,
                "cells" => c.cells = parse_value(key, value)?,
                "prerefine" => c.prerefine = parse_value(key, value)?,
                "maxrefine" => c.maxrefine = parse_value(key, value)?,
                "theta" => c.theta = parse_value(key, value)?,
                "epsilon" => c.epsilon = parse_value(key, value)?,
                "dt_init" => c.dt_init = Some(parse_value(key, value)?),
                "dt_max" => c.dt_max = parse_value(key, value)?,
                "max_halvings" => c.max_halvings = parse_value(key, value)?,
                "max_steps" => c.max_steps = parse_value(key, value)?,
                "metric" => metric = value.to_string(),
                "metric_shift" => metric_shift = parse_value(key, value)?,
                "hartree" => {
                    c.hartree = match value {
                        "none" => HartreeMode::None,
                        "zero" => HartreeMode::Zero,
                        "multipole" => HartreeMode::Multipole,
                        other => return Err(Error::Config(format!("unknown hartree mode '{other}'"))),
                    }
                }
                "multipole_order" => c.multipole_order = parse_value(key, value)?,
                "xc" => c.xc = parse_bool(key, value)?,
                "external" => external = value.to_string(),
                "omega" => omega = Some(parse_value(key, value)?),
                "indicator" => c.indicator = value.parse()?,
                "quad_degree" => c.quad_degree = parse_value(key, value)?,
                "quad_degree_singular" => c.quad_degree_singular = parse_value(key, value)?,
                "singular_radius" => c.singular_radius = parse_value(key, value)?,
                "r_min" => c.r_min = parse_value(key, value)?,
                "poisson_tol" => c.poisson_tol = parse_value(key, value)?,
                "mass_tol" => c.mass_tol = parse_value(key, value)?,
                "init" => {
                    c.init = match value {
                        "gaussian" => InitialGuess::Gaussian,
                        "random" => InitialGuess::Random,
                        other => return Err(Error::Config(format!("unknown initial guess '{other}'"))),
                    }
                }
                "seed" => c.seed = parse_value(key, value)?,
                "export_density" => c.export_density = parse_bool(key, value)?,
                "export_indicator" => c.export_indicator = parse_bool(key, value)?,
                "deterministic" => c.deterministic = parse_bool(key, value)?,
                "output_dir" => c.output_dir = Some(PathBuf::from(value)),
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        c.occupations = match (orbitals, occupations) {
            (_, Some(f)) if orbitals.map_or(false, |n| n != f.len()) => {
                return Err(Error::Config(format!(
                    "{} occupations given for {} orbitals",
                    f.len(),
                    orbitals.unwrap_or(0)
                )))
            }
            (_, Some(f)) => f,
            (Some(n), None) => vec![2.0; n],
            (None, None) => vec![2.0],
        };
        c.external = match external.as_str() {
            "coulomb" => ExternalModel::Coulomb,
            "harmonic" => ExternalModel::Harmonic {
                omega: omega.unwrap_or(1.0),
            },
            other => return Err(Error::Config(format!("unknown external potential '{other}'"))),
        };
        c.metric = match metric.as_str() {
            "l2" => Metric::L2,
            "h1" => Metric::H1 { shift: metric_shift },
            other => return Err(Error::Config(format!("unknown metric '{other}' (expected l2 or h1)"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon", self.epsilon),
            ("dt_max", self.dt_max),
            ("dt_init", self.dt_init.unwrap_or(1.0)),
            ("r_min", self.r_min),
            ("poisson_tol", self.poisson_tol),
            ("mass_tol", self.mass_tol),
            ("singular_radius", self.singular_radius),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("'{k}' must be positive, got {v}")));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.cells == 0 {
            return Err(Error::Config("cells must be at least 1".into()));
        }
        if self.multipole_order > 2 {
            return Err(Error::Config("multipole_order must be 0, 1 or 2".into()));
        }
        if self.nuclei.is_empty() && self.external == ExternalModel::Coulomb {
            return Err(Error::Config("a Coulomb model needs at least one nucleus".into()));
        }
        let molecule = self.molecule()?;
        let (lo, hi) = (self.domain_lo.into(), self.domain_hi.into());
        if !molecule.inside(&lo, &hi) {
            return Err(Error::Config("every nucleus must lie strictly inside the domain".into()));
        }
        Ok(())
    }

    pub fn molecule(&self) -> Result<Molecule> {
        Molecule::new(self.nuclei.clone(), self.occupations.clone())
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            external: self.external,
            hartree: match self.hartree {
                HartreeMode::None => None,
                HartreeMode::Zero => Some(HartreeBc::Zero),
                HartreeMode::Multipole => Some(HartreeBc::Multipole {
                    order: self.multipole_order,
                }),
            },
            xc: self.xc,
            quad_degree: self.quad_degree,
            quad_degree_singular: self.quad_degree_singular,
            singular_radius: self.singular_radius,
            r_min: self.r_min,
            poisson_tol: self.poisson_tol,
            mass_tol: self.mass_tol,
        }
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            epsilon: self.epsilon,
            dt_max: self.dt_max,
            max_halvings: self.max_halvings,
            max_steps: self.max_steps,
            metric: self.metric,
            ..FlowOptions::default()
        }
    }
}
