//! Declarative run configuration: a TOML file with nested sections, merged
//! with command-line overrides, resolving to exactly one problem
//! specification. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bench::{self, BuildDirection, LbeamVariant, Method};
use crate::field::Thresholds;
use crate::problems::ProblemSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    /// One of `cantilever2d`, `cantilever3d`, `lbeam`, `inverter`.
    benchmark: Option<String>,
    /// `reference`, `size` or `am`.
    method: Option<String>,
    volfrac: Option<f64>,
    r_nozzle: Option<f64>,
    scale: Option<f64>,
    /// 3D cantilever only: `fixed` or `free`.
    direction: Option<String>,
    /// L-beam stress variant: stress limit (use the `stress` method).
    sigma_star: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    beta_start: Option<f64>,
    beta_factor: Option<f64>,
    beta_cap: Option<f64>,
    simp_start: Option<f64>,
    simp_step: Option<f64>,
    simp_cap: Option<f64>,
    update_every: Option<usize>,
    max_iters: Option<usize>,
    move_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ThresholdSection {
    ero: f64,
    inter: f64,
    dil: f64,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    png: Option<bool>,
    csv: Option<bool>,
    fields: Option<bool>,
    printability: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    problem: ProblemSection,
    schedule: Option<ScheduleSection>,
    thresholds: Option<ThresholdSection>,
    output: Option<OutputSection>,
}

/// Command-line overrides applied on top of a config file (all optional).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub benchmark: Option<String>,
    pub method: Option<String>,
    pub volfrac: Option<f64>,
    pub r_nozzle: Option<f64>,
    pub scale: Option<f64>,
    pub direction: Option<String>,
    pub max_iters: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Fully resolved run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub output_dir: PathBuf,
    pub toggles: crate::export::ExportToggles,
    pub benchmark: String,
    pub method: Method,
}

fn parse_method(name: &str) -> Result<Method> {
    match name {
        "reference" | "ref" => Ok(Method::Reference),
        "size" | "size_constrained" | "size-constrained" => Ok(Method::SizeConstrained),
        "am" | "am_constrained" | "am-constrained" => Ok(Method::AmConstrained),
        other => Err(Error::Config(format!(
            "problem.method: unknown method '{other}' (expected reference | size | am)"
        ))),
    }
}

fn parse_direction(name: &str) -> Result<BuildDirection> {
    match name {
        "fixed" | "fixed_axis" | "fixed-axis" => Ok(BuildDirection::FixedAxis),
        "free" => Ok(BuildDirection::Free),
        other => Err(Error::Config(format!(
            "problem.direction: unknown direction '{other}' (expected fixed | free)"
        ))),
    }
}

/// Parse a config file (when given) and merge command-line overrides into the
/// final run configuration.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let file: ConfigFile = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };

    let benchmark = overrides
        .benchmark
        .clone()
        .or(file.problem.benchmark.clone())
        .ok_or_else(|| Error::Config("problem.benchmark: no problem selected".into()))?;
    let method_name = overrides
        .method
        .clone()
        .or(file.problem.method.clone())
        .unwrap_or_else(|| "reference".to_string());
    let method = parse_method(&method_name)?;
    let volfrac = overrides.volfrac.or(file.problem.volfrac);
    let r_nozzle = overrides.r_nozzle.or(file.problem.r_nozzle);
    let scale = overrides.scale.or(file.problem.scale).unwrap_or(1.0);
    let direction = match overrides.direction.clone().or(file.problem.direction.clone()) {
        Some(d) => parse_direction(&d)?,
        None => BuildDirection::FixedAxis,
    };

    let mut spec = match benchmark.as_str() {
        "cantilever2d" => bench::cantilever2d_scaled(
            volfrac.unwrap_or(0.4),
            method,
            r_nozzle.unwrap_or(2.5),
            scale,
        )?,
        "cantilever3d" => {
            bench::cantilever3d(volfrac.unwrap_or(0.15), method, direction, scale)?
        }
        "lbeam" => {
            let variant = match (method, file.problem.sigma_star) {
                (Method::Reference, _) => LbeamVariant::Reference,
                (Method::AmConstrained, None) => LbeamVariant::AmConstrained,
                (Method::AmConstrained, Some(s)) => LbeamVariant::AmStress { sigma_star: s },
                (Method::SizeConstrained, _) => {
                    return Err(Error::Config(
                        "problem.method: the L-beam benchmark supports reference | am".into(),
                    ))
                }
            };
            bench::lbeam(volfrac.unwrap_or(0.4), variant)?
        }
        "inverter" => bench::force_inverter(volfrac.unwrap_or(0.3), method)?,
        other => {
            return Err(Error::Config(format!(
                "problem.benchmark: unknown benchmark '{other}' (expected one of {})",
                bench::BENCHMARK_NAMES.join(" | ")
            )))
        }
    };

    if let Some(s) = &file.schedule {
        let sched = &mut spec.schedule;
        if let Some(v) = s.beta_start {
            sched.beta_start = v;
        }
        if let Some(v) = s.beta_factor {
            sched.beta_factor = v;
        }
        if let Some(v) = s.beta_cap {
            sched.beta_cap = v;
        }
        if let Some(v) = s.simp_start {
            sched.simp_start = v;
        }
        if let Some(v) = s.simp_step {
            sched.simp_step = v;
        }
        if let Some(v) = s.simp_cap {
            sched.simp_cap = v;
        }
        if let Some(v) = s.update_every {
            sched.update_every = v;
        }
        if let Some(v) = s.max_iters {
            sched.max_iters = v;
        }
        if let Some(v) = s.move_tol {
            sched.move_tol = v;
        }
    }
    if let Some(m) = overrides.max_iters {
        spec.schedule.max_iters = m;
    }
    if let Some(t) = &file.thresholds {
        spec.lengthscale.thresholds = Thresholds::new(t.ero, t.inter, t.dil)
            .map_err(|e| Error::Config(format!("thresholds: {e}")))?;
    }
    spec.validate()?;

    let out = file.output.unwrap_or_default();
    let output_dir = overrides
        .output_dir
        .clone()
        .or(out.dir)
        .unwrap_or_else(|| PathBuf::from("out"));
    let toggles = crate::export::ExportToggles {
        png: out.png.unwrap_or(true),
        csv: out.csv.unwrap_or(true),
        fields: out.fields.unwrap_or(true),
        printability: out.printability.unwrap_or(true),
    };
    Ok(RunConfig { spec, output_dir, toggles, benchmark, method })
}
