//! Batch front end: run benchmarks or config-file problems, measure
//! printability of dumped fields, calibrate length-scale relations, and
//! verify gradients.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 acceptance-assertion failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nozzleopt::config::{parse_config, Overrides};
use nozzleopt::export::{export_outputs, load_field};
use nozzleopt::field::Thresholds;
use nozzleopt::lengthscale::calibrate;
use nozzleopt::printability::printability_index;
use nozzleopt::problems::{verify_gradients, Problem};
use nozzleopt::Error;

#[derive(Parser)]
#[command(name = "nozzleopt", version, about = "Topology optimization tailored to a deposition nozzle size")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark by name or a TOML config file.
    Run(RunArgs),
    /// Printability of a dumped field for a given nozzle radius.
    Printability(PrintabilityArgs),
    /// Numerical length-scale calibration for a threshold set.
    Calibrate(CalibrateArgs),
    /// Adjoint-versus-finite-difference gradient verification on a small
    /// instance of the named benchmark.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark name (cantilever2d | cantilever3d | lbeam | inverter) or a
    /// path to a TOML config file.
    problem: String,
    /// Size-control method: reference | size | am.
    #[arg(long)]
    method: Option<String>,
    /// Volume-fraction target.
    #[arg(long)]
    volfrac: Option<f64>,
    /// Nozzle radius in mm.
    #[arg(long)]
    nozzle: Option<f64>,
    /// Mesh/length scale factor in (0, 1].
    #[arg(long)]
    scale: Option<f64>,
    /// 3D build direction: fixed | free.
    #[arg(long)]
    direction: Option<String>,
    /// Iteration cap override.
    #[arg(long)]
    iters: Option<usize>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrintabilityArgs {
    /// Field dump stem or `.f64`/`.meta` path.
    fielddump: PathBuf,
    /// Nozzle radius in mm.
    #[arg(long)]
    nozzle: f64,
    /// Build axis for 3D fields: x | y | z.
    #[arg(long, default_value = "y")]
    axis: String,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Comma-separated thresholds: ero,inter,dil.
    #[arg(long)]
    thresholds: String,
    /// Projection steepness.
    #[arg(long)]
    beta: f64,
    /// Filter radius in elements (>= 6).
    #[arg(long, default_value_t = 10.0)]
    rfil: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Benchmark family: cantilever2d | cantilever3d | lbeam | inverter.
    benchmark: String,
    /// Approximate element count along the long edge of the test instance.
    #[arg(long, default_value_t = 12)]
    elems: usize,
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Shape(_) | Error::Data(_) | Error::Unsupported(_) | Error::Io(_) => {
            ExitCode::from(2)
        }
        Error::Solver(_) | Error::State(_) => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Printability(args) => cmd_printability(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Error> {
    let looks_like_file = args.problem.ends_with(".toml") || args.problem.contains('/');
    let (path, benchmark) = if looks_like_file {
        (Some(PathBuf::from(&args.problem)), None)
    } else {
        (None, Some(args.problem.clone()))
    };
    let overrides = Overrides {
        benchmark,
        method: args.method,
        volfrac: args.volfrac,
        r_nozzle: args.nozzle,
        scale: args.scale,
        direction: args.direction,
        max_iters: args.iters,
        output_dir: args.out,
    };
    let cfg = parse_config(path.as_deref(), &overrides)?;
    let spec = cfg.spec.clone();
    println!(
        "running {} ({:?}, V = {}, {} elements, {} iterations max)",
        cfg.benchmark,
        cfg.method,
        spec.volume_fraction,
        spec.mesh.grid.n_elems(),
        spec.schedule.max_iters
    );
    let problem = Problem::new(spec.clone())?;
    let outcome = problem.run()?;
    let aborted = outcome.aborted.is_some();
    if let Some(err) = &outcome.aborted {
        eprintln!(
            "run aborted at iteration {} ({err}); exporting partial results",
            outcome.iterations
        );
    } else {
        let last = outcome.history.records.last();
        println!(
            "finished after {} iterations (objective {:.6})",
            outcome.iterations,
            last.map(|r| r.objective).unwrap_or(f64::NAN)
        );
    }
    let report = printability_index(
        outcome.manufactured(&spec),
        spec.lengthscale.r_nozzle,
        spec.build.build_axis(),
    )?;
    println!("printability index: {:.2}%", report.index);
    let summary = export_outputs(&cfg.output_dir, &spec, &outcome, Some(&report), cfg.toggles)?;
    for path in &summary.written {
        println!("wrote {}", path.display());
    }
    for (path, err) in &summary.failures {
        eprintln!("failed to write {}: {err}", path.display());
    }
    if aborted {
        return Ok(ExitCode::from(3));
    }
    if !summary.failures.is_empty() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_printability(args: PrintabilityArgs) -> Result<ExitCode, Error> {
    let axis = match args.axis.as_str() {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => return Err(Error::Config(format!("axis must be x, y or z, got '{other}'"))),
    };
    let (field, meta) = load_field(&args.fielddump)?;
    let report = printability_index(&field, args.nozzle, axis)?;
    println!("field: {} ({} elements)", meta.field_name, field.grid().n_elems());
    println!("nozzle radius: {} mm", args.nozzle);
    println!("printability index: {:.4}%", report.index);
    if report.empty_design {
        println!("note: empty design (nothing to fill)");
    }
    println!("layer area filled fraction%");
    for (layer, area, filled) in &report.layers {
        let frac = if *area == 0 { 100.0 } else { 100.0 * *filled as f64 / *area as f64 };
        println!("{layer} {area} {filled} {frac:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode, Error> {
    let parts: Vec<&str> = args.thresholds.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "--thresholds expects ero,inter,dil, got '{}'",
            args.thresholds
        )));
    }
    let parse = |s: &str| -> Result<f64, Error> {
        s.trim().parse().map_err(|e| Error::Config(format!("bad threshold '{s}': {e}")))
    };
    let thresholds = Thresholds::new(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)?;
    let c = calibrate(thresholds, args.beta, args.rfil)?;
    println!(
        "thresholds ({}, {}, {}), beta {}, r_fil {} elements",
        thresholds.ero, thresholds.inter, thresholds.dil, args.beta, args.rfil
    );
    println!("r_min_int / r_fil   = {:.4}", c.r_min_int_over_rfil);
    println!("r_min_void / r_fil  = {:.4}", c.r_min_void_over_rfil);
    println!("t_dil / r_min_int   = {:.4}", c.t_dil_over_rmin);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let spec = nozzleopt::bench::gradcheck_instance(&args.benchmark, args.elems)?;
    let check = verify_gradients(&spec, 4, 1, 20_260_809)?;
    let mut ok = true;
    println!("gradient verification on a {} instance:", args.benchmark);
    for row in &check.rows {
        let tol = if row.name == "maxsize" || row.name == "stress" { 1e-4 } else { 1e-5 };
        let pass = row.max_rel_err < tol;
        ok &= pass;
        println!(
            "  {:<10} max relative error {:.3e} (tolerance {tol:.0e}) {}",
            row.name,
            row.max_rel_err,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(4))
    }
}
