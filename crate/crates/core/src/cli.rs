//! Command-line front end.
//!
//! Exit codes: 0 success; 1 failed certificate, resonance found or runtime
//! error; 2 some grid point did not converge; 3 gate failure (equilibrium,
//! Hurwitz, diagonalizability or resonance); 64 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{lookup, registry, GridSpec, SystemConfig, SystemSpec, Tolerance};
use crate::error::{Error, Result};
use crate::geometry::{
    certify, check_commuting, check_symmetry, dual_frame, duality_residual, flag_of, unit_field, CertificationReport,
    FlagReason, ScalarField, VectorField,
};
use crate::koopman::{
    calibrate_horizon, estimate_eigenfunction, estimate_field, magnitude_floors, path_integral_eigenfunction,
    reconstruct_dynamics, symmetry_frame, verify_eigenfunction_property, AdaptiveEigenfunction, ConvergenceSchedule,
    FrameColumn, PointStatus, PrincipalEigenfunction,
};
use crate::sampling::{annulus_points, box_points};
use crate::spectral::{check_resonance, decompose, linearize, SpectralData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_NONCONVERGENT: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Frames at reconstruction points above this condition number are flagged.
const RECONSTRUCT_COND: f64 = 1e6;

#[derive(Debug, Parser)]
#[command(
    name = "koopman",
    version,
    about = "Principal Koopman eigenfunctions and their certificates"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Built-in systems.
    Systems {
        #[command(subcommand)]
        action: SystemsAction,
    },
    /// Eigenfunction fields on a grid, one CSV and JSON sidecar per index.
    Eig {
        #[command(flatten)]
        run: RunArgs,
        /// One-based eigenvalue indices (default: all).
        #[arg(long = "index", value_delimiter = ',')]
        indices: Vec<usize>,
    },
    /// Runs a certification suite and writes its report.
    Verify {
        suite: Suite,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Multi-index resonances of the linearization.
    Resonance {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        degree: u32,
    },
}

#[derive(Debug, Subcommand)]
enum SystemsAction {
    /// Lists registry entries whose name contains FILTER.
    List { filter: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Eigenproperty,
    Symmetry,
    Duality,
    Reconstruct,
    Crosscheck,
}

#[derive(Debug, Clone, Default, Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registry name or path to a system TOML file.
    #[arg(long)]
    system: Option<String>,
    /// Parameter override `name=value` (repeatable).
    #[arg(long = "param")]
    params: Vec<String>,
    /// `lo1,lo2:hi1,hi2:step` (step may be per-axis, comma separated).
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long = "T0")]
    t0: Option<f64>,
    #[arg(long)]
    growth: Option<f64>,
    #[arg(long = "Tmax")]
    t_max: Option<f64>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    /// Output directory.
    #[arg(long, env = "KOOPMAN_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run past failed gates.
    #[arg(long)]
    force: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
struct VerifyArgs {
    /// Number of seeded random test points.
    #[arg(long)]
    points: Option<usize>,
    /// Sample in the shell `r_min <= ‖x - x0‖ <= r_max` instead of the grid box.
    #[arg(long, value_name = "R_MIN,R_MAX", allow_hyphen_values = true)]
    annulus: Option<String>,
    /// Suite tolerance (default depends on the suite).
    #[arg(long)]
    tol: Option<f64>,
    /// One-based eigenvalue index for single-eigenfunction suites.
    #[arg(long, default_value_t = 1)]
    index: usize,
    #[arg(long = "t-probe", default_value_t = 1.0)]
    t_probe: f64,
    /// Symmetry candidate: `frame`, `self` or a unit field `e1`, `e2`, ...
    #[arg(long, default_value = "frame")]
    field: String,
}

/// File form of a run; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub system: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub grid: Option<GridSpec>,
    pub schedule: Option<ScheduleFile>,
    pub tolerances: Option<ToleranceFile>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub t0: Option<f64>,
    pub growth: Option<f64>,
    pub t_max: Option<f64>,
    pub rel_tol: Option<f64>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceFile {
    pub abs: Option<f64>,
    pub rel: Option<f64>,
    pub quad: Option<f64>,
    pub verify: Option<f64>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub grid: GridSpec,
    pub schedule: ConvergenceSchedule,
    pub integrator: Tolerance,
    pub quad_tol: f64,
    pub verify_tol: Option<f64>,
    pub output: PathBuf,
    pub seed: u64,
    pub force: bool,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn parse_params(items: &[String]) -> Result<BTreeMap<String, f64>> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| usage(format!("--param expects name=value, got `{item}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| usage(format!("--param {k}: `{v}` is not a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("{what}: `{v}` is not a number")))
        })
        .collect()
}

/// Parses `lo1,lo2:hi1,hi2:step`.
pub fn parse_grid(s: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(usage(format!("--grid expects lo1,..:hi1,..:step, got `{s}`")));
    }
    let lower = parse_list(parts[0], "--grid lower")?;
    let upper = parse_list(parts[1], "--grid upper")?;
    let mut spacing = parse_list(parts[2], "--grid step")?;
    if spacing.len() == 1 {
        spacing = vec![spacing[0]; lower.len()];
    }
    GridSpec::new(lower, upper, spacing)
}

/// Registry name, else a path to a system TOML file.
pub fn resolve_system(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemSpec> {
    match lookup(name, params) {
        Err(Error::UnknownSystem(_)) if Path::new(name).is_file() => SystemConfig::load(Path::new(name))?.build(params),
        other => other,
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str::<RunFile>(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => RunFile::default(),
        };
        let mut params = file.params.clone();
        params.extend(parse_params(&self.params)?);
        let name = self
            .system
            .clone()
            .or(file.system.clone())
            .ok_or_else(|| usage("no system given (use --system or `system` in the config file)"))?;
        let system = resolve_system(&name, &params)?;
        let grid = match (&self.grid, &file.grid) {
            (Some(g), _) => parse_grid(g)?,
            (None, Some(g)) => {
                g.check()?;
                g.clone()
            }
            (None, None) => GridSpec::cube(system.dim, -1.0, 1.0, 0.05)?,
        };
        if grid.dim() != system.dim {
            return Err(usage(format!(
                "grid dimension {} != system dimension {}",
                grid.dim(),
                system.dim
            )));
        }
        let fs = file.schedule.clone().unwrap_or_default();
        let d = ConvergenceSchedule::default();
        let schedule = ConvergenceSchedule {
            t0: self.t0.or(fs.t0).unwrap_or(d.t0),
            growth: self.growth.or(fs.growth).unwrap_or(d.growth),
            t_max: self.t_max.or(fs.t_max).unwrap_or(d.t_max),
            rel_tol: self.rel_tol.or(fs.rel_tol).unwrap_or(d.rel_tol),
            floor: fs.floor.unwrap_or(d.floor),
        };
        schedule.validate()?;
        let ft = file.tolerances.clone().unwrap_or_default();
        let dt = Tolerance::default();
        let integrator = Tolerance::new(ft.abs.unwrap_or(dt.abs), ft.rel.unwrap_or(dt.rel));
        if !integrator.is_valid() {
            return Err(usage("integrator tolerances must be positive"));
        }
        let quad_tol = ft.quad.unwrap_or(1e-10);
        if !(quad_tol > 0.0) || ft.verify.is_some_and(|v| !(v > 0.0)) {
            return Err(usage("tolerances must be positive"));
        }
        Ok(RunConfig {
            system,
            grid,
            schedule,
            integrator,
            quad_tol,
            verify_tol: ft.verify,
            output: self
                .out
                .clone()
                .or(file.output)
                .unwrap_or_else(|| PathBuf::from("koopman-out")),
            seed: self.seed.or(file.seed).unwrap_or(0),
            force: self.force,
        })
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidInput(_) | Error::UnknownSystem(_) | Error::Config(_) | Error::Expression { .. } => {
                    EXIT_USAGE
                }
                Error::NotEquilibrium { .. } | Error::NotHurwitz { .. } | Error::NotDiagonalizable { .. } => EXIT_GATE,
                _ => EXIT_FAIL,
            }
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Systems {
            action: SystemsAction::List { filter },
        } => {
            print!("{}", systems_table(filter.as_deref().unwrap_or(""))?);
            Ok(EXIT_OK)
        }
        Command::Eig { run, indices } => {
            set_threads(run.threads)?;
            cmd_eig(&run.resolve()?, &indices)
        }
        Command::Verify { suite, run, verify } => {
            set_threads(run.threads)?;
            cmd_verify(&run.resolve()?, suite, &verify)
        }
        Command::Resonance { run, degree } => {
            set_threads(run.threads)?;
            cmd_resonance(&run.resolve()?, degree)
        }
    }
}

/// Registry table: name, dimension, default parameters, equilibrium, description.
pub fn systems_table(filter: &str) -> Result<String> {
    let mut out = format!(
        "{:<20} {:>3}  {:<32} {:<12} {}\n",
        "name", "dim", "params", "equilibrium", "description"
    );
    for entry in registry().into_iter().filter(|e| e.name.contains(filter)) {
        let sys = lookup(entry.name, &BTreeMap::new())?;
        let params = entry
            .defaults
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        let eq = format!("{:?}", sys.equilibrium);
        out.push_str(&format!(
            "{:<20} {:>3}  {:<32} {:<12} {}\n",
            entry.name, sys.dim, params, eq, entry.description
        ));
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Linearization and resonance gates. `Ok(None)` means a gate failed
/// without `--force`. With `resonance_blocks` unset a resonance is only reported.
fn gated_spectrum(cfg: &RunConfig, resonance_blocks: bool) -> Result<Option<SpectralData>> {
    let spectral = match linearize(&cfg.system) {
        Ok(s) => s,
        Err(e @ Error::NotHurwitz { .. }) if cfg.force => {
            eprintln!("warning: {e}; continuing (--force)");
            decompose(&cfg.system.jacobian(&cfg.system.equilibrium))?
        }
        Err(e @ (Error::NotHurwitz { .. } | Error::NotEquilibrium { .. } | Error::NotDiagonalizable { .. })) => {
            eprintln!("gate failed: {e}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let degree = crate::spectral::sufficient_degree(&spectral.eigenvalues);
    let report = check_resonance(&spectral, degree)?;
    if !report.is_non_resonant() {
        for v in &report.violations {
            eprintln!(
                "resonance: alpha = {:?} hits lambda_{} = {} (gap {:e})",
                v.alpha,
                v.target + 1,
                spectral.eigenvalues[v.target],
                v.gap
            );
        }
        if resonance_blocks && !cfg.force {
            eprintln!("gate failed: linearization is resonant up to degree {degree}");
            return Ok(None);
        }
        eprintln!("warning: continuing past resonance");
    }
    Ok(Some(spectral))
}

fn one_based(indices: &[usize], dim: usize) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Ok((0..dim).collect());
    }
    indices
        .iter()
        .map(|&i| {
            if i == 0 || i > dim {
                Err(usage(format!("index {i} out of range 1..={dim}")))
            } else {
                Ok(i - 1)
            }
        })
        .collect()
}

fn cmd_eig(cfg: &RunConfig, indices: &[usize]) -> Result<i32> {
    let indices = one_based(indices, cfg.system.dim)?;
    let Some(spectral) = gated_spectrum(cfg, true)? else {
        return Ok(EXIT_GATE);
    };
    let mut fields = Vec::new();
    for &i in &indices {
        fields.push(estimate_field(
            &cfg.system,
            &spectral,
            i,
            &cfg.grid,
            &cfg.schedule,
            cfg.integrator,
        )?);
    }
    std::fs::create_dir_all(&cfg.output)?;
    write_json(&cfg.output.join("spectral.json"), &spectral.to_json())?;
    let mut all = true;
    for f in &fields {
        let stem = format!("psi{}", f.index + 1);
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        std::fs::write(cfg.output.join(format!("{stem}.csv")), buf)?;
        write_json(
            &cfg.output.join(format!("{stem}.json")),
            &f.metadata(&cfg.system, &spectral, &cfg.schedule, cfg.integrator),
        )?;
        println!(
            "psi_{} (lambda = {}): {} points, {} converged, {} diverged-trajectory, {} non-convergent",
            f.index + 1,
            f.eigenvalue,
            f.points.len(),
            f.count(PointStatus::Converged),
            f.count(PointStatus::DivergedTrajectory),
            f.count(PointStatus::NonConvergent)
        );
        all &= f.all_converged();
    }
    println!("wrote {}", cfg.output.display());
    Ok(if all { EXIT_OK } else { EXIT_NONCONVERGENT })
}

/// All sub-reports of one suite run.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub system: String,
    pub seed: u64,
    pub horizon: Option<f64>,
    pub reports: Vec<CertificationReport>,
    pub pass: bool,
}

fn parse_annulus(s: &str) -> Result<(f64, f64)> {
    match parse_list(s, "--annulus")?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage("--annulus expects r_min,r_max")),
    }
}

fn sample_points(cfg: &RunConfig, args: &VerifyArgs, default_count: usize) -> Result<Vec<Vec<f64>>> {
    let count = args.points.unwrap_or(default_count);
    let x0 = &cfg.system.equilibrium;
    match &args.annulus {
        Some(a) => {
            let (r0, r1) = parse_annulus(a)?;
            Ok(annulus_points(cfg.system.dim, r0, r1, count, cfg.seed)?
                .into_iter()
                .map(|p| p.iter().zip(x0).map(|(a, b)| a + b).collect())
                .collect())
        }
        None => box_points(&cfg.grid.lower, &cfg.grid.upper, count, cfg.seed),
    }
}

/// Fixed-horizon eigenfunctions for every index, calibrated on `points`.
fn fixed_horizon_psis(
    cfg: &RunConfig,
    spectral: &SpectralData,
    points: &[Vec<f64>],
) -> Result<(f64, Vec<Arc<dyn ScalarField>>)> {
    let all: Vec<usize> = (0..cfg.system.dim).collect();
    let horizon = calibrate_horizon(&cfg.system, spectral, &all, points, &cfg.schedule, cfg.integrator)?;
    let psis = all
        .iter()
        .map(|&i| {
            PrincipalEigenfunction::new(&cfg.system, spectral, i, horizon, cfg.integrator)
                .map(|p| Arc::new(p) as Arc<dyn ScalarField>)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((horizon, psis))
}

fn cmd_verify(cfg: &RunConfig, suite: Suite, args: &VerifyArgs) -> Result<i32> {
    let Some(spectral) = gated_spectrum(cfg, false)? else {
        return Ok(EXIT_GATE);
    };
    let n = cfg.system.dim;
    let index = one_based(&[args.index], n)?[0];
    let tol = |default: f64| args.tol.or(cfg.verify_tol).unwrap_or(default);
    let mut horizon = None;
    let reports = match suite {
        Suite::Eigenproperty => {
            let points = sample_points(cfg, args, 100)?;
            let psi = AdaptiveEigenfunction {
                system: cfg.system.clone(),
                spectral: spectral.clone(),
                index,
                schedule: cfg.schedule,
                tol: cfg.integrator,
            };
            vec![verify_eigenfunction_property(
                &psi,
                spectral.eigenvalues[index],
                &cfg.system,
                &points,
                args.t_probe,
                cfg.schedule.floor,
                cfg.integrator,
                tol(1e-2),
            )]
        }
        Suite::Symmetry => {
            let points = sample_points(cfg, args, 20)?;
            let tol = tol(1e-3);
            match args.field.as_str() {
                "frame" => {
                    let (h, psis) = fixed_horizon_psis(cfg, &spectral, &points)?;
                    horizon = Some(h);
                    let floors = magnitude_floors(&psis, &points);
                    let cols: Vec<FrameColumn> = (0..n)
                        .map(|k| FrameColumn {
                            psis: psis.clone(),
                            floors: floors.clone(),
                            column: k,
                        })
                        .collect();
                    let mut reports = Vec::new();
                    for (k, c) in cols.iter().enumerate() {
                        let mut r = check_symmetry(c, &cfg.system, &points, tol);
                        r.check_name = format!("symmetry-E{}", k + 1);
                        reports.push(r);
                    }
                    for a in 0..n {
                        for b in a + 1..n {
                            let mut r = check_commuting(&cols[a], &cols[b], &points, tol);
                            r.check_name = format!("commuting-E{}-E{}", a + 1, b + 1);
                            reports.push(r);
                        }
                    }
                    reports
                }
                "self" => vec![check_symmetry(&cfg.system, &cfg.system, &points, tol)],
                unit => {
                    let k: usize = unit
                        .strip_prefix('e')
                        .and_then(|k| k.parse().ok())
                        .filter(|k| (1..=n).contains(k))
                        .ok_or_else(|| usage(format!("--field must be frame, self or e1..e{n}, got `{unit}`")))?;
                    let mut r = check_symmetry(&unit_field(n, k - 1), &cfg.system, &points, tol);
                    r.check_name = format!("symmetry-{unit}");
                    vec![r]
                }
            }
        }
        Suite::Duality => {
            let points = sample_points(cfg, args, 20)?;
            let (h, psis) = fixed_horizon_psis(cfg, &spectral, &points)?;
            horizon = Some(h);
            let floors = magnitude_floors(&psis, &points);
            vec![certify("duality", &points, tol(1e-8), |x| {
                let f = symmetry_frame(&psis, x, &floors).map_err(|e| flag_of(&e))?;
                let back = dual_frame(&f.frame).map_err(|e| flag_of(&e))?;
                let involution = (&back - &f.linearizing).norm() / f.linearizing.norm().max(1.0);
                Ok(duality_residual(&f.frame, &f.linearizing).max(involution))
            })]
        }
        Suite::Reconstruct => {
            let points = sample_points(cfg, args, 20)?;
            let (h, psis) = fixed_horizon_psis(cfg, &spectral, &points)?;
            horizon = Some(h);
            vec![certify("reconstruct", &points, tol(5e-2), |x| {
                let r = reconstruct_dynamics(&psis, &spectral.eigenvalues, x).map_err(|e| flag_of(&e))?;
                if r.condition >= RECONSTRUCT_COND {
                    return Err(FlagReason::SingularFrame);
                }
                let truth = VectorField::eval(&cfg.system, x)
                    .map_err(|e| flag_of(&e))?
                    .map(|c| c.re);
                let err = (&r.field - &truth).norm() / truth.norm().max(f64::MIN_POSITIVE);
                Ok(err.max(r.imag_residual))
            })]
        }
        Suite::Crosscheck => {
            let points = sample_points(cfg, args, 25)?;
            vec![certify("crosscheck", &points, tol(1e-3), |x| {
                let e = estimate_eigenfunction(&cfg.system, &spectral, index, x, &cfg.schedule, cfg.integrator)
                    .map_err(|e| flag_of(&e))?;
                if e.status != PointStatus::Converged {
                    return Err(match e.status {
                        PointStatus::DivergedTrajectory => FlagReason::EvaluationFailure,
                        _ => FlagReason::NonConvergent,
                    });
                }
                let pi = path_integral_eigenfunction(
                    &cfg.system,
                    &spectral,
                    index,
                    x,
                    e.converged_t,
                    cfg.quad_tol,
                    cfg.integrator,
                )
                .map_err(|e| flag_of(&e))?;
                Ok((pi - e.value).norm() / e.value.norm().max(cfg.schedule.floor))
            })]
        }
    };
    let pass = reports.iter().all(|r| r.pass);
    let report = SuiteReport {
        suite,
        system: cfg.system.name.clone(),
        seed: cfg.seed,
        horizon,
        reports,
        pass,
    };
    std::fs::create_dir_all(&cfg.output)?;
    let name = format!(
        "verify-{}.json",
        serde_json::to_value(suite)?.as_str().unwrap_or("suite")
    );
    write_json(&cfg.output.join(&name), &report)?;
    for r in &report.reports {
        println!(
            "{}: {} (max residual {:e}, tolerance {:e}, {} points, {} flagged)",
            r.check_name,
            if r.pass { "pass" } else { "FAIL" },
            r.max_residual,
            r.tolerance,
            r.points_tested,
            r.flagged_points.len()
        );
    }
    Ok(if pass { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_resonance(cfg: &RunConfig, degree: u32) -> Result<i32> {
    if degree < 2 {
        return Err(usage(format!("--degree must be at least 2, got {degree}")));
    }
    let sys = &cfg.system;
    let residual = sys.eval(&sys.equilibrium).norm();
    if !(residual <= crate::dynamics::EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium {
            residual,
            tolerance: crate::dynamics::EQUILIBRIUM_TOL,
        });
    }
    let spectral = decompose(&sys.jacobian(&sys.equilibrium))?;
    let report = check_resonance(&spectral, degree)?;
    println!("eigenvalues: {}", fmt_eigenvalues(&spectral.eigenvalues));
    if report.violations.is_empty() {
        println!("non-resonant up to degree {degree}");
    }
    for v in &report.violations {
        println!("alpha = {:?} -> lambda_{} (gap {:e})", v.alpha, v.target + 1, v.gap);
    }
    println!("sufficient degree: {}", report.sufficient_degree);
    Ok(if report.is_non_resonant() { EXIT_OK } else { EXIT_FAIL })
}

fn fmt_eigenvalues(l: &[Complex64]) -> String {
    l.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("-1,-1:1,1:0.5").unwrap();
        assert_eq!(g.lower, vec![-1.0, -1.0]);
        assert_eq!(g.spacing, vec![0.5, 0.5]);
        assert_eq!(g.len(), 25);
        let g = parse_grid("0,0:1,2:0.5,1").unwrap();
        assert_eq!(g.spacing, vec![0.5, 1.0]);
        assert!(parse_grid("0,0:1,1").is_err());
        assert!(parse_grid("0,0:1,x:0.1").is_err());
        assert!(parse_grid("1,1:0,0:0.1").is_err());
    }

    #[test]
    fn params_parsing() {
        let p = parse_params(&["mu=0.7".into(), " a = 2 ".into()]).unwrap();
        assert_eq!(p["mu"], 0.7);
        assert_eq!(p["a"], 2.0);
        assert!(parse_params(&["mu".into()]).is_err());
        assert!(parse_params(&["mu=x".into()]).is_err());
    }

    #[test]
    fn table_lists_registry() {
        let t = systems_table("").unwrap();
        assert!(t.contains("vdp-reverse") && t.contains("resonant-quadratic"));
        let t = systems_table("resonant").unwrap();
        assert!(!t.contains("vdp-reverse"));
    }

    #[test]
    fn run_file_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(
            &cfg_path,
            "system = \"vdp-reverse\"\nseed = 5\n[params]\nmu = 0.3\n[schedule]\nt0 = 2.0\nrel_tol = 1e-5\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(cfg_path),
            params: vec!["mu=0.4".into()],
            t0: Some(3.0),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.system.params["mu"], 0.4);
        assert_eq!(cfg.schedule.t0, 3.0);
        assert_eq!(cfg.schedule.rel_tol, 1e-5);
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.grid.len(), 41 * 41);
    }
}
