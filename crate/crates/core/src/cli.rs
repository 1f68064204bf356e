//! Command-line front end: scenario loading, subcommand dispatch and output files.
//!
//! Exit codes: 0 success, 1 validation or input error, 2 solver failure
//! (a report is still written), 64 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::blowup::{blowup_run, refinement_study, BlowupConfig, BlowupReport};
use crate::dynamics::{integrate, Scheme};
use crate::error::{Result, SisError};
use crate::ode::{ode_endemic_equilibria, ode_integrate, EquilibriumSet, OdeMethod, OdeState, OdeSystem};
use crate::operators::assemble_psi_r;
use crate::output::{write_csv, write_json};
use crate::scenario::{preset, preset_names, GammaMode, Prepared, Scenario};
use crate::spectral::{find_s_star, spectral_bound, DEFAULT_TOL};
use crate::stability::{stability_summary, LinearizationPoint, DEFAULT_SEED};
use crate::steady::{endemic_bilinear, endemic_fixed_point_with, verify_steady_state, FixedPointOptions, SteadyState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "strainsis", version, about = "Strain-structured SIS epidemic model toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Named preset instead of a scenario file.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "n-cells", global = true)]
    n_cells: Option<usize>,
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PointArg {
    DiseaseFree,
    Endemic,
}

#[derive(Debug, Args)]
struct SteadyArgs {
    /// Ray parameter R of the fixed-point solver.
    #[arg(long = "R")]
    r: Option<f64>,
    /// Total infected mass for the bilinear solver.
    #[arg(long = "V-star")]
    v_star: Option<f64>,
    #[arg(long = "gamma-mode", value_enum)]
    gamma_mode: Option<GammaMode>,
    /// Picard damping ω in (0, 1].
    #[arg(long)]
    damping: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the PDE and write diagnostics and snapshots.
    Simulate {
        #[arg(long, value_enum)]
        scheme: Option<Scheme>,
    },
    /// Compute an endemic steady state and verify it.
    SteadyState(SteadyArgs),
    /// Spectral bound of Ψ_R over a list of R values.
    SpectralScan {
        #[arg(long = "R", value_delimiter = ',')]
        r: Vec<f64>,
    },
    /// Spectral abscissa of the linearisation.
    Stability {
        #[arg(long, value_enum, default_value = "disease-free")]
        point: PointArg,
        #[command(flatten)]
        steady: SteadyArgs,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Finite-strain ODE reduction.
    Ode {
        #[arg(long)]
        strains: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<OdeMethod>,
    },
    /// Probe for finite-time blow-up, optionally over a refinement grid.
    BlowupScan {
        #[arg(long = "n-list", value_delimiter = ',')]
        n_list: Vec<usize>,
        #[arg(long = "dt-list", value_delimiter = ',')]
        dt_list: Vec<f64>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Check a scenario against the coefficient bounds.
    Validate,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            if e.is_solver_failure() {
                let report = json!({ "status": "failed", "error": e.to_string() });
                if fs::create_dir_all(&cli.common.out_dir).is_ok() {
                    let _ = write_json(&cli.common.out_dir.join("error.json"), &report);
                }
                EXIT_SOLVER
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

enum Failure {
    Usage(String),
    Model(SisError),
}

impl From<SisError> for Failure {
    fn from(e: SisError) -> Self {
        Failure::Model(e)
    }
}

fn load_scenario(common: &Common) -> std::result::Result<Scenario, Failure> {
    let mut s = match (&common.scenario, &common.preset) {
        (Some(_), Some(_)) => return Err(Failure::Usage("pass either --scenario or --preset, not both".into())),
        (Some(path), None) => Scenario::load(path)?,
        (None, Some(name)) => preset(name).ok_or_else(|| {
            Failure::Usage(format!("unknown preset {name:?}; available: {}", preset_names().join(", ")))
        })?,
        (None, None) => {
            return Err(Failure::Usage(format!(
                "a scenario is required: --scenario <path> or --preset <{}>",
                preset_names().join("|")
            )))
        }
    };
    if let Some(n) = common.n_cells {
        s.grid.n_cells = n;
    }
    if let Some(t) = common.t_end {
        s.integrator.t_end = t;
    }
    if let Some(dt) = common.dt {
        s.integrator.dt = dt;
    }
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn dispatch(cli: &Cli) -> std::result::Result<i32, Failure> {
    let mut scenario = load_scenario(&cli.common)?;
    if let Command::Simulate { scheme: Some(scheme) } = cli.command {
        scenario.integrator.scheme = scheme;
    }
    let prepared = scenario.prepare()?;
    let out = cli.common.out_dir.as_path();
    fs::create_dir_all(out).map_err(SisError::from)?;
    fs::write(out.join("scenario.toml"), scenario.to_toml_string()?).map_err(SisError::from)?;

    let code = match &cli.command {
        Command::Validate => cmd_validate(&scenario, &prepared, out)?,
        Command::Simulate { .. } => cmd_simulate(&scenario, &prepared, out)?,
        Command::SteadyState(args) => cmd_steady(&scenario, &prepared, args, out)?,
        Command::SpectralScan { r } => cmd_spectral_scan(&scenario, &prepared, r, out)?,
        Command::Stability { point, steady, tol } => cmd_stability(&scenario, &prepared, *point, steady, *tol, out)?,
        Command::Ode { strains, method } => cmd_ode(&scenario, &prepared, *strains, *method, out)?,
        Command::BlowupScan { n_list, dt_list, eta } => cmd_blowup(&scenario, &prepared, n_list, dt_list, *eta, out)?,
    };
    Ok(code)
}

fn name(s: &Scenario) -> &str {
    s.name.as_deref().unwrap_or("unnamed")
}

fn cmd_validate(s: &Scenario, p: &Prepared, out: &Path) -> Result<i32> {
    let report = json!({
        "scenario": name(s),
        "status": "ok",
        "n_cells": p.grid.n_cells(),
        "p_star": p.p_star(),
        "bounds": p.coeffs.bounds,
        "gamma_is_zero": p.coeffs.gamma_is_zero(),
    });
    write_json(&out.join("validate.json"), &report)?;
    println!("{}: valid, n_cells = {}, P* = {:.16e}", name(s), p.grid.n_cells(), p.p_star());
    Ok(EXIT_OK)
}

fn cmd_simulate(s: &Scenario, p: &Prepared, out: &Path) -> Result<i32> {
    let traj = integrate(&p.state0, &p.coeffs, &p.grid, &s.integrator)?;
    let rows: Vec<Vec<f64>> = traj
        .diagnostics
        .iter()
        .map(|d| vec![d.t, d.s, d.mass_error, d.min_v, d.linf_v, d.w11_norm, d.s_equation_gap])
        .collect();
    write_csv(
        &out.join("diagnostics.csv"),
        &["t", "S", "mass_error", "min_v", "linf_v", "w11_norm", "s_equation_gap"],
        &rows,
    )?;
    let centers = p.grid.centers();
    let snap_rows: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .flat_map(|st| centers.iter().zip(&st.v).map(move |(&x, &v)| vec![st.t, x, v, st.s]))
        .collect();
    write_csv(&out.join("snapshots.csv"), &["t", "x", "v", "S"], &snap_rows)?;
    let last = traj.last();
    let max_err = traj.max_mass_error();
    let summary = json!({
        "scenario": name(s),
        "n_cells": p.grid.n_cells(),
        "p_star": p.p_star(),
        "integrator": s.integrator,
        "steps": traj.diagnostics.len() - 1,
        "max_mass_error": max_err,
        "max_relative_mass_error": max_err / p.p_star(),
        "undershoot_steps": traj.undershoot_steps,
        "final": { "t": last.t, "S": last.s, "mass": p.grid.integrate(&last.v) },
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("simulate {}: t = {}, max mass error = {:.3e}", name(s), last.t, max_err);
    Ok(EXIT_OK)
}

fn solve_steady(s: &Scenario, p: &Prepared, args: &SteadyArgs) -> Result<SteadyState> {
    let mode = args.gamma_mode.or(s.run.gamma_mode).unwrap_or_default();
    let bilinear = match mode {
        GammaMode::Auto => p.coeffs.gamma_is_zero(),
        GammaMode::Bilinear => true,
        GammaMode::FixedPoint => false,
    };
    if bilinear {
        let v_total = match args.v_star.or(s.run.v_star) {
            Some(v) => v,
            None => {
                let s_star = find_s_star(&p.coeffs, &p.grid, None)?;
                let v = p.p_star() - s_star;
                if !(v > 0.0) {
                    return Err(SisError::Precondition(format!(
                        "P* = {} does not exceed S* = {s_star}: only the disease-free state exists",
                        p.p_star()
                    )));
                }
                v
            }
        };
        endemic_bilinear(&p.coeffs, &p.grid, v_total)
    } else {
        let r = args.r.or(s.run.r).unwrap_or(1.0);
        let mut opts = FixedPointOptions::default();
        if let Some(w) = args.damping.or(s.run.damping) {
            opts.damping = w;
        }
        endemic_fixed_point_with(&p.coeffs, &p.grid, r, None, opts)
    }
}

fn cmd_steady(s: &Scenario, p: &Prepared, args: &SteadyArgs, out: &Path) -> Result<i32> {
    let ss = solve_steady(s, p, args)?;
    let check = verify_steady_state(&ss, &p.coeffs, &p.grid);
    let rows: Vec<Vec<f64>> = p.grid.centers().iter().zip(&ss.v_star).map(|(&x, &v)| vec![x, v]).collect();
    write_csv(&out.join("steady_state.csv"), &["x", "v_star"], &rows)?;
    let report = json!({
        "scenario": name(s),
        "n_cells": p.grid.n_cells(),
        "p_star": p.p_star(),
        "S_star": ss.s_star,
        "V_star": p.grid.integrate(&ss.v_star),
        "steady_state": ss,
        "verification": check,
        "status": if check.passed() { "ok" } else { "verification_failed" },
    });
    write_json(&out.join("steady_state.json"), &report)?;
    println!(
        "steady-state {}: S* = {:.16e}, residual_pde = {:.3e}, verified = {}",
        name(s),
        ss.s_star,
        ss.residual_pde,
        check.passed()
    );
    Ok(if check.passed() { EXIT_OK } else { EXIT_SOLVER })
}

fn cmd_spectral_scan(s: &Scenario, p: &Prepared, r_flag: &[f64], out: &Path) -> Result<i32> {
    let r_values = if !r_flag.is_empty() {
        r_flag.to_vec()
    } else {
        s.run.r_values.clone().unwrap_or_else(|| vec![0.0, 0.1, 0.5, 1.0, 2.0, 5.0])
    };
    let tol = s.run.tol.unwrap_or(DEFAULT_TOL);
    let mut rows = Vec::new();
    let mut vectors = Vec::new();
    let mut entries = Vec::new();
    for &r in &r_values {
        let op = assemble_psi_r(&p.coeffs, &p.grid, r)?;
        let res = spectral_bound(&op, &p.grid, tol)?;
        rows.push(vec![r, res.s, res.residual, res.iterations as f64]);
        entries.push(json!({ "R": r, "s": res.s, "residual": res.residual, "iterations": res.iterations }));
        vectors.push(res.eigvec);
    }
    write_csv(&out.join("spectral_scan.csv"), &["R", "s", "residual", "iterations"], &rows)?;
    let header: Vec<String> =
        std::iter::once("x".to_string()).chain(r_values.iter().map(|r| format!("R={r}"))).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let vec_rows: Vec<Vec<f64>> = (0..p.grid.n_cells())
        .map(|i| std::iter::once(p.grid.centers()[i]).chain(vectors.iter().map(|v| v[i])).collect())
        .collect();
    write_csv(&out.join("eigenvectors.csv"), &header_refs, &vec_rows)?;
    let s_star = if p.coeffs.gamma_is_zero() { find_s_star(&p.coeffs, &p.grid, None).ok() } else { None };
    let report = json!({
        "scenario": name(s),
        "n_cells": p.grid.n_cells(),
        "p_star": p.p_star(),
        "scan": entries,
        "S_star": s_star,
    });
    write_json(&out.join("spectral_scan.json"), &report)?;
    println!("spectral-scan {}: {} values of R", name(s), r_values.len());
    Ok(EXIT_OK)
}

fn cmd_stability(
    s: &Scenario,
    p: &Prepared,
    point: PointArg,
    steady: &SteadyArgs,
    tol: Option<f64>,
    out: &Path,
) -> Result<i32> {
    let lp = match point {
        PointArg::DiseaseFree => LinearizationPoint::DiseaseFree { s: p.p_star() },
        PointArg::Endemic => LinearizationPoint::Endemic(solve_steady(s, p, steady)?),
    };
    let tol = tol.or(s.run.tol).unwrap_or(1e-9);
    let seed = if s.seed == 0 { DEFAULT_SEED } else { s.seed };
    let summary = stability_summary(&lp, &p.coeffs, &p.grid, tol, seed)?;
    let (kind, s_value) = match &lp {
        LinearizationPoint::DiseaseFree { s } => ("disease-free", *s),
        LinearizationPoint::Endemic(ss) => ("endemic", ss.s_star),
    };
    let report = json!({
        "scenario": name(s),
        "n_cells": p.grid.n_cells(),
        "p_star": p.p_star(),
        "point": kind,
        "S": s_value,
        "seed": seed,
        "summary": summary,
    });
    write_json(&out.join("stability.json"), &report)?;
    println!(
        "stability {} ({kind}): abscissa = {:.6e}, mass-zero abscissa = {:.6e}",
        name(s),
        summary.abscissa,
        summary.abscissa_mass_zero
    );
    Ok(if summary.full.converged && summary.mass_zero.converged { EXIT_OK } else { EXIT_SOLVER })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn cmd_ode(s: &Scenario, p: &Prepared, strains: Option<usize>, method: Option<OdeMethod>, out: &Path) -> Result<i32> {
    let k = strains.or(s.run.strains).unwrap_or(1);
    let method = method.or(s.run.ode_method).unwrap_or(OdeMethod::Adaptive);
    let (sys, state0) = if k == 1 {
        // Spatial averages; exact for constant coefficients.
        let beta_mean = p.coeffs.beta.mean();
        let sys = OdeSystem::single(mean(&p.coeffs.rho), beta_mean, mean(&p.coeffs.gamma))?;
        (sys, OdeState::new(vec![p.grid.integrate(&p.state0.v)], p.state0.s)?)
    } else {
        let coarse = s.clone().with_n_cells(k).prepare()?;
        let sys = OdeSystem::from_pde(&coarse.coeffs, &coarse.grid)?;
        let i0 = coarse.state0.v.iter().map(|v| v * coarse.grid.h()).collect();
        (sys, OdeState::new(i0, coarse.state0.s)?)
    };
    let traj = ode_integrate(&state0, &sys, s.integrator.dt, s.integrator.t_end, method)?;
    let mut header = vec!["t".to_string(), "S".to_string()];
    header.extend((1..=k).map(|j| format!("I_{j}")));
    header.push("conservation_error".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = traj
        .states
        .iter()
        .zip(&traj.conservation_error)
        .map(|(st, e)| {
            let mut row = vec![st.t, st.s];
            row.extend(&st.i);
            row.push(*e);
            row
        })
        .collect();
    write_csv(&out.join("ode_trajectory.csv"), &header_refs, &rows)?;
    let total = state0.total();
    let equilibria = if k == 1 {
        match ode_endemic_equilibria(&sys, total) {
            Ok(EquilibriumSet::Points(pts)) => json!({ "kind": "points", "points": pts }),
            Ok(EquilibriumSet::Continuum { s }) => json!({ "kind": "continuum", "S": s }),
            Err(e) => json!({ "kind": "unavailable", "reason": e.to_string() }),
        }
    } else {
        serde_json::Value::Null
    };
    let last = traj.last();
    let report = json!({
        "scenario": name(s),
        "strains": k,
        "method": method,
        "total_population": total,
        "termination": traj.termination,
        "final": last,
        "max_conservation_error": traj.conservation_error.iter().cloned().fold(0.0, f64::max),
        "equilibria": equilibria,
    });
    write_json(&out.join("ode.json"), &report)?;
    println!("ode {}: {} strains, t = {}, termination {:?}", name(s), k, last.t, traj.termination);
    Ok(EXIT_OK)
}

fn cmd_blowup(
    s: &Scenario,
    p: &Prepared,
    n_flag: &[usize],
    dt_flag: &[f64],
    eta: Option<f64>,
    out: &Path,
) -> Result<i32> {
    let params = s.run.blowup.as_ref();
    let t_end = params.and_then(|b| b.t_end).unwrap_or(s.integrator.t_end);
    let mut cfg = BlowupConfig::new(s.integrator.dt, t_end);
    if let Some(e) = eta.or(params.and_then(|b| b.eta)) {
        cfg.eta = e;
    }
    let n_list: Vec<usize> =
        if n_flag.is_empty() { params.map(|b| b.n_list.clone()).unwrap_or_default() } else { n_flag.to_vec() };
    let dt_list: Vec<f64> =
        if dt_flag.is_empty() { params.map(|b| b.dt_list.clone()).unwrap_or_default() } else { dt_flag.to_vec() };
    let report: BlowupReport = if n_list.is_empty() && dt_list.is_empty() {
        blowup_run(&p.state0, &p.coeffs, &p.grid, &cfg)
    } else {
        let n_list = if n_list.is_empty() { vec![p.grid.n_cells()] } else { n_list };
        let dt_list = if dt_list.is_empty() { vec![s.integrator.dt] } else { dt_list };
        refinement_study(&s.coefficients, &s.initial, &cfg, &n_list, &dt_list)?
    };
    let rows: Vec<Vec<f64>> = report
        .linf_series
        .iter()
        .zip(&report.mass_series)
        .map(|(&(t, linf), &(_, mass))| vec![t, linf, mass])
        .collect();
    write_csv(&out.join("blowup_series.csv"), &["t", "linf_v", "mass"], &rows)?;
    let table: Vec<Vec<f64>> = report
        .refinement_table
        .iter()
        .map(|r| {
            vec![
                r.n as f64,
                r.dt,
                r.dt_min_reached,
                r.t_estimate.unwrap_or(f64::NAN),
                f64::from(u8::from(r.blowup_suspected)),
            ]
        })
        .collect();
    if !table.is_empty() {
        write_csv(
            &out.join("refinement_table.csv"),
            &["n", "dt", "dt_min_reached", "t_estimate", "blowup_suspected"],
            &table,
        )?;
    }
    let doc = json!({
        "scenario": name(s),
        "p_star": p.p_star(),
        "note": "numerical evidence only",
        "report": report,
    });
    write_json(&out.join("blowup.json"), &doc)?;
    if let Some(a) = &report.advisory {
        eprintln!("advisory: {a}");
    }
    println!("blowup-scan {}: suspected = {}, t_estimate = {:?}", name(s), report.blowup_suspected, report.t_estimate);
    Ok(EXIT_OK)
}
