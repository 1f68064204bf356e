//! Harness for probing finite-time blow-up when Γ > 1.
//!
//! Runs imex_euler with a step that shrinks like the reciprocal of the
//! explicit rates, `dt = min(dt_base, η / (r + (1+Γ) b S max(1, max v)^Γ + K))`
//! with `K = ∫∫β v^{1+γ}` the depletion rate of S, so each step changes the
//! solution by a bounded relative amount. A run is
//! flagged when `max v` exceeds `linf_factor · P*` or the step falls below
//! `dt_floor`. The blow-up time is extrapolated from a straight-line fit of
//! `1 / max v` against `t` over the last records, which is exact for the
//! quadratic Bernoulli mechanism `v' = v²`.
//!
//! Verdicts are numerical evidence only.

use serde::{Deserialize, Serialize};

use crate::coefficients::{sample_coefficients, CoefficientSpec, ModelCoefficients};
use crate::dynamics::{Scheme, Stepper};
use crate::error::{Result, SisError};
use crate::grid::{Grid, State};
use crate::scenario::InitialSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupConfig {
    pub dt_base: f64,
    pub t_end: f64,
    /// Relative change allowed per step.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_linf_factor")]
    pub linf_factor: f64,
    #[serde(default = "default_dt_floor")]
    pub dt_floor: f64,
    /// Number of final records used for the 1/max v fit.
    #[serde(default = "default_fit_window")]
    pub fit_window: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Test hook: hold S at its initial value.
    #[serde(default)]
    pub pin_susceptible: bool,
}

fn default_eta() -> f64 {
    0.01
}
fn default_linf_factor() -> f64 {
    1e8
}
fn default_dt_floor() -> f64 {
    1e-14
}
fn default_fit_window() -> usize {
    20
}
fn default_max_steps() -> usize {
    10_000_000
}

impl BlowupConfig {
    pub fn new(dt_base: f64, t_end: f64) -> Self {
        Self {
            dt_base,
            t_end,
            eta: default_eta(),
            linf_factor: default_linf_factor(),
            dt_floor: default_dt_floor(),
            fit_window: default_fit_window(),
            max_steps: default_max_steps(),
            pin_susceptible: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedTEnd,
    LinfThreshold,
    StepUnderflow,
    MaxSteps,
    SolverError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub n: usize,
    pub dt: f64,
    pub dt_min_reached: f64,
    pub t_estimate: Option<f64>,
    pub blowup_suspected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub blowup_suspected: bool,
    pub t_estimate: Option<f64>,
    pub linf_series: Vec<(f64, f64)>,
    pub mass_series: Vec<(f64, f64)>,
    pub refinement_table: Vec<RefinementRow>,
    pub stop_reason: StopReason,
    pub t_final: f64,
    pub steps: usize,
    pub dt_min_reached: f64,
    /// max |∫v + S − P*| / P* over the run.
    pub max_relative_mass_error: f64,
    /// Set when Γ ≤ 1 (global existence regime) or a solver error occurred.
    pub advisory: Option<String>,
    /// Refinement verdict: stabilizing, receding, no_blowup_flagged or inconclusive.
    pub refinement_trend: Option<String>,
}

pub fn blowup_run(state0: &State, coeffs: &ModelCoefficients, grid: &Grid, cfg: &BlowupConfig) -> BlowupReport {
    let gamma_max = coeffs.bounds.gamma_max;
    let mut advisory = (gamma_max <= 1.0).then(|| {
        format!("Gamma = {gamma_max} <= 1: solutions exist globally; the plain integrator is the intended tool")
    });
    let mut report = BlowupReport {
        blowup_suspected: false,
        t_estimate: None,
        linf_series: vec![(state0.t, linf(&state0.v))],
        mass_series: vec![(state0.t, grid.integrate(&state0.v))],
        refinement_table: vec![],
        stop_reason: StopReason::ReachedTEnd,
        t_final: state0.t,
        steps: 0,
        dt_min_reached: f64::INFINITY,
        max_relative_mass_error: 0.0,
        advisory: None,
        refinement_trend: None,
    };
    let mut stepper = match Stepper::new(coeffs, grid, Scheme::ImexEuler) {
        Ok(s) => s,
        Err(e) => {
            report.stop_reason = StopReason::SolverError;
            report.advisory = Some(e.to_string());
            return report;
        }
    };
    stepper.pin_susceptible = cfg.pin_susceptible;
    let b = coeffs.bounds;
    let p_star = state0.p_star;
    let threshold = cfg.linf_factor * p_star.max(f64::MIN_POSITIVE);
    let mut state = state0.clone();
    let h = grid.h();
    let beta_columns: Vec<f64> = (0..grid.n_cells()).map(|j| h * coeffs.beta.column(j).sum()).collect();

    loop {
        if state.t >= cfg.t_end {
            report.stop_reason = StopReason::ReachedTEnd;
            break;
        }
        if report.steps >= cfg.max_steps {
            report.stop_reason = StopReason::MaxSteps;
            break;
        }
        let vmax = linf(&state.v);
        let depletion: f64 = if cfg.pin_susceptible {
            0.0
        } else {
            h * (0..state.v.len()).map(|j| beta_columns[j] * state.v[j].powf(1.0 + coeffs.gamma[j])).sum::<f64>()
        };
        let rate = b.r + (1.0 + gamma_max) * b.b * state.s * vmax.max(1.0).powf(gamma_max) + depletion;
        let mut dt = if rate > 0.0 { cfg.dt_base.min(cfg.eta / rate) } else { cfg.dt_base };
        if dt < cfg.dt_floor {
            report.stop_reason = StopReason::StepUnderflow;
            report.blowup_suspected = true;
            break;
        }
        dt = dt.min(cfg.t_end - state.t);
        report.dt_min_reached = report.dt_min_reached.min(dt);
        match stepper.step(&state, dt) {
            Ok(next) => state = next,
            Err(e) => {
                report.stop_reason = StopReason::SolverError;
                advisory = Some(match advisory {
                    Some(a) => format!("{a}; {e}"),
                    None => e.to_string(),
                });
                break;
            }
        }
        report.steps += 1;
        let mass = grid.integrate(&state.v);
        report.linf_series.push((state.t, linf(&state.v)));
        report.mass_series.push((state.t, mass));
        if !cfg.pin_susceptible {
            let err = (mass + state.s - p_star).abs() / p_star.max(f64::MIN_POSITIVE);
            report.max_relative_mass_error = report.max_relative_mass_error.max(err);
        }
        if linf(&state.v) > threshold {
            report.stop_reason = StopReason::LinfThreshold;
            report.blowup_suspected = true;
            break;
        }
    }
    report.t_final = state.t;
    if report.blowup_suspected {
        report.t_estimate = extrapolate(&report.linf_series, cfg.fit_window);
    }
    report.advisory = advisory;
    report
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Zero of the least-squares line through `(t, 1/max v)` on the last `window` records.
fn extrapolate(series: &[(f64, f64)], window: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        series.iter().rev().take(window.max(2)).filter(|(_, m)| *m > 0.0).map(|&(t, m)| (t, 1.0 / m)).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return None;
    }
    Some(tm - ym / slope)
}

/// Repeats [`blowup_run`] over every `(n, dt)` pair, finest run's series kept.
pub fn refinement_study(
    coefficients: &CoefficientSpec,
    initial: &InitialSpec,
    cfg: &BlowupConfig,
    n_list: &[usize],
    dt_list: &[f64],
) -> Result<BlowupReport> {
    if n_list.is_empty() || dt_list.is_empty() {
        return Err(SisError::input("refinement study needs nonempty n and dt lists"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SisError::input("n list must be strictly increasing"));
    }
    let mut setups = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let grid = Grid::new(n)?;
        let coeffs = sample_coefficients(coefficients, &grid)?;
        let state0 = initial.state(&grid)?;
        setups.push((grid, coeffs, state0));
    }
    let runs: Vec<BlowupReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = setups
            .iter()
            .flat_map(|setup| dt_list.iter().map(move |&dt| (setup, dt)))
            .map(|((grid, coeffs, state0), dt)| {
                let run_cfg = BlowupConfig { dt_base: dt, ..cfg.clone() };
                scope.spawn(move || blowup_run(state0, coeffs, grid, &run_cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("refinement worker panicked")).collect()
    });
    let rows: Vec<RefinementRow> = n_list
        .iter()
        .flat_map(|&n| dt_list.iter().map(move |&dt| (n, dt)))
        .zip(&runs)
        .map(|((n, dt), rep)| RefinementRow {
            n,
            dt,
            dt_min_reached: rep.dt_min_reached,
            t_estimate: rep.t_estimate,
            blowup_suspected: rep.blowup_suspected,
        })
        .collect();
    let last = runs.into_iter().last();
    let mut report = last.expect("at least one run");
    report.refinement_trend = Some(trend(&rows).to_string());
    report.blowup_suspected = rows.iter().any(|r| r.blowup_suspected);
    report.refinement_table = rows;
    Ok(report)
}

fn trend(rows: &[RefinementRow]) -> &'static str {
    if rows.iter().all(|r| !r.blowup_suspected) {
        return "no_blowup_flagged";
    }
    let estimates: Vec<f64> = rows.iter().filter_map(|r| r.t_estimate).collect();
    if estimates.len() != rows.len() || estimates.len() < 2 {
        return "inconclusive";
    }
    let last = estimates[estimates.len() - 1];
    let before = estimates[estimates.len() - 2];
    if (last - before).abs() <= 0.05 * last.abs() {
        "stabilizing"
    } else if estimates.windows(2).all(|w| w[1] > w[0]) {
        "receding"
    } else {
        "inconclusive"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{KernelPreset, KernelSpec, ProfilePreset, ProfileSpec};
    use crate::ode::ode_blowup_exact;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinned_bernoulli_matches_closed_form() {
        // Uniform data on two cells: v' = S β v², S pinned at 1, T = 1.
        let g = Grid::new(2).unwrap();
        let c = ModelCoefficients::constant(&g, 1.0, 0.0, 1.0, 1.0).unwrap();
        let s0 = State::new(&g, vec![1.0; 2], 1.0).unwrap();
        let mut cfg = BlowupConfig::new(1e-2, 5.0);
        cfg.pin_susceptible = true;
        let rep = blowup_run(&s0, &c, &g, &cfg);
        assert!(rep.blowup_suspected);
        assert_eq!(rep.stop_reason, StopReason::LinfThreshold);
        assert!(rep.advisory.is_some());
        let exact = ode_blowup_exact(0.0, 1.0, 2.0, 1.0).unwrap().unwrap();
        let t = rep.t_estimate.unwrap();
        assert!((t - exact).abs() <= 0.05 * exact, "estimate {t}");
    }

    #[test]
    fn conservation_holds_under_stress() {
        let g = Grid::new(32).unwrap();
        let spec = CoefficientSpec {
            d: ProfileSpec::Preset(ProfilePreset::Constant { value: 0.01 }),
            rho: ProfileSpec::Preset(ProfilePreset::Constant { value: 0.1 }),
            beta: KernelSpec::Preset(KernelPreset::GaussianKernel { base: 0.0, amplitude: 5.0, width: 0.05 }),
            gamma: ProfileSpec::Preset(ProfilePreset::Constant { value: 2.0 }),
            bounds: Default::default(),
        };
        let c = sample_coefficients(&spec, &g).unwrap();
        let v0 = g.sample(|x| 0.1 + 4.0 * (-(x - 0.5f64).powi(2) / 0.002).exp());
        let s0 = State::new(&g, v0, 2.0).unwrap();
        let rep = blowup_run(&s0, &c, &g, &BlowupConfig::new(1e-3, 2.0));
        assert!(rep.max_relative_mass_error <= 1e-10);
        for ((t, m), s) in rep.mass_series.iter().zip(&rep.linf_series) {
            assert_eq!(*t, s.0);
            assert!(*m <= s0.p_star * (1.0 + 1e-12));
        }
        assert!(rep.advisory.is_none());
    }

    #[test]
    fn global_regime_never_flags() {
        let spec = CoefficientSpec::constant(1.0, 1.0, 2.0, 1.0);
        let initial = InitialSpec {
            v0: ProfileSpec::Preset(ProfilePreset::Cosine { mean: 0.5, amplitude: 0.5, mode: 1 }),
            s0: 1.0,
        };
        let rep = refinement_study(&spec, &initial, &BlowupConfig::new(1e-2, 2.0), &[8, 16], &[0.02, 0.01]).unwrap();
        assert_eq!(rep.refinement_table.len(), 4);
        assert!(rep.refinement_table.iter().all(|r| !r.blowup_suspected));
        assert_eq!(rep.refinement_trend.as_deref(), Some("no_blowup_flagged"));
        assert!(rep.advisory.is_some());
    }

    #[test]
    fn refinement_input_errors() {
        let spec = CoefficientSpec::constant(1.0, 1.0, 2.0, 2.0);
        let initial = InitialSpec { v0: ProfileSpec::Preset(ProfilePreset::Constant { value: 0.1 }), s0: 1.0 };
        let cfg = BlowupConfig::new(1e-2, 1.0);
        assert!(refinement_study(&spec, &initial, &cfg, &[], &[0.1]).is_err());
        assert!(refinement_study(&spec, &initial, &cfg, &[16, 8], &[0.1]).is_err());
    }

    #[test]
    fn line_fit_recovers_zero() {
        let series: Vec<(f64, f64)> = (0..50)
            .map(|k| {
                let t = k as f64 * 0.01;
                (t, 1.0 / (0.7 - t))
            })
            .collect();
        assert_abs_diff_eq!(extrapolate(&series, 20).unwrap(), 0.7, epsilon = 1e-12);
    }
}
