//! IMEX time integration of the full system.
//!
//! Diffusion is implicit (tridiagonal solve), recovery and infection are
//! explicit. `S` is never stepped: after every step it is reset to
//! `P* − ∫v`, so the discrete total population is constant to roundoff. The
//! S equation is still integrated alongside with the same scheme and the gap
//! is reported as a diagnostic.
//!
//! `imex_cn` is the IMEX trapezoidal pair: Crank–Nicolson on diffusion and
//! Heun on the explicit part, second order overall.

use serde::{Deserialize, Serialize};

use crate::coefficients::ModelCoefficients;
use crate::error::{Result, SisError};
use crate::grid::{Grid, State};
use crate::operators::{infection_unchecked, matvec, DiffusionStencil};

/// Largest negative undershoot accepted, relative to P*.
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEuler,
    ImexCn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub snapshot_every: usize,
    /// Count steps with (tolerated) negative roundoff undershoots.
    #[serde(default)]
    pub positivity_floor_report: bool,
}

fn one() -> usize {
    1
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64, scheme: Scheme) -> Self {
        Self { dt, t_end, scheme, snapshot_every: 1, positivity_floor_report: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SisError::input(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(SisError::input(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if self.snapshot_every == 0 {
            return Err(SisError::input("snapshot_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub s: f64,
    pub mass_error: f64,
    pub min_v: f64,
    pub linf_v: f64,
    pub w11_norm: f64,
    /// |S from conservation − S from its own integrated equation|.
    pub s_equation_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<State>,
    /// One entry per step, the initial state included.
    pub diagnostics: Vec<StepDiagnostics>,
    pub undershoot_steps: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn max_mass_error(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.mass_error).fold(0.0, f64::max)
    }
}

/// Reusable stepper holding the assembled diffusion stencil.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    coeffs: &'a ModelCoefficients,
    grid: &'a Grid,
    stencil: DiffusionStencil,
    scheme: Scheme,
    /// Freeze S (blow-up test hook).
    pub pin_susceptible: bool,
}

/// Result of one step: new state plus the increment of the S equation.
pub(crate) struct StepOutcome {
    pub state: State,
    pub ds_equation: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(coeffs: &'a ModelCoefficients, grid: &'a Grid, scheme: Scheme) -> Result<Self> {
        if coeffs.n_cells() != grid.n_cells() {
            return Err(SisError::input("coefficients and grid have different sizes"));
        }
        Ok(Self { coeffs, grid, stencil: DiffusionStencil::new(coeffs, grid), scheme, pin_susceptible: false })
    }

    /// `−ρv + S∫β|v|^{1+γ}` and `∫ρv − S∫∫β|v|^{1+γ}`.
    fn explicit(&self, v: &[f64], s: f64) -> (Vec<f64>, f64) {
        let inf = infection_unchecked(v, s, self.coeffs, self.grid);
        let f: Vec<f64> = v.iter().zip(&self.coeffs.rho).zip(&inf).map(|((vi, r), q)| -r * vi + q).collect();
        let recovered: f64 = self.grid.h() * v.iter().zip(&self.coeffs.rho).map(|(a, b)| a * b).sum::<f64>();
        let ds = recovered - self.grid.integrate(&inf);
        (f, ds)
    }

    fn susceptible(&self, state: &State, v: &[f64]) -> f64 {
        if self.pin_susceptible {
            state.s
        } else {
            state.p_star - self.grid.integrate(v)
        }
    }

    pub fn step(&self, state: &State, dt: f64) -> Result<State> {
        Ok(self.step_detailed(state, dt, 0)?.state)
    }

    pub(crate) fn step_detailed(&self, state: &State, dt: f64, index: usize) -> Result<StepOutcome> {
        let (f0, g0) = self.explicit(&state.v, state.s);
        let (v_new, ds_equation) = match self.scheme {
            Scheme::ImexEuler => {
                let rhs: Vec<f64> = state.v.iter().zip(&f0).map(|(v, f)| v + dt * f).collect();
                (self.stencil.solve_shifted(dt, &rhs)?, dt * g0)
            }
            Scheme::ImexCn => {
                let av = self.stencil.apply(&state.v);
                let rhs: Vec<f64> = (0..state.v.len()).map(|i| state.v[i] + 0.5 * dt * av[i] + dt * f0[i]).collect();
                let u = self.stencil.solve_shifted(0.5 * dt, &rhs)?;
                let s_u = self.susceptible(state, &u);
                let (f1, g1) = self.explicit(&u, s_u);
                let v: Vec<f64> = (0..u.len()).map(|i| u[i] + 0.5 * dt * (f1[i] - f0[i])).collect();
                (v, 0.5 * dt * (g0 + g1))
            }
        };
        if v_new.iter().any(|x| !x.is_finite()) {
            return Err(SisError::Internal(format!("non-finite density at step {index} (t = {})", state.t + dt)));
        }
        let min_v = v_new.iter().copied().fold(f64::INFINITY, f64::min);
        if min_v < -POSITIVITY_TOL * state.p_star {
            return Err(SisError::Positivity { step: index, t: state.t + dt, min_v });
        }
        let s = self.susceptible(state, &v_new);
        Ok(StepOutcome { state: State { s, t: state.t + dt, p_star: state.p_star, v: v_new }, ds_equation })
    }

    pub(crate) fn diagnostics(&self, state: &State, s_equation: f64) -> StepDiagnostics {
        let v = &state.v;
        StepDiagnostics {
            t: state.t,
            s: state.s,
            mass_error: state.mass_error(self.grid),
            min_v: v.iter().copied().fold(f64::INFINITY, f64::min),
            linf_v: v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            w11_norm: self.grid.w11(v),
            s_equation_gap: (state.s - s_equation).abs(),
        }
    }
}

/// One step of size `cfg.dt`.
pub fn step(state: &State, coeffs: &ModelCoefficients, grid: &Grid, cfg: &IntegratorConfig) -> Result<State> {
    cfg.validate()?;
    grid.check_len(&state.v, "state")?;
    Stepper::new(coeffs, grid, cfg.scheme)?.step(state, cfg.dt)
}

/// Fixed-step integration from `state0.t` to `cfg.t_end` (the last step is
/// shortened to land on `t_end`). Requires Γ ≤ 1.
pub fn integrate(
    state0: &State,
    coeffs: &ModelCoefficients,
    grid: &Grid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if coeffs.bounds.gamma_max > 1.0 {
        return Err(SisError::precondition(format!(
            "Gamma = {} > 1: global existence is not guaranteed; use the blow-up harness",
            coeffs.bounds.gamma_max
        )));
    }
    integrate_unchecked(state0, coeffs, grid, cfg)
}

pub(crate) fn integrate_unchecked(
    state0: &State,
    coeffs: &ModelCoefficients,
    grid: &Grid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    grid.check_len(&state0.v, "state")?;
    let stepper = Stepper::new(coeffs, grid, cfg.scheme)?;
    let span = cfg.t_end - state0.t;
    let steps = if span <= 0.0 { 0 } else { (span / cfg.dt - 1e-9).ceil().max(1.0) as usize };

    let mut out = Trajectory {
        times: vec![state0.t],
        snapshots: vec![state0.clone()],
        diagnostics: vec![stepper.diagnostics(state0, state0.s)],
        undershoot_steps: cfg.positivity_floor_report.then_some(0),
    };
    let mut state = state0.clone();
    let mut s_equation = state0.s;
    for k in 1..=steps {
        let t_target = if k == steps { cfg.t_end } else { state0.t + k as f64 * cfg.dt };
        let dt = t_target - state.t;
        let next = stepper.step_detailed(&state, dt, k)?;
        s_equation += next.ds_equation;
        state = next.state;
        state.t = t_target;
        let diag = stepper.diagnostics(&state, s_equation);
        if let Some(count) = out.undershoot_steps.as_mut() {
            if diag.min_v < 0.0 {
                *count += 1;
            }
        }
        out.diagnostics.push(diag);
        if k % cfg.snapshot_every == 0 || k == steps {
            out.times.push(state.t);
            out.snapshots.push(state.clone());
        }
    }
    Ok(out)
}

/// `1 / (r + b (1 + max|v|^{1+Γ}) max(S, 1))`; +∞ when r = b = 0.
pub fn estimate_dt_max(state: &State, coeffs: &ModelCoefficients, grid: &Grid) -> f64 {
    let _ = grid;
    let b = coeffs.bounds;
    if b.r == 0.0 && b.b == 0.0 {
        return f64::INFINITY;
    }
    let vmax = state.v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    1.0 / (b.r + b.b * (1.0 + vmax.powf(1.0 + b.gamma_max)) * state.s.max(1.0))
}

/// Semi-discrete right-hand side `A_diff v − ρv + S∫β|v|^{1+γ}` (for tests
/// and residual checks).
pub fn semidiscrete_rhs(v: &[f64], s: f64, coeffs: &ModelCoefficients, grid: &Grid) -> Result<Vec<f64>> {
    grid.check_len(v, "v")?;
    let a = DiffusionStencil::new(coeffs, grid).to_dense();
    let av = matvec(&a, v);
    let inf = infection_unchecked(v, s, coeffs, grid);
    Ok((0..v.len()).map(|i| av[i] - coeffs.rho[i] * v[i] + inf[i]).collect())
}
