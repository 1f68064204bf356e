//! Finite-strain ODE system
//!
//! ```text
//! dI_i/dt = Σ_j (d_ij I_j − d_ji I_i) − ρ_i I_i + S Σ_j β_ij I_j^{1+γ_j}
//! dS/dt   = Σ_i ρ_i I_i − S Σ_ij β_ij I_j^{1+γ_j}
//! ```
//!
//! and its single-strain specialisation, with closed-form equilibria and
//! Bernoulli blow-up times. These serve as oracles for the PDE solvers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::ModelCoefficients;
use crate::error::{Result, SisError};
use crate::grid::Grid;
use crate::operators::DiffusionStencil;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSystem {
    /// Mutation rates `d_matrix[(i, j)] = d_ij` (flow from strain j into i).
    /// The diagonal is ignored.
    pub d_matrix: DMatrix<f64>,
    pub rho: Vec<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: Vec<f64>,
    /// Test hook: freeze S at its initial value.
    pub pin_susceptible: bool,
}

impl OdeSystem {
    pub fn new(d_matrix: DMatrix<f64>, rho: Vec<f64>, beta: DMatrix<f64>, gamma: Vec<f64>) -> Result<Self> {
        let n = rho.len();
        if n == 0 {
            return Err(SisError::input("ODE system needs at least one strain"));
        }
        if gamma.len() != n || d_matrix.shape() != (n, n) || beta.shape() != (n, n) {
            return Err(SisError::input(format!(
                "inconsistent strain counts: rho {n}, gamma {}, d {:?}, beta {:?}",
                gamma.len(),
                d_matrix.shape(),
                beta.shape()
            )));
        }
        let bad = |v: &f64| !(*v >= 0.0) || !v.is_finite();
        for i in 0..n {
            for j in 0..n {
                if i != j && bad(&d_matrix[(i, j)]) {
                    return Err(SisError::input(format!("mutation rate d[{i}][{j}] must be nonnegative")));
                }
            }
        }
        if rho.iter().any(bad) || gamma.iter().any(bad) || beta.iter().any(bad) {
            return Err(SisError::input("rho, beta and gamma must be nonnegative and finite"));
        }
        Ok(Self { d_matrix, rho, beta, gamma, pin_susceptible: false })
    }

    /// `dI/dt = −ρI + βSI^{1+γ}`.
    pub fn single(rho: f64, beta: f64, gamma: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(1, 1), vec![rho], DMatrix::from_element(1, 1, beta), vec![gamma])
    }

    /// Strain system whose state `I_i = h·v_i` reproduces the semi-discrete
    /// PDE exactly: `d_ij` are the finite-volume face coefficients over h²
    /// for nearest neighbours, and `β_ij h^{1−γ_j}` absorbs the quadrature weight.
    pub fn from_pde(coeffs: &ModelCoefficients, grid: &Grid) -> Result<Self> {
        let n = grid.n_cells();
        let h = grid.h();
        let st = DiffusionStencil::new(coeffs, grid);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            if i > 0 {
                d[(i, i - 1)] = st.lower[i];
            }
            if i + 1 < n {
                d[(i, i + 1)] = st.upper[i];
            }
        }
        let beta = DMatrix::from_fn(n, n, |i, j| coeffs.beta[(i, j)] * h.powf(1.0 - coeffs.gamma[j]));
        Self::new(d, coeffs.rho.clone(), beta, coeffs.gamma.clone())
    }

    pub fn n_strains(&self) -> usize {
        self.rho.len()
    }

    fn require_single(&self) -> Result<(f64, f64, f64)> {
        if self.n_strains() != 1 {
            return Err(SisError::precondition("this operation needs a single-strain system"));
        }
        Ok((self.rho[0], self.beta[(0, 0)], self.gamma[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeState {
    pub i: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

impl OdeState {
    pub fn new(i: Vec<f64>, s: f64) -> Result<Self> {
        if i.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !(s >= 0.0) || !s.is_finite() {
            return Err(SisError::input("ODE initial data must be nonnegative and finite"));
        }
        Ok(Self { i, s, t: 0.0 })
    }

    pub fn total(&self) -> f64 {
        self.i.iter().sum::<f64>() + self.s
    }
}

/// Time derivative `(dI/dt, dS/dt)`.
pub fn ode_rhs(state: &OdeState, sys: &OdeSystem) -> (Vec<f64>, f64) {
    rhs_raw(&state.i, state.s, sys)
}

fn rhs_raw(i_vec: &[f64], s: f64, sys: &OdeSystem) -> (Vec<f64>, f64) {
    let n = i_vec.len();
    let w: Vec<f64> = i_vec.iter().zip(&sys.gamma).map(|(&v, &g)| v.abs().powf(1.0 + g)).collect();
    let mut di = vec![0.0; n];
    let mut recovered = 0.0;
    let mut infected = 0.0;
    for i in 0..n {
        let mut mutation = 0.0;
        let mut force = 0.0;
        for j in 0..n {
            if j != i {
                mutation += sys.d_matrix[(i, j)] * i_vec[j] - sys.d_matrix[(j, i)] * i_vec[i];
            }
            force += sys.beta[(i, j)] * w[j];
        }
        di[i] = mutation - sys.rho[i] * i_vec[i] + s * force;
        recovered += sys.rho[i] * i_vec[i];
        infected += force;
    }
    let ds = if sys.pin_susceptible { 0.0 } else { recovered - s * infected };
    (di, ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Rk4,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// Adaptive step fell below the floor, typically near a blow-up.
    StepUnderflow,
    /// A component exceeded the overflow threshold or became non-finite.
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub overflow: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, overflow: 1e15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub states: Vec<OdeState>,
    /// |ΣI + S − P| for each recorded state.
    pub conservation_error: Vec<f64>,
    pub termination: Termination,
}

impl OdeTrajectory {
    pub fn last(&self) -> &OdeState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Integrates to `t_end`. For [`OdeMethod::Adaptive`], `dt` is the initial step.
pub fn ode_integrate(
    state0: &OdeState,
    sys: &OdeSystem,
    dt: f64,
    t_end: f64,
    method: OdeMethod,
) -> Result<OdeTrajectory> {
    ode_integrate_with(state0, sys, dt, t_end, method, OdeOptions::default())
}

pub fn ode_integrate_with(
    state0: &OdeState,
    sys: &OdeSystem,
    dt: f64,
    t_end: f64,
    method: OdeMethod,
    opts: OdeOptions,
) -> Result<OdeTrajectory> {
    if state0.i.len() != sys.n_strains() {
        return Err(SisError::input("state and system have different strain counts"));
    }
    OdeState::new(state0.i.clone(), state0.s)?;
    if !(dt > 0.0) || !(t_end >= state0.t) {
        return Err(SisError::input("need dt > 0 and t_end >= t0"));
    }
    let p = state0.total();
    let mut y: Vec<f64> = state0.i.iter().copied().chain([state0.s]).collect();
    let mut t = state0.t;
    let mut out = OdeTrajectory {
        states: vec![state0.clone()],
        conservation_error: vec![0.0],
        termination: Termination::Completed,
    };
    let f = |y: &[f64]| -> Vec<f64> {
        let n = y.len() - 1;
        let (mut d, ds) = rhs_raw(&y[..n], y[n], sys);
        d.push(ds);
        d
    };
    let record = |y: &[f64], t: f64, out: &mut OdeTrajectory| {
        let n = y.len() - 1;
        let st = OdeState { i: y[..n].to_vec(), s: y[n], t };
        out.conservation_error.push((st.total() - p).abs());
        out.states.push(st);
    };
    let overflowed = |y: &[f64]| y.iter().any(|v| !v.is_finite() || v.abs() > opts.overflow);

    match method {
        OdeMethod::Rk4 => {
            let steps = ((t_end - t) / dt - 1e-9).ceil().max(0.0) as usize;
            let t0 = t;
            for k in 1..=steps {
                let t_next = (t0 + k as f64 * dt).min(t_end);
                let h = t_next - t;
                let y_new = rk4_step(&f, &y, h);
                if overflowed(&y_new) {
                    out.termination = Termination::Overflow;
                    return Ok(out);
                }
                y = y_new;
                t = if k == steps { t_end } else { t_next };
                record(&y, t, &mut out);
            }
        }
        OdeMethod::Adaptive => {
            let mut h = dt.min(t_end - t);
            let mut k1 = f(&y);
            while t < t_end {
                let h_min = 1e-14 * (1.0 + t.abs());
                if h < h_min {
                    out.termination = Termination::StepUnderflow;
                    return Ok(out);
                }
                let last = t + h >= t_end;
                if last {
                    h = t_end - t;
                }
                let (y_new, k7, err) = dopri_step(&f, &y, &k1, h, opts);
                if !err.is_finite() || overflowed(&y_new) {
                    if y_new.iter().all(|v| v.is_finite()) && overflowed(&y_new) && err <= 1.0 {
                        out.termination = Termination::Overflow;
                        return Ok(out);
                    }
                    h *= 0.2;
                    continue;
                }
                if err <= 1.0 {
                    t = if last { t_end } else { t + h };
                    y = y_new;
                    k1 = k7;
                    record(&y, t, &mut out);
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= factor;
            }
        }
    }
    Ok(out)
}

fn rk4_step(f: &impl Fn(&[f64]) -> Vec<f64>, y: &[f64], h: f64) -> Vec<f64> {
    let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, z)| x + c * z).collect() };
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * h, &k1));
    let k3 = f(&axpy(y, 0.5 * h, &k2));
    let k4 = f(&axpy(y, h, &k3));
    (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// One Dormand–Prince step; returns the 5th-order solution, its derivative
/// (first stage of the next step) and the scaled RMS error.
fn dopri_step(
    f: &impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    k1: &[f64],
    h: f64,
    opts: OdeOptions,
) -> (Vec<f64>, Vec<f64>, f64) {
    let m = y.len();
    let mut k: Vec<Vec<f64>> = vec![k1.to_vec()];
    for row in A.iter().take(5) {
        let yi: Vec<f64> =
            (0..m).map(|c| y[c] + h * row.iter().zip(&k).map(|(a, kk)| a * kk[c]).sum::<f64>()).collect();
        k.push(f(&yi));
    }
    let y_new: Vec<f64> =
        (0..m).map(|c| y[c] + h * A[5].iter().zip(&k).map(|(a, kk)| a * kk[c]).sum::<f64>()).collect();
    let k7 = f(&y_new);
    k.push(k7.clone());
    let err = ((0..m)
        .map(|c| {
            let e = h * E.iter().zip(&k).map(|(w, kk)| w * kk[c]).sum::<f64>();
            let sc = opts.atol + opts.rtol * y[c].abs().max(y_new[c].abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        / m as f64)
        .sqrt();
    (y_new, k7, err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub v: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquilibriumSet {
    /// Isolated equilibria, ordered by increasing V. May be empty.
    Points(Vec<Equilibrium>),
    /// γ = 0: every V in (0, P) pairs with this S.
    Continuum { s: f64 },
}

/// Critical total population `(γρ/β)^{1/(1+γ)} (1 + 1/γ)` for γ > 0.
pub fn critical_population(rho: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(rho > 0.0) || !(beta > 0.0) {
        return Err(SisError::precondition("critical population needs gamma, rho, beta > 0"));
    }
    Ok(tangent_v(rho, beta, gamma) * (1.0 + 1.0 / gamma))
}

fn tangent_v(rho: f64, beta: f64, gamma: f64) -> f64 {
    (gamma * rho / beta).powf(1.0 / (1.0 + gamma))
}

/// Positive equilibria of the single-strain model with `I + S = p_star`.
pub fn ode_endemic_equilibria(sys: &OdeSystem, p_star: f64) -> Result<EquilibriumSet> {
    let (rho, beta, gamma) = sys.require_single()?;
    if !(p_star > 0.0) {
        return Err(SisError::input("total population must be positive"));
    }
    if beta == 0.0 {
        return Ok(EquilibriumSet::Points(vec![]));
    }
    if rho == 0.0 {
        return Ok(EquilibriumSet::Points(vec![Equilibrium { v: p_star, s: 0.0 }]));
    }
    if gamma == 0.0 {
        return Ok(EquilibriumSet::Continuum { s: rho / beta });
    }
    let g = |v: f64| v + v.powf(-gamma) * rho / beta - p_star;
    let vc = tangent_v(rho, beta, gamma);
    let p_bar = vc * (1.0 + 1.0 / gamma);
    if (p_star - p_bar).abs() <= 1e-12 * p_bar {
        return Ok(EquilibriumSet::Points(vec![Equilibrium { v: vc, s: p_star - vc }]));
    }
    if p_star < p_bar {
        return Ok(EquilibriumSet::Points(vec![]));
    }
    // g decreases on (0, vc) and increases on (vc, ∞), with g(vc) < 0.
    let mut a = vc;
    while g(a) <= 0.0 {
        a *= 0.5;
    }
    let lower = bisect_root(&g, a, vc);
    let upper = bisect_root(&g, vc, p_star);
    Ok(EquilibriumSet::Points([lower, upper].into_iter().map(|v| Equilibrium { v, s: p_star - v }).collect()))
}

fn bisect_root(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let sign_lo = g(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) > 0.0) == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The unique endemic state with susceptible level `s`: `V = (ρ/(βS))^{1/γ}`.
pub fn ode_endemic_for_s(sys: &OdeSystem, s: f64) -> Result<Equilibrium> {
    let (rho, beta, gamma) = sys.require_single()?;
    if !(gamma > 0.0) {
        return Err(SisError::precondition("needs gamma > 0"));
    }
    if !(s > 0.0) {
        return Err(SisError::precondition(format!("susceptible level must be positive, got {s}")));
    }
    if !(beta > 0.0) {
        return Err(SisError::precondition("needs beta > 0"));
    }
    Ok(Equilibrium { v: (rho / (beta * s)).powf(1.0 / gamma), s })
}

/// Blow-up time of `v' = −ρv + βv^p`, or `None` when the solution decays.
pub fn ode_blowup_exact(rho: f64, beta: f64, p: f64, v0: f64) -> Result<Option<f64>> {
    if !(p > 1.0) {
        return Err(SisError::precondition(format!("blow-up needs p > 1, got {p}")));
    }
    if !(v0 > 0.0) || !(beta > 0.0) || !(rho >= 0.0) {
        return Err(SisError::input("need v0 > 0, beta > 0, rho >= 0"));
    }
    let q = beta * v0.powf(p - 1.0);
    if rho == 0.0 {
        return Ok(Some(1.0 / ((p - 1.0) * q)));
    }
    if q <= rho {
        return Ok(None);
    }
    Ok(Some(-(-rho / q).ln_1p() / (rho * (p - 1.0))))
}
