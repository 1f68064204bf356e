//! Endemic steady states.
//!
//! Bilinear case (γ ≡ 0): S* is the root of R ↦ s(Ψ_R) and v* is the Perron
//! vector of Ψ_{S*}, scaled to the requested infected mass.
//!
//! Superlinear case: for fixed R = S*, the map Φ_R projects a direction c
//! onto the level set {u : s(Ψ_{(u,R)}) = 0} along its ray, u = θ*c, and
//! returns the normalised Perron vector of Ψ_{(θ*c, R)}. A fixed point c
//! yields v* = θ*c. The Picard iterate is finished with a Newton polish on
//! the discrete stationary equation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::coefficients::ModelCoefficients;
use crate::dynamics::{integrate_unchecked, IntegratorConfig, Scheme};
use crate::error::{Result, SisError};
use crate::grid::{Grid, State};
use crate::operators::{assemble_psi_r, assemble_psi_ur, infection_unchecked, DiffusionStencil};
use crate::spectral::{
    bisect, check_direction, find_s_star_detailed, ray_spectrum, spectral_bound, theta_star_bound, SpectralResult,
    DEFAULT_TOL, ROOT_TOL,
};

/// Cap on θ when searching for a sign change along a ray.
pub const THETA_CAP: f64 = 1e12;
/// Residual tolerance for accepting a steady state.
pub const STEADY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Bilinear,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub v_star: Vec<f64>,
    pub s_star: f64,
    pub residual_pde: f64,
    pub residual_balance: f64,
    pub solver: SolverTag,
    /// Scale applied to the unit-norm Perron direction (θ* on the ray).
    pub kappa: f64,
    pub iterations: usize,
    /// Last W^{1,1} increment of the fixed-point iteration.
    pub last_increment: f64,
    /// γ outside the range where the fixed-point construction is proven.
    pub exploratory: bool,
}

/// h-weighted ℓ¹ norm of the stationary residual and the S-balance defect.
pub fn steady_residuals(v: &[f64], s: f64, coeffs: &ModelCoefficients, grid: &Grid) -> Result<(f64, f64)> {
    grid.check_len(v, "v")?;
    let diff = DiffusionStencil::new(coeffs, grid).apply(v);
    let inf = infection_unchecked(v, s, coeffs, grid);
    let res: Vec<f64> = (0..v.len()).map(|i| diff[i] - coeffs.rho[i] * v[i] + inf[i]).collect();
    let rho_v: f64 = grid.h() * v.iter().zip(&coeffs.rho).map(|(a, b)| a * b).sum::<f64>();
    Ok((grid.l1(&res), (rho_v - grid.integrate(&inf)).abs()))
}

/// Bilinear endemic state with `∫v* = v_total`.
pub fn endemic_bilinear(coeffs: &ModelCoefficients, grid: &Grid, v_total: f64) -> Result<SteadyState> {
    if !(v_total > 0.0) || !v_total.is_finite() {
        return Err(SisError::input(format!("V* must be positive, got {v_total}")));
    }
    let root = find_s_star_detailed(coeffs, grid, None)?;
    let kappa = v_total / grid.integrate(&root.spectral.eigvec);
    let v_star: Vec<f64> = root.spectral.eigvec.iter().map(|x| kappa * x).collect();
    let (residual_pde, residual_balance) = steady_residuals(&v_star, root.s_star, coeffs, grid)?;
    if residual_pde > STEADY_TOL * (1.0 + v_total) || residual_balance > STEADY_TOL * (1.0 + v_total) {
        return Err(SisError::Convergence {
            what: "bilinear steady state",
            iterations: root.bisection_steps,
            residual: residual_pde.max(residual_balance),
        });
    }
    Ok(SteadyState {
        v_star,
        s_star: root.s_star,
        residual_pde,
        residual_balance,
        solver: SolverTag::Bilinear,
        kappa,
        iterations: root.bisection_steps,
        last_increment: 0.0,
        exploratory: false,
    })
}

/// Output of one application of Φ_R.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiOutput {
    /// Perron vector of Ψ_{(θ*c, R)}, unit W^{1,1} norm.
    pub c: Vec<f64>,
    /// Ray scale θ*; `None` for γ ≡ 0 where the operator ignores u.
    pub theta: Option<f64>,
}

pub fn phi_r(c: &[f64], coeffs: &ModelCoefficients, grid: &Grid, r_value: f64) -> Result<PhiOutput> {
    let (out, _) = phi_r_guess(c, coeffs, grid, r_value, None)?;
    Ok(out)
}

fn phi_r_guess(
    c: &[f64],
    coeffs: &ModelCoefficients,
    grid: &Grid,
    r_value: f64,
    guess: Option<&[f64]>,
) -> Result<(PhiOutput, SpectralResult)> {
    check_direction(grid, c)?;
    let norm = grid.w11(c);
    if norm > 1.0 + 1e-9 {
        return Err(SisError::precondition(format!("direction must have W11 norm in (0, 1], got {norm}")));
    }
    if !(r_value > 0.0) || !r_value.is_finite() {
        return Err(SisError::input(format!("R must be positive, got {r_value}")));
    }
    if coeffs.gamma_is_zero() {
        let res = spectral_bound(&assemble_psi_r(coeffs, grid, r_value)?, grid, DEFAULT_TOL)?;
        return Ok((PhiOutput { c: res.eigvec.clone(), theta: None }, res));
    }
    if !(coeffs.min_beta() > 0.0) {
        return Err(SisError::precondition("theorem hypothesis violated: beta must be strictly positive"));
    }
    let at_zero = ray_spectrum(coeffs, grid, c, r_value, 0.0, guess)?;
    if !(at_zero.s < 0.0) {
        return Err(SisError::precondition(format!(
            "s(Psi^1) = {} is not negative; the recovery rate must not vanish",
            at_zero.s
        )));
    }
    let mut hi = if coeffs.bounds.gamma_max >= 1.0 {
        theta_star_bound(coeffs, grid, r_value)? / grid.l1(c).max(f64::MIN_POSITIVE)
    } else {
        1.0
    };
    let mut guess_hi = Some(at_zero.eigvec.clone());
    loop {
        let res = ray_spectrum(coeffs, grid, c, r_value, hi, guess_hi.as_deref())?;
        if res.s > 0.0 {
            break;
        }
        if hi >= THETA_CAP {
            return Err(SisError::NoSignChange { cap: THETA_CAP });
        }
        hi = (2.0 * hi).min(THETA_CAP);
        guess_hi = Some(res.eigvec);
    }
    let (theta, res, _) = bisect(0.0, hi, hi, |t, g| ray_spectrum(coeffs, grid, c, r_value, t, g.or(guess)))?;
    Ok((PhiOutput { c: res.eigvec.clone(), theta: Some(theta) }, res))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// ω in c ← (1 − ω)c + ωΦ_R(c).
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub newton_polish: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { damping: 1.0, tol: 1e-9, max_iter: 500, newton_polish: true }
    }
}

pub fn endemic_fixed_point(
    coeffs: &ModelCoefficients,
    grid: &Grid,
    r_value: f64,
    c0: Option<&[f64]>,
) -> Result<SteadyState> {
    endemic_fixed_point_with(coeffs, grid, r_value, c0, FixedPointOptions::default())
}

pub fn endemic_fixed_point_with(
    coeffs: &ModelCoefficients,
    grid: &Grid,
    r_value: f64,
    c0: Option<&[f64]>,
    opts: FixedPointOptions,
) -> Result<SteadyState> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(SisError::input(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    if !(r_value > 0.0) || !r_value.is_finite() {
        return Err(SisError::input(format!("R must be positive, got {r_value}")));
    }
    if coeffs.gamma_is_zero() {
        return bilinear_at_r(coeffs, grid, r_value);
    }
    let exploratory = !coeffs.gamma.iter().all(|&g| g == 1.0);

    let mut c = match c0 {
        Some(c) => {
            check_direction(grid, c)?;
            let norm = grid.w11(c);
            c.iter().map(|x| x / norm).collect()
        }
        None => vec![1.0 / grid.w11(&vec![1.0; grid.n_cells()]); grid.n_cells()],
    };
    let mut guess: Option<Vec<f64>> = None;
    let mut increment = f64::INFINITY;
    let mut converged = None;
    for k in 1..=opts.max_iter {
        let (out, res) = phi_r_guess(&c, coeffs, grid, r_value, guess.as_deref())?;
        let theta = out.theta.expect("theta is defined for gamma not identically zero");
        let mut next: Vec<f64> =
            c.iter().zip(&out.c).map(|(a, b)| (1.0 - opts.damping) * a + opts.damping * b).collect();
        let norm = grid.w11(&next);
        next.iter_mut().for_each(|x| *x /= norm);
        let diff: Vec<f64> = next.iter().zip(&c).map(|(a, b)| a - b).collect();
        increment = grid.w11(&diff);
        guess = Some(res.eigvec);
        if increment <= opts.tol {
            let v: Vec<f64> = out.c.iter().map(|x| theta * x).collect();
            converged = Some((v, theta, k));
            break;
        }
        c = next;
    }
    let Some((mut v_star, theta, iterations)) = converged else {
        return Err(SisError::Convergence {
            what: "fixed-point iteration",
            iterations: opts.max_iter,
            residual: increment,
        });
    };
    if opts.newton_polish {
        newton_polish(&mut v_star, r_value, coeffs, grid);
    }
    let (residual_pde, residual_balance) = steady_residuals(&v_star, r_value, coeffs, grid)?;
    if residual_pde > STEADY_TOL || residual_balance > STEADY_TOL {
        return Err(SisError::Internal(format!(
            "fixed point fails the residual check: pde {residual_pde:.3e}, balance {residual_balance:.3e}"
        )));
    }
    Ok(SteadyState {
        v_star,
        s_star: r_value,
        residual_pde,
        residual_balance,
        solver: SolverTag::FixedPoint,
        kappa: theta,
        iterations,
        last_increment: increment,
        exploratory,
    })
}

/// γ ≡ 0: only R = S* admits an endemic state; return its unit direction.
fn bilinear_at_r(coeffs: &ModelCoefficients, grid: &Grid, r_value: f64) -> Result<SteadyState> {
    let res = spectral_bound(&assemble_psi_r(coeffs, grid, r_value)?, grid, DEFAULT_TOL)?;
    if res.s.abs() > ROOT_TOL {
        return Err(SisError::precondition(format!(
            "s(Psi_R) = {:.6e} != 0 for gamma ≡ 0 at this R; the bilinear model has a single admissible R",
            res.s
        )));
    }
    let (residual_pde, residual_balance) = steady_residuals(&res.eigvec, r_value, coeffs, grid)?;
    Ok(SteadyState {
        v_star: res.eigvec,
        s_star: r_value,
        residual_pde,
        residual_balance,
        solver: SolverTag::FixedPoint,
        kappa: 1.0,
        iterations: 1,
        last_increment: 0.0,
        exploratory: false,
    })
}

/// Newton iterations on `A v − ρv + R h β v^{1+γ} = 0`, accepted only while
/// they reduce the residual and keep v positive.
fn newton_polish(v: &mut Vec<f64>, r_value: f64, coeffs: &ModelCoefficients, grid: &Grid) {
    let n = v.len();
    let a = DiffusionStencil::new(coeffs, grid).to_dense();
    let h = grid.h();
    let residual_vec = |v: &[f64]| -> Vec<f64> {
        let av = crate::operators::matvec(&a, v);
        let inf = infection_unchecked(v, r_value, coeffs, grid);
        (0..n).map(|i| av[i] - coeffs.rho[i] * v[i] + inf[i]).collect()
    };
    let mut f = residual_vec(v);
    let mut norm = grid.l1(&f);
    for _ in 0..20 {
        if norm <= 1e-14 {
            break;
        }
        let mut jac = a.clone();
        for i in 0..n {
            jac[(i, i)] -= coeffs.rho[i];
        }
        for j in 0..n {
            let g = coeffs.gamma[j];
            let w = r_value * h * (1.0 + g) * v[j].powf(g);
            for i in 0..n {
                jac[(i, j)] += coeffs.beta[(i, j)] * w;
            }
        }
        let Some(delta) = jac.lu().solve(&DVector::from_column_slice(&f)) else {
            return;
        };
        let trial: Vec<f64> = (0..n).map(|i| v[i] - delta[i]).collect();
        if trial.iter().any(|x| !(*x > 0.0)) {
            return;
        }
        let f_trial = residual_vec(&trial);
        let norm_trial = grid.l1(&f_trial);
        if !(norm_trial < norm) {
            return;
        }
        *v = trial;
        f = f_trial;
        norm = norm_trial;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub residual_pde: f64,
    pub residual_balance: f64,
    /// ℓ¹ distance (h-weighted in v, plus |ΔS|) after integrating for t = 1.
    pub drift: f64,
    pub tolerance: f64,
    pub pde_ok: bool,
    pub balance_ok: bool,
    pub dynamic_ok: bool,
    /// Set when the dynamic check could not run (e.g. a solver error).
    pub dynamic_error: Option<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.pde_ok && self.balance_ok && self.dynamic_ok
    }
}

/// Independent check of a steady state: residuals from a fresh operator
/// assembly plus a short imex_cn run (dt = 1e-3, t = 1).
pub fn verify_steady_state(ss: &SteadyState, coeffs: &ModelCoefficients, grid: &Grid) -> VerificationReport {
    let n = grid.n_cells();
    let mass = grid.l1(&ss.v_star);
    let tolerance = STEADY_TOL * (1.0 + mass);
    let (residual_pde, residual_balance) = match fresh_residuals(ss, coeffs, grid) {
        Ok(r) => r,
        Err(e) => {
            return VerificationReport {
                residual_pde: f64::NAN,
                residual_balance: f64::NAN,
                drift: f64::NAN,
                tolerance,
                pde_ok: false,
                balance_ok: false,
                dynamic_ok: false,
                dynamic_error: Some(e.to_string()),
            }
        }
    };
    let mut report = VerificationReport {
        residual_pde,
        residual_balance,
        drift: f64::NAN,
        tolerance,
        pde_ok: residual_pde <= tolerance,
        balance_ok: residual_balance <= tolerance,
        dynamic_ok: false,
        dynamic_error: None,
    };
    let run = State::new(grid, ss.v_star.clone(), ss.s_star).and_then(|s0| {
        let cfg = IntegratorConfig::new(1e-3, 1.0, Scheme::ImexCn);
        integrate_unchecked(&s0, coeffs, grid, &cfg).map(|tr| (s0, tr))
    });
    match run {
        Ok((s0, tr)) => {
            let end = tr.last();
            let dv: Vec<f64> = (0..n).map(|i| end.v[i] - s0.v[i]).collect();
            report.drift = grid.l1(&dv) + (end.s - s0.s).abs();
            report.dynamic_ok = report.drift <= 1e-6;
        }
        Err(e) => report.dynamic_error = Some(e.to_string()),
    }
    report
}

/// Residuals via the assembled operator Ψ_{(v,S)} applied to v.
fn fresh_residuals(ss: &SteadyState, coeffs: &ModelCoefficients, grid: &Grid) -> Result<(f64, f64)> {
    let op = assemble_psi_ur(coeffs, grid, &ss.v_star, ss.s_star)?;
    let res = op.apply(&ss.v_star);
    let h = grid.h();
    let weights =
        DVector::from_iterator(grid.n_cells(), ss.v_star.iter().zip(&coeffs.gamma).map(|(v, g)| v.powf(1.0 + g)));
    let inflow: f64 = h * h * (&coeffs.beta * weights).sum();
    let recovered: f64 = h * ss.v_star.iter().zip(&coeffs.rho).map(|(a, b)| a * b).sum::<f64>();
    Ok((grid.l1(&res), (recovered - ss.s_star * inflow).abs()))
}

/// `(1 + γ_j) v_j^{γ_j}`, the derivative weights of `v^{1+γ}`.
pub(crate) fn infection_jacobian_weights(v: &[f64], coeffs: &ModelCoefficients) -> Vec<f64> {
    v.iter().zip(&coeffs.gamma).map(|(&x, &g)| (1.0 + g) * x.powf(g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{delta_gamma, find_s_star};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn consts(n: usize, rho: f64, beta: f64, gamma: f64) -> (Grid, ModelCoefficients) {
        let g = Grid::new(n).unwrap();
        let c = ModelCoefficients::constant(&g, 1.0, rho, beta, gamma).unwrap();
        (g, c)
    }

    fn perturbed(n: usize, gamma: f64) -> (Grid, ModelCoefficients) {
        let g = Grid::new(n).unwrap();
        let xs = g.centers().to_vec();
        let c = ModelCoefficients::from_samples(
            &g,
            g.sample(|x| 1.0 + 0.2 * (std::f64::consts::PI * x).cos()),
            g.sample(|x| 1.0 + 0.2 * (2.0 * x).sin()),
            DMatrix::from_fn(n, n, |i, j| 2.0 * (1.0 + 0.2 * (xs[i] - 2.0 * xs[j]).cos())),
            vec![gamma; n],
            &Default::default(),
        )
        .unwrap();
        (g, c)
    }

    #[test]
    fn bilinear_constant_closed_form() {
        let (g, c) = consts(32, 1.0, 2.0, 0.0);
        for vt in [1.0, 3.0, 7.0] {
            let ss = endemic_bilinear(&c, &g, vt).unwrap();
            assert_abs_diff_eq!(ss.s_star, 0.5, epsilon = 1e-8);
            assert!(ss.v_star.iter().all(|&v| (v - vt).abs() < 1e-8));
            assert!(ss.residual_pde <= 1e-8 && ss.residual_balance <= 1e-10);
        }
        let (g0, c0) = consts(8, 0.0, 2.0, 0.0);
        assert!(matches!(endemic_bilinear(&c0, &g0, 1.0), Err(SisError::Precondition(_))));
    }

    #[test]
    fn bilinear_state_scales_linearly() {
        let (g, c) = perturbed(32, 0.0);
        let a = endemic_bilinear(&c, &g, 1.0).unwrap();
        let b = endemic_bilinear(&c, &g, 7.0).unwrap();
        assert_eq!(a.s_star, b.s_star);
        for (x, y) in a.v_star.iter().zip(&b.v_star) {
            assert_abs_diff_eq!(7.0 * x, *y, epsilon = 1e-10);
        }
    }

    #[test]
    fn phi_constant_fixed_point() {
        let (g, c) = consts(16, 1.0, 2.0, 1.0);
        let out = phi_r(&[1.0; 16], &c, &g, 1.0).unwrap();
        assert_abs_diff_eq!(out.theta.unwrap(), 0.5, epsilon = 1e-8);
        assert!(out.c.iter().all(|&x| (x - 1.0).abs() < 1e-8));
    }

    #[test]
    fn phi_is_constant_for_bilinear() {
        let (g, c) = perturbed(16, 0.0);
        let a = phi_r(&g.sample(|x| 0.5 + x).iter().map(|v| v / 3.0).collect::<Vec<_>>(), &c, &g, 0.7).unwrap();
        let b = phi_r(&[0.2; 16], &c, &g, 0.7).unwrap();
        assert!(a.theta.is_none());
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn phi_depends_only_on_the_ray() {
        let (g, c) = perturbed(16, 1.0);
        let dir = g.sample(|x| 1.0 + 0.5 * x * x);
        let norm = g.w11(&dir);
        let unit: Vec<f64> = dir.iter().map(|v| v / norm).collect();
        let base = phi_r(&unit, &c, &g, 1.0).unwrap();
        for lambda in [0.25, 0.6] {
            let scaled: Vec<f64> = unit.iter().map(|v| lambda * v).collect();
            let out = phi_r(&scaled, &c, &g, 1.0).unwrap();
            assert_abs_diff_eq!(out.theta.unwrap() * lambda, base.theta.unwrap(), epsilon = 1e-7);
            for (a, b) in out.c.iter().zip(&base.c) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn phi_preconditions() {
        let (g, c) = consts(8, 1.0, 2.0, 1.0);
        assert!(matches!(phi_r(&[0.0; 8], &c, &g, 1.0), Err(SisError::Precondition(_))));
        assert!(phi_r(&[5.0; 8], &c, &g, 1.0).is_err());
        let (g, c0) = consts(8, 1.0, 0.0, 1.0);
        assert!(matches!(phi_r(&[1.0; 8], &c0, &g, 1.0), Err(SisError::Precondition(_))));
    }

    #[test]
    fn quadratic_constant_closed_form() {
        let (g, c) = consts(16, 1.0, 2.0, 1.0);
        for r in [0.5, 1.0, 2.0] {
            let ss = endemic_fixed_point(&c, &g, r, None).unwrap();
            let expected = 1.0 / (r * 2.0);
            assert!(ss.v_star.iter().all(|&v| (v - expected).abs() < 1e-7), "R = {r}: {:?}", ss.v_star);
            assert_eq!(ss.s_star, r);
            assert!(ss.iterations <= 3);
            assert!(!ss.exploratory);
        }
    }

    #[test]
    fn quadratic_nonconstant_converges_within_bound() {
        let (g, c) = perturbed(32, 1.0);
        let ss = endemic_fixed_point(&c, &g, 1.0, None).unwrap();
        assert!(ss.residual_pde <= 1e-7);
        assert!(ss.v_star.iter().all(|&v| v > 0.0));
        let bound = (c.bounds.r + 1.0) / (1.0 * delta_gamma(1.0) * c.min_beta());
        assert!(g.l1(&ss.v_star) <= bound);
        let report = verify_steady_state(&ss, &c, &g);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn exploratory_gamma_is_labelled() {
        let (g, c) = perturbed(16, 0.5);
        let ss = endemic_fixed_point(&c, &g, 1.0, None).unwrap();
        assert!(ss.exploratory);
        assert!(ss.residual_pde <= 1e-7);
    }

    #[test]
    fn bilinear_input_to_fixed_point_solver() {
        let (g, c) = perturbed(16, 0.0);
        let s_star = find_s_star(&c, &g, None).unwrap();
        let ss = endemic_fixed_point(&c, &g, s_star, None).unwrap();
        let bil = endemic_bilinear(&c, &g, 1.0).unwrap();
        let scale = g.w11(&bil.v_star);
        for (a, b) in ss.v_star.iter().zip(&bil.v_star) {
            assert_abs_diff_eq!(*a, b / scale, epsilon = 1e-7);
        }
        assert!(matches!(endemic_fixed_point(&c, &g, 2.0 * s_star, None), Err(SisError::Precondition(_))));
    }

    #[test]
    fn verification_flags() {
        let (g, c) = consts(16, 1.0, 2.0, 0.0);
        let ss = endemic_bilinear(&c, &g, 3.0).unwrap();
        assert!(verify_steady_state(&ss, &c, &g).passed());

        let (g1, c1) = consts(16, 1.0, 2.0, 1.0);
        let mut bad = endemic_fixed_point(&c1, &g1, 1.0, None).unwrap();
        bad.v_star.iter_mut().for_each(|v| *v *= 1.1);
        let rep = verify_steady_state(&bad, &c1, &g1);
        assert!(!rep.pde_ok && !rep.passed());

        let trivial = SteadyState {
            v_star: vec![0.0; 16],
            s_star: 2.0,
            residual_pde: 0.0,
            residual_balance: 0.0,
            solver: SolverTag::FixedPoint,
            kappa: 0.0,
            iterations: 0,
            last_increment: 0.0,
            exploratory: false,
        };
        let rep = verify_steady_state(&trivial, &c1, &g1);
        assert!(rep.passed());
        assert_eq!((rep.residual_pde, rep.residual_balance), (0.0, 0.0));
    }

    #[test]
    fn balance_is_the_integrated_pde_residual() {
        let (g, c) = perturbed(24, 1.0);
        let v = g.sample(|x| 0.3 + 0.1 * x);
        let (_, balance) = steady_residuals(&v, 0.9, &c, &g).unwrap();
        let diff = DiffusionStencil::new(&c, &g).apply(&v);
        let inf = infection_unchecked(&v, 0.9, &c, &g);
        let res: Vec<f64> = (0..24).map(|i| diff[i] - c.rho[i] * v[i] + inf[i]).collect();
        assert_abs_diff_eq!(balance, g.integrate(&res).abs(), epsilon = 1e-12);
    }

    #[test]
    fn mesh_convergence_of_threshold_and_mass() {
        let s: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let (g, c) = perturbed(n, 0.0);
                find_s_star(&c, &g, None).unwrap()
            })
            .collect();
        assert!((s[0] - s[1]).abs() / (s[1] - s[2]).abs() > 3.0, "{s:?}");
        let m: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let (g, c) = perturbed(n, 1.0);
                g.l1(&endemic_fixed_point(&c, &g, 1.0, None).unwrap().v_star)
            })
            .collect();
        assert!((m[0] - m[1]).abs() / (m[1] - m[2]).abs() > 3.0, "{m:?}");
    }
}
