//! Perron spectral bound of Metzler matrices and the root-finding built on it.
//!
//! For a Metzler matrix `A` and any `μ > s(A)` the resolvent `(μI − A)⁻¹` is
//! entrywise nonnegative with Perron root `1/(μ − s(A))`, so power iteration
//! on the resolvent converges to the same positive eigenvector as power
//! iteration on `A + σI`. The shift is re-chosen every step from the
//! Collatz–Wielandt bounds
//!
//! ```text
//! min_i (Ax)_i / x_i  ≤  s(A)  ≤  max_i (Ax)_i / x_i      (x > 0)
//! ```
//!
//! which keep `μ` strictly above `s(A)` and shrink to it as `x` converges.
//! [`shifted_power_iteration`] is the plain `A + σI` iteration, kept as an
//! independent check.

use nalgebra::DMatrix;

use crate::coefficients::ModelCoefficients;
use crate::error::{Result, SisError};
use crate::grid::Grid;
use crate::operators::{assemble_psi_r, assemble_psi_ur, is_metzler, matvec, OperatorMatrix};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Root tolerance on s for the bisections below.
pub const ROOT_TOL: f64 = 1e-8;
/// Relative bracket width at which a bisection stops.
pub const BRACKET_REL_WIDTH: f64 = 1e-10;
/// ε in the `r + ε` sign-change bounds.
pub const BOUND_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub s: f64,
    /// Strictly positive, normalised to unit discrete W^{1,1} norm.
    pub eigvec: Vec<f64>,
    pub iterations: usize,
    /// h-weighted ℓ¹ norm of `A·eigvec − s·eigvec`.
    pub residual: f64,
}

/// Perron pair of a plain matrix, eigenvector normalised to unit ℓ¹ norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub s: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// ℓ¹ norm of `A·x − s·x` for the ℓ¹-normalised x.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Spectral bound and Perron vector of a Metzler operator matrix.
pub fn spectral_bound(op: &OperatorMatrix, grid: &Grid, tol: f64) -> Result<SpectralResult> {
    spectral_bound_from(op, grid, tol, None)
}

/// As [`spectral_bound`], starting the iteration from `guess` (e.g. the
/// eigenvector of a nearby operator).
pub fn spectral_bound_from(
    op: &OperatorMatrix,
    grid: &Grid,
    tol: f64,
    guess: Option<&[f64]>,
) -> Result<SpectralResult> {
    if op.dim() != grid.n_cells() {
        return Err(SisError::input(format!("operator has dimension {}, grid has {} cells", op.dim(), grid.n_cells())));
    }
    let pair = perron(&op.a, guess, PerronOptions { tol, ..Default::default() })?;
    let norm = grid.w11(&pair.vector);
    let eigvec: Vec<f64> = pair.vector.iter().map(|x| x / norm).collect();
    let ax = op.apply(&eigvec);
    let resid: Vec<f64> = ax.iter().zip(&eigvec).map(|(a, x)| a - pair.s * x).collect();
    Ok(SpectralResult { s: pair.s, residual: grid.l1(&resid), eigvec, iterations: pair.iterations })
}

/// Perron root and vector of a Metzler matrix by shift-updated resolvent iteration.
pub fn perron(a: &DMatrix<f64>, guess: Option<&[f64]>, opts: PerronOptions) -> Result<PerronPair> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(SisError::input("Perron iteration needs a nonempty square matrix"));
    }
    if !is_metzler(a) {
        return Err(SisError::precondition(
            "matrix has a negative off-diagonal entry; the Perron bound needs a Metzler matrix",
        ));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SisError::input("matrix has non-finite entries"));
    }

    let mut x = match guess {
        Some(g) if g.len() == n && g.iter().all(|&v| v > 0.0 && v.is_finite()) => g.to_vec(),
        _ => vec![1.0; n],
    };
    normalize_l1(&mut x);

    // Row-sum bound: s(A) ≤ max_i Σ_j a_ij for Metzler A.
    let row_bound = (0..n).map(|i| a.row(i).sum()).fold(f64::NEG_INFINITY, f64::max);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    let mut ax = matvec(a, &x);
    let (mut lo, mut hi) = collatz_wielandt(&x, &ax);
    let mut s = rayleigh_l1(&x, &ax);
    let mut mu = hi.min(row_bound) + (hi - lo).max(1.0);
    let mut residual = f64::INFINITY;

    for it in 1..=opts.max_iter {
        let mut shifted = -a.clone();
        for i in 0..n {
            shifted[(i, i)] += mu;
        }
        let lu = shifted.lu();
        let y = match lu.solve(&nalgebra::DVector::from_column_slice(&x)) {
            Some(y) if y.iter().all(|v| v.is_finite()) => y,
            _ => {
                // μ hit an eigenvalue to machine precision; back off.
                mu += 1e-8 * (1.0 + mu.abs());
                continue;
            }
        };
        x = y.iter().map(|v| v.max(0.0)).collect();
        if !normalize_l1(&mut x) {
            return Err(SisError::Internal("resolvent iterate collapsed to zero".into()));
        }

        ax = matvec(a, &x);
        let s_new = rayleigh_l1(&x, &ax);
        residual = ax.iter().zip(&x).map(|(p, q)| (p - s_new * q).abs()).sum::<f64>();
        let threshold = opts.tol * (s_new.abs() + 1.0);
        // Roundoff floor of the residual scales with the matrix entries.
        let floor = 64.0 * f64::EPSILON * scale;
        let converged = residual <= threshold.max(floor) && (s_new - s).abs() <= threshold;
        s = s_new;
        if converged {
            return Ok(PerronPair { s, vector: x, iterations: it, residual });
        }
        (lo, hi) = collatz_wielandt(&x, &ax);
        let upper = if hi.is_finite() { hi.max(s) } else { mu };
        let gap = if lo.is_finite() { (hi - lo).abs() } else { 1.0 };
        mu = upper + gap.max(1e-9 * (1.0 + s.abs()));
    }
    Err(SisError::Convergence { what: "Perron iteration", iterations: opts.max_iter, residual })
}

/// Plain power iteration on `A + σI` with `σ = max_i |a_ii| + 1`.
pub fn shifted_power_iteration(a: &DMatrix<f64>, opts: PerronOptions) -> Result<PerronPair> {
    let n = a.nrows();
    if !is_metzler(a) {
        return Err(SisError::precondition(
            "matrix has a negative off-diagonal entry; the Perron bound needs a Metzler matrix",
        ));
    }
    let sigma = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max) + 1.0;
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += sigma;
    }
    let mut x = vec![1.0; n];
    normalize_l1(&mut x);
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut y = matvec(&m, &x);
        let lambda_new = y.iter().sum::<f64>() / x.iter().sum::<f64>();
        normalize_l1(&mut y);
        x = y;
        let s = lambda_new - sigma;
        let ax = matvec(a, &x);
        residual = ax.iter().zip(&x).map(|(p, q)| (p - s * q).abs()).sum();
        let threshold = opts.tol * (s.abs() + 1.0);
        if residual <= threshold && (lambda_new - lambda).abs() <= threshold {
            return Ok(PerronPair { s, vector: x, iterations: it, residual });
        }
        lambda = lambda_new;
    }
    Err(SisError::Convergence { what: "shifted power iteration", iterations: opts.max_iter, residual })
}

fn normalize_l1(x: &mut [f64]) -> bool {
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    true
}

fn rayleigh_l1(x: &[f64], ax: &[f64]) -> f64 {
    ax.iter().sum::<f64>() / x.iter().sum::<f64>()
}

/// Collatz–Wielandt ratios over the strictly positive entries of `x`.
fn collatz_wielandt(x: &[f64], ax: &[f64]) -> (f64, f64) {
    x.iter()
        .zip(ax)
        .filter(|(xi, _)| **xi > 0.0)
        .map(|(xi, axi)| axi / xi)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// Outcome of the threshold search for the bilinear operator family.
#[derive(Debug, Clone, PartialEq)]
pub struct SStar {
    pub s_star: f64,
    pub spectral: SpectralResult,
    pub bisection_steps: usize,
    /// Upper end of the bracket actually used.
    pub r_hi: f64,
}

/// The unique R* ≥ 0 with s(Ψ_{R*}) = 0 (γ ≡ 0).
pub fn find_s_star(coeffs: &ModelCoefficients, grid: &Grid, bracket_hint: Option<(f64, f64)>) -> Result<f64> {
    Ok(find_s_star_detailed(coeffs, grid, bracket_hint)?.s_star)
}

pub fn find_s_star_detailed(
    coeffs: &ModelCoefficients,
    grid: &Grid,
    bracket_hint: Option<(f64, f64)>,
) -> Result<SStar> {
    if !coeffs.gamma_is_zero() {
        return Err(SisError::precondition("the susceptible threshold S* is defined for the bilinear case gamma ≡ 0"));
    }
    if coeffs.rho_is_zero() {
        return Err(SisError::precondition("theorem hypothesis violated: recovery rate must satisfy rho ≢ 0"));
    }
    let rows = coeffs.beta_row_integrals(grid);
    let min_row = rows.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_row > 0.0) {
        return Err(SisError::precondition("theorem hypothesis violated: ∫β(x, y) dy > 0 is required for every x"));
    }
    let r_bound = (coeffs.bounds.r + BOUND_EPSILON) / min_row;
    let s_at = |r: f64, guess: Option<&[f64]>| -> Result<SpectralResult> {
        spectral_bound_from(&assemble_psi_r(coeffs, grid, r)?, grid, DEFAULT_TOL, guess)
    };

    let (mut lo, mut hi) = (0.0, r_bound);
    if let Some((a, b)) = bracket_hint {
        if a >= 0.0 && b > a && s_at(a, None)?.s < 0.0 && s_at(b, None)?.s > 0.0 {
            (lo, hi) = (a, b);
        }
    }
    let s_lo = s_at(lo, None)?;
    let s_hi = s_at(hi, Some(&s_lo.eigvec))?;
    if !(s_lo.s < 0.0 && s_hi.s > 0.0 && s_lo.s < s_hi.s) {
        return Err(SisError::Internal(format!("bracket failure: s(Psi_{lo}) = {}, s(Psi_{hi}) = {}", s_lo.s, s_hi.s)));
    }
    let r_hi = hi;
    let (s_star, spectral, steps) = bisect(lo, hi, r_hi, s_at)?;
    Ok(SStar { s_star, spectral, bisection_steps: steps, r_hi })
}

/// Bisection on an increasing spectral-bound function until `|s| ≤ ROOT_TOL`
/// and the bracket is narrower than `BRACKET_REL_WIDTH · scale`, finished by
/// one secant step on the final bracket. The evaluated point with the
/// smallest |s| is returned.
pub(crate) fn bisect(
    mut lo: f64,
    mut hi: f64,
    scale: f64,
    mut eval: impl FnMut(f64, Option<&[f64]>) -> Result<SpectralResult>,
) -> Result<(f64, SpectralResult, usize)> {
    let mut guess: Option<Vec<f64>> = None;
    let (mut s_lo, mut s_hi) = (f64::NAN, f64::NAN);
    for step in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let res = eval(mid, guess.as_deref())?;
        let width = hi - lo;
        let narrow = width <= BRACKET_REL_WIDTH * scale;
        if (res.s.abs() <= ROOT_TOL && narrow) || width <= f64::EPSILON * scale.max(mid.abs()) {
            if res.s == 0.0 || !(s_lo.is_finite() && s_hi.is_finite()) {
                return Ok((mid, res, step));
            }
            // Secant on whichever half-bracket contains the root.
            let (a, sa, b, sb) = if res.s < 0.0 { (mid, res.s, hi, s_hi) } else { (lo, s_lo, mid, res.s) };
            let x = a - sa * (b - a) / (sb - sa);
            if x > a && x < b {
                let sec = eval(x, Some(&res.eigvec))?;
                if sec.s.abs() < res.s.abs() {
                    return Ok((x, sec, step + 1));
                }
            }
            return Ok((mid, res, step));
        }
        if res.s < 0.0 {
            lo = mid;
            s_lo = res.s;
        } else {
            hi = mid;
            s_hi = res.s;
        }
        guess = Some(res.eigvec);
    }
    Err(SisError::Convergence { what: "spectral bisection", iterations: 200, residual: hi - lo })
}

/// s(Ψ_{(θc, R)}): the spectral bound along the ray through `c`.
pub fn spectral_bound_along_ray(coeffs: &ModelCoefficients, grid: &Grid, c: &[f64], r: f64, theta: f64) -> Result<f64> {
    Ok(ray_spectrum(coeffs, grid, c, r, theta, None)?.s)
}

pub(crate) fn ray_spectrum(
    coeffs: &ModelCoefficients,
    grid: &Grid,
    c: &[f64],
    r: f64,
    theta: f64,
    guess: Option<&[f64]>,
) -> Result<SpectralResult> {
    check_direction(grid, c)?;
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(SisError::input(format!("theta must be nonnegative, got {theta}")));
    }
    let u: Vec<f64> = c.iter().map(|x| theta * x).collect();
    spectral_bound_from(&assemble_psi_ur(coeffs, grid, &u, r)?, grid, DEFAULT_TOL, guess)
}

pub(crate) fn check_direction(grid: &Grid, c: &[f64]) -> Result<()> {
    grid.check_len(c, "direction c")?;
    if c.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(SisError::input("direction c must be nonnegative and finite"));
    }
    if c.iter().all(|&x| x == 0.0) {
        return Err(SisError::precondition("direction c must not vanish identically"));
    }
    Ok(())
}

/// Minimum of `x + (1 − x)^Γ` on [0, 1]; equals 1 at Γ = 1.
pub fn delta_gamma(gamma_max: f64) -> f64 {
    if (gamma_max - 1.0).abs() < 1e-12 {
        return 1.0;
    }
    let e = 1.0 / (1.0 - gamma_max);
    1.0 - gamma_max.powf(e) + gamma_max.powf(gamma_max * e)
}

/// Point where `x + (1 − x)^Γ` attains its minimum, `1 − Γ^{1/(1−Γ)}`.
pub fn delta_minimizer(gamma_max: f64) -> f64 {
    if (gamma_max - 1.0).abs() < 1e-12 {
        // f_1 ≡ 1: every point is a minimiser.
        return 0.0;
    }
    1.0 - gamma_max.powf(1.0 / (1.0 - gamma_max))
}

/// A priori level-set bound `(r + ε) / (R · Δ(Γ) · min β)`.
pub fn theta_star_bound(coeffs: &ModelCoefficients, grid: &Grid, r_value: f64) -> Result<f64> {
    let _ = grid;
    let gamma_max = coeffs.bounds.gamma_max;
    if gamma_max < 1.0 {
        return Err(SisError::precondition(format!("the level-set bound needs Gamma >= 1, got {gamma_max}")));
    }
    let min_beta = coeffs.min_beta();
    if !(min_beta > 0.0) {
        return Err(SisError::precondition("theorem hypothesis violated: beta must be strictly positive"));
    }
    if !(r_value > 0.0) {
        return Err(SisError::input(format!("R must be positive, got {r_value}")));
    }
    Ok((coeffs.bounds.r + BOUND_EPSILON) / (r_value * delta_gamma(gamma_max) * min_beta))
}
