//! Linearisation about a steady state and spectral-abscissa indicators.
//!
//! The state is `(w, R)` with `w` the density perturbation and `R` the
//! susceptible perturbation. Conservation makes the functional
//! `ℓ(w, R) = h Σ w_i + R` vanish on the range of `L`, so `λ = 0` is always an
//! eigenvalue and the mass-zero subspace `ker ℓ` is invariant. Restricted to
//! that subspace, parametrised by `w` alone, the operator is
//! `L_proj w = L_ww w − h (Σ w) L_wR`.
//!
//! The abscissa is estimated by propagating a block of random vectors with
//! implicit Euler, `(I − τL) W_{k+1} = W_k`, re-orthonormalising each step,
//! over doubling horizons; Rayleigh–Ritz of `L` on the propagated subspace
//! gives the leading eigenvalues.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::coefficients::ModelCoefficients;
use crate::error::{Result, SisError};
use crate::grid::Grid;
use crate::operators::{is_metzler, DiffusionStencil};
use crate::spectral::{perron, PerronOptions};
use crate::steady::{infection_jacobian_weights, steady_residuals, SteadyState, STEADY_TOL};

pub const ENSEMBLE_SIZE: usize = 8;
pub const DEFAULT_SEED: u64 = 0x5eed;
/// Tolerated failure of the mass-neutrality identity.
pub const NEUTRALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LinearizationPoint {
    /// `(0, S)` for any S ≥ 0.
    DiseaseFree {
        s: f64,
    },
    Endemic(SteadyState),
}

impl LinearizationPoint {
    fn parts(&self, n: usize) -> (Vec<f64>, f64) {
        match self {
            LinearizationPoint::DiseaseFree { s } => (vec![0.0; n], *s),
            LinearizationPoint::Endemic(ss) => (ss.v_star.clone(), ss.s_star),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationMatrix {
    /// `(n+1)×(n+1)` on `(w, R)`, or `n×n` once projected.
    pub a: DMatrix<f64>,
    pub v_star: Vec<f64>,
    pub s_star: f64,
    pub h: f64,
    pub projected: bool,
}

impl LinearizationMatrix {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `max_j |h Σ_{i<n} a_ij + a_nj|`: zero when the flow conserves mass.
    pub fn neutrality_defect(&self) -> f64 {
        if self.projected {
            return 0.0;
        }
        let n = self.dim() - 1;
        (0..=n)
            .map(|j| (self.h * (0..n).map(|i| self.a[(i, j)]).sum::<f64>() + self.a[(n, j)]).abs())
            .fold(0.0, f64::max)
    }

    /// `||L (0, …, 0, 1)ᵀ||₁`.
    pub fn conservation_eigen_residual(&self) -> Option<f64> {
        if self.projected {
            return None;
        }
        let n = self.dim() - 1;
        Some(self.a.column(n).iter().map(|x| x.abs()).sum())
    }
}

pub fn assemble_linearization(
    point: &LinearizationPoint,
    coeffs: &ModelCoefficients,
    grid: &Grid,
) -> Result<LinearizationMatrix> {
    let n = grid.n_cells();
    let (v, s) = point.parts(n);
    grid.check_len(&v, "v_star")?;
    if !(s >= 0.0) || !s.is_finite() {
        return Err(SisError::input(format!("S* must be nonnegative, got {s}")));
    }
    if let LinearizationPoint::Endemic(ss) = point {
        if ss.v_star.iter().any(|&x| !(x >= 0.0)) {
            return Err(SisError::input("steady state has negative entries"));
        }
        let (pde, balance) = steady_residuals(&ss.v_star, ss.s_star, coeffs, grid)?;
        let tol = STEADY_TOL * (1.0 + grid.l1(&ss.v_star));
        if pde > tol || balance > tol {
            return Err(SisError::precondition(format!(
                "linearisation needs a verified steady state; residuals are {pde:.3e} and {balance:.3e}"
            )));
        }
    }
    let h = grid.h();
    let weights = infection_jacobian_weights(&v, coeffs);
    let mass: Vec<f64> = v.iter().zip(&coeffs.gamma).map(|(&x, &g)| x.powf(1.0 + g)).collect();

    let mut a = DMatrix::zeros(n + 1, n + 1);
    let diff = DiffusionStencil::new(coeffs, grid).to_dense();
    a.view_mut((0, 0), (n, n)).copy_from(&diff);
    for i in 0..n {
        a[(i, i)] -= coeffs.rho[i];
        let mut coupling = 0.0;
        for j in 0..n {
            a[(i, j)] += s * h * coeffs.beta[(i, j)] * weights[j];
            coupling += coeffs.beta[(i, j)] * mass[j];
        }
        a[(i, n)] = h * coupling;
    }
    let mut total = 0.0;
    for j in 0..n {
        let col: f64 = (0..n).map(|i| coeffs.beta[(i, j)]).sum();
        a[(n, j)] = h * coeffs.rho[j] - s * h * h * col * weights[j];
        total += col * mass[j];
    }
    a[(n, n)] = -h * h * total;
    Ok(LinearizationMatrix { a, v_star: v, s_star: s, h, projected: false })
}

/// Restriction of `L` to the mass-zero subspace, in the basis
/// `e_k − h e_R`. Projecting an already projected matrix returns it unchanged.
pub fn mass_zero_projection(l: &LinearizationMatrix) -> Result<LinearizationMatrix> {
    if l.projected {
        return Ok(l.clone());
    }
    let defect = l.neutrality_defect();
    let scale = l.a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if defect > NEUTRALITY_TOL * scale {
        return Err(SisError::precondition(format!(
            "mass-neutrality identity fails by {defect:.3e}; the matrix does not conserve mass"
        )));
    }
    let n = l.dim() - 1;
    let mut p = l.a.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        let c = l.h * l.a[(i, n)];
        for j in 0..n {
            p[(i, j)] -= c;
        }
    }
    Ok(LinearizationMatrix { a: p, v_star: l.v_star.clone(), s_star: l.s_star, h: l.h, projected: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbscissaReport {
    pub abscissa: f64,
    /// Interval from the spread of the last two horizons and the Ritz residual.
    pub interval: [f64; 2],
    /// Leading Ritz values `[re, im]`, sorted by decreasing real part.
    pub leading: Vec<[f64; 2]>,
    /// Per-direction growth rates fitted from the log-norm history over the
    /// final horizon.
    pub growth_rates: Vec<f64>,
    /// `(steps, estimate)` at each horizon.
    pub horizons: Vec<(usize, f64)>,
    pub tau: f64,
    pub converged: bool,
    /// Dominant Ritz value is complex.
    pub oscillatory: bool,
    /// Perron bound of the same matrix when it is Metzler.
    pub perron_check: Option<f64>,
}

pub fn spectral_abscissa(l: &LinearizationMatrix, tol: f64) -> AbscissaReport {
    spectral_abscissa_seeded(l, tol, DEFAULT_SEED)
}

pub fn spectral_abscissa_seeded(l: &LinearizationMatrix, tol: f64, seed: u64) -> AbscissaReport {
    let a = &l.a;
    let dim = a.nrows();
    let m = ENSEMBLE_SIZE.min(dim);
    let tol = if tol > 0.0 { tol } else { 1e-9 };

    // Upper Gershgorin bound on real parts keeps τλ ≤ 1/2 for every eigenvalue.
    let gersh = (0..dim)
        .map(|i| a[(i, i)] + (0..dim).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let tau = if gersh > 0.0 { (0.5 / gersh).min(1.0) } else { 1.0 };

    let mut shifted = -a * tau;
    for i in 0..dim {
        shifted[(i, i)] += 1.0;
    }
    let lu = shifted.lu();

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut q = DMatrix::from_fn(dim, m, |_, _| rng.gen_range(-1.0..1.0));
    q = q.qr().q();

    let mut horizons = Vec::new();
    let mut log_growth = vec![0.0; m];
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<f64> = None;
    let mut steps = 0usize;
    let mut horizon = 4usize;
    let mut converged = false;
    let mut ritz = Vec::new();
    let mut ritz_residual = f64::INFINITY;
    let mut spread = f64::INFINITY;
    let max_steps = 1 << 16;

    while steps < max_steps {
        while steps < horizon {
            let Some(next) = lu.solve(&q) else {
                break;
            };
            let qr = next.qr();
            let r = qr.r();
            for k in 0..m {
                log_growth[k] += r[(k, k)].abs().ln();
            }
            history.push(log_growth.clone());
            q = qr.q();
            steps += 1;
        }
        let (values, resid) = ritz_values(a, &q);
        ritz = values;
        ritz_residual = resid;
        let estimate = ritz[0][0];
        horizons.push((steps, estimate));
        if let Some(p) = prev {
            spread = (estimate - p).abs();
            if spread <= tol * (1.0 + estimate.abs()) {
                converged = true;
                break;
            }
        }
        prev = Some(estimate);
        if steps < horizon {
            break;
        }
        horizon *= 2;
    }

    let abscissa = ritz[0][0];
    let width = if spread.is_finite() { spread.max(ritz_residual) } else { f64::INFINITY };
    let oscillatory = ritz[0][1].abs() > 1e-8 * (1.0 + abscissa.abs());

    // Fit over the second half of the run: log|μ| per step, mapped back via λ = (1 − 1/μ)/τ.
    let half = history.len() / 2;
    let growth_rates = if history.len() >= 2 {
        let span = (history.len() - 1 - half) as f64;
        (0..m)
            .map(|k| {
                let per_step = (history[history.len() - 1][k] - history[half][k]) / span.max(1.0);
                (1.0 - (-per_step).exp()) / tau
            })
            .collect()
    } else {
        vec![]
    };

    let perron_check = if is_metzler(a) { perron(a, None, PerronOptions::default()).ok().map(|p| p.s) } else { None };

    AbscissaReport {
        abscissa,
        interval: [abscissa - width, abscissa + width],
        leading: ritz,
        growth_rates,
        horizons,
        tau,
        converged,
        oscillatory,
        perron_check,
    }
}

/// Ritz values of `a` on the orthonormal basis `q`, sorted by decreasing
/// real part, and the residual `||A Q − Q (QᵀAQ)||_F`.
fn ritz_values(a: &DMatrix<f64>, q: &DMatrix<f64>) -> (Vec<[f64; 2]>, f64) {
    let aq = a * q;
    let small = q.transpose() * &aq;
    let resid = (&aq - q * &small).norm();
    let eig = small.complex_eigenvalues();
    let mut vals: Vec<[f64; 2]> = eig.iter().map(|z| [z.re, z.im]).collect();
    vals.sort_by(|x, y| y[0].total_cmp(&x[0]).then(y[1].total_cmp(&x[1])));
    (vals, resid)
}

/// Convenience used by the CLI and tests: abscissa of `L` and of its
/// mass-zero restriction, with the conservation residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub abscissa: f64,
    pub abscissa_mass_zero: f64,
    pub conservation_eigen_residual: f64,
    pub full: AbscissaReport,
    pub mass_zero: AbscissaReport,
}

pub fn stability_summary(
    point: &LinearizationPoint,
    coeffs: &ModelCoefficients,
    grid: &Grid,
    tol: f64,
    seed: u64,
) -> Result<StabilitySummary> {
    let l = assemble_linearization(point, coeffs, grid)?;
    let p = mass_zero_projection(&l)?;
    let full = spectral_abscissa_seeded(&l, tol, seed);
    let mass_zero = spectral_abscissa_seeded(&p, tol, seed);
    Ok(StabilitySummary {
        abscissa: full.abscissa,
        abscissa_mass_zero: mass_zero.abscissa,
        conservation_eigen_residual: l.conservation_eigen_residual().unwrap_or(f64::NAN),
        full,
        mass_zero,
    })
}

/// Dense eigenvalues of a small matrix, for cross-checks in tests.
#[cfg(test)]
fn dense_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::assemble_psi_r;
    use crate::spectral::{find_s_star, spectral_bound, DEFAULT_TOL};
    use crate::steady::{endemic_bilinear, endemic_fixed_point};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn consts(n: usize, rho: f64, beta: f64, gamma: f64) -> (Grid, ModelCoefficients) {
        let g = Grid::new(n).unwrap();
        let c = ModelCoefficients::constant(&g, 1.0, rho, beta, gamma).unwrap();
        (g, c)
    }

    fn varied(n: usize, gamma: f64) -> (Grid, ModelCoefficients) {
        let g = Grid::new(n).unwrap();
        let xs = g.centers().to_vec();
        let c = ModelCoefficients::from_samples(
            &g,
            g.sample(|x| 1.0 + 0.3 * x),
            g.sample(|x| 1.0 + 0.2 * (3.0 * x).cos()),
            DMatrix::from_fn(n, n, |i, j| 1.5 + 0.5 * (xs[i] * xs[j]).sin()),
            vec![gamma; n],
            &Default::default(),
        )
        .unwrap();
        (g, c)
    }

    #[test]
    fn disease_free_block_structure() {
        let (g, c) = varied(12, 1.0);
        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 2.0 }, &c, &g).unwrap();
        let psi1 = crate::operators::assemble_diffusion(&c, &g, true).a;
        assert_eq!(l.a.view((0, 0), (12, 12)).into_owned(), psi1);
        assert!((0..12).all(|i| l.a[(i, 12)] == 0.0));
        assert_eq!(l.conservation_eigen_residual(), Some(0.0));

        let (g, c0) = varied(12, 0.0);
        let l0 = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 2.0 }, &c0, &g).unwrap();
        let psi = assemble_psi_r(&c0, &g, 2.0).unwrap().a;
        for i in 0..12 {
            for j in 0..12 {
                assert_abs_diff_eq!(l0.a[(i, j)], psi[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mass_neutrality_at_steady_states() {
        let (g, c) = varied(24, 1.0);
        let ss = endemic_fixed_point(&c, &g, 1.2, None).unwrap();
        let l = assemble_linearization(&LinearizationPoint::Endemic(ss), &c, &g).unwrap();
        assert!(l.neutrality_defect() <= 1e-12 * l.a.iter().fold(1.0f64, |m, x| m.max(x.abs())));
        let (g, c) = varied(24, 0.0);
        let ss = endemic_bilinear(&c, &g, 2.0).unwrap();
        let l = assemble_linearization(&LinearizationPoint::Endemic(ss), &c, &g).unwrap();
        assert!(l.neutrality_defect() <= 1e-12 * l.a.iter().fold(1.0f64, |m, x| m.max(x.abs())));
    }

    #[test]
    fn rejects_unverified_state() {
        let (g, c) = varied(12, 1.0);
        let mut ss = endemic_fixed_point(&c, &g, 1.0, None).unwrap();
        ss.v_star[3] *= 1.5;
        let err = assemble_linearization(&LinearizationPoint::Endemic(ss), &c, &g).unwrap_err();
        assert!(matches!(err, SisError::Precondition(_)));
    }

    #[test]
    fn projection_shape_and_idempotence() {
        let (g, c) = varied(10, 1.0);
        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 1.0 }, &c, &g).unwrap();
        let p = mass_zero_projection(&l).unwrap();
        assert_eq!(p.dim(), 10);
        assert_eq!(mass_zero_projection(&p).unwrap(), p);
        let mut broken = l.clone();
        broken.a[(10, 0)] += 1.0;
        assert!(mass_zero_projection(&broken).is_err());
    }

    #[test]
    fn projected_spectrum_is_full_spectrum_minus_zero() {
        let (g, c) = varied(10, 1.0);
        let ss = endemic_fixed_point(&c, &g, 1.0, None).unwrap();
        let l = assemble_linearization(&LinearizationPoint::Endemic(ss), &c, &g).unwrap();
        let p = mass_zero_projection(&l).unwrap();
        let mut full: Vec<f64> = l.a.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
        let mut proj: Vec<f64> = p.a.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
        full.sort_by(f64::total_cmp);
        proj.sort_by(f64::total_cmp);
        let zero = full.iter().position(|x| x.abs() < 1e-9).expect("zero eigenvalue");
        full.remove(zero);
        for (a, b) in full.iter().zip(&proj) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn disease_free_constants_abscissa() {
        let (g, c) = consts(64, 1.0, 2.0, 1.0);
        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 0.5 }, &c, &g).unwrap();
        let full = spectral_abscissa(&l, 1e-10);
        assert_abs_diff_eq!(full.abscissa, 0.0, epsilon = 1e-8);
        let p = mass_zero_projection(&l).unwrap();
        let rep = spectral_abscissa(&p, 1e-10);
        assert!(rep.converged);
        assert_abs_diff_eq!(rep.abscissa, -1.0, epsilon = 1e-6);
        let h = g.h();
        let second = -1.0 - 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert_abs_diff_eq!(rep.leading[1][0], second, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.leading[1][0], -1.0 - PI * PI, epsilon = 0.01);
        assert_abs_diff_eq!(rep.perron_check.unwrap(), -1.0, epsilon = 1e-8);
        assert!(!rep.oscillatory);
        assert!(rep.interval[0] <= rep.abscissa && rep.abscissa <= rep.interval[1]);
        assert_abs_diff_eq!(rep.growth_rates[0], -1.0, epsilon = 1e-4);
    }

    #[test]
    fn bilinear_threshold_and_supercritical() {
        let (g, c) = consts(32, 1.0, 2.0, 0.0);
        let s_star = find_s_star(&c, &g, None).unwrap();
        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: s_star }, &c, &g).unwrap();
        assert_abs_diff_eq!(spectral_abscissa(&l, 1e-10).abscissa, 0.0, epsilon = 1e-6);
        let s_ww = spectral_bound(&assemble_psi_r(&c, &g, s_star).unwrap(), &g, DEFAULT_TOL).unwrap().s;
        assert!(s_ww.abs() < 1e-8);

        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 1.5 }, &c, &g).unwrap();
        let rep = spectral_abscissa(&l, 1e-10);
        assert_abs_diff_eq!(rep.abscissa, 1.5 * 2.0 - 1.0, epsilon = 1e-6);
    }

    #[test]
    fn disease_free_superlinear_is_stable_within_level_set() {
        let (g, c) = varied(32, 1.0);
        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 3.0 }, &c, &g).unwrap();
        let rep = spectral_abscissa(&mass_zero_projection(&l).unwrap(), 1e-10);
        assert!(rep.abscissa < 0.0);
        assert_abs_diff_eq!(rep.abscissa, rep.perron_check.unwrap(), epsilon = 1e-7);
    }

    #[test]
    fn matches_dense_eigensolver_on_endemic_states() {
        for gamma in [0.0, 1.0] {
            let (g, c) = varied(16, gamma);
            let ss = if gamma == 0.0 {
                endemic_bilinear(&c, &g, 1.0).unwrap()
            } else {
                endemic_fixed_point(&c, &g, 1.0, None).unwrap()
            };
            let l = assemble_linearization(&LinearizationPoint::Endemic(ss), &c, &g).unwrap();
            let p = mass_zero_projection(&l).unwrap();
            let rep = spectral_abscissa(&p, 1e-10);
            assert_abs_diff_eq!(rep.abscissa, dense_abscissa(&p.a), epsilon = 1e-6);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (g, c) = varied(16, 1.0);
        let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 1.0 }, &c, &g).unwrap();
        assert_eq!(spectral_abscissa_seeded(&l, 1e-9, 7), spectral_abscissa_seeded(&l, 1e-9, 7));
    }
}
