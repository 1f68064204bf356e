//! Dense discretisations of the diffusion–reaction–integral operators.
//!
//! Diffusion uses the zero-flux finite-volume stencil
//! `(Av)_i = [d_{i+½}(v_{i+1} - v_i) - d_{i-½}(v_i - v_{i-1})] / h²`
//! with arithmetic-mean face coefficients; boundary faces carry no flux.
//! Integral terms `∫β(x, y) w(y) dy` become `h · β · diag(w)`.

use nalgebra::{DMatrix, DVector};

use crate::coefficients::ModelCoefficients;
use crate::error::{Result, SisError};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Pure diffusion, no reaction.
    Diffusion,
    /// Diffusion minus ρ.
    Psi1,
    /// Bilinear operator Ψ_R.
    PsiR,
    /// Ψ_{(u,R)} with weight u^γ inside the integral.
    PsiUR,
    Linearization,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorMeta {
    pub r: Option<f64>,
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub a: DMatrix<f64>,
    pub kind: OperatorKind,
    pub meta: OperatorMeta,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        matvec(&self.a, v)
    }

    /// Nonnegative off-diagonal entries.
    pub fn is_metzler(&self) -> bool {
        is_metzler(&self.a)
    }
}

pub(crate) fn matvec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(v);
    (a * x).as_slice().to_vec()
}

pub(crate) fn is_metzler(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || a[(i, j)] >= 0.0))
}

/// Tridiagonal zero-flux diffusion stencil, kept separately from the dense
/// matrix so the time stepper can solve with it in O(n).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStencil {
    /// `lower[i]` couples cell i to i-1 (lower[0] = 0).
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// `upper[i]` couples cell i to i+1 (upper[n-1] = 0).
    pub upper: Vec<f64>,
}

impl DiffusionStencil {
    pub fn new(coeffs: &ModelCoefficients, grid: &Grid) -> Self {
        let n = grid.n_cells();
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        let d = &coeffs.d;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for i in 0..n - 1 {
            let face = 0.5 * (d[i] + d[i + 1]) * inv_h2;
            upper[i] = face;
            lower[i + 1] = face;
            diag[i] -= face;
            diag[i + 1] -= face;
        }
        Self { lower, diag, upper }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * v[i];
                if i > 0 {
                    acc += self.lower[i] * v[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * v[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Solves `(I - c·A) x = rhs` by Thomas elimination. `c ≥ 0` keeps the
    /// system a diagonally dominant M-matrix, so no pivoting is needed.
    pub fn solve_shifted(&self, c: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let b0 = 1.0 - c * self.diag[0];
        if b0 == 0.0 || !b0.is_finite() {
            return Err(SisError::Internal("singular tridiagonal system".into()));
        }
        cp[0] = -c * self.upper[0] / b0;
        dp[0] = rhs[0] / b0;
        for i in 1..n {
            let a = -c * self.lower[i];
            let b = 1.0 - c * self.diag[i];
            let denom = b - a * cp[i - 1];
            if denom == 0.0 || !denom.is_finite() {
                return Err(SisError::Internal("singular tridiagonal system".into()));
            }
            cp[i] = -c * self.upper[i] / denom;
            dp[i] = (rhs[i] - a * dp[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            if i > 0 {
                a[(i, i - 1)] = self.lower[i];
            }
            if i + 1 < n {
                a[(i, i + 1)] = self.upper[i];
            }
        }
        a
    }
}

/// Zero-flux diffusion, optionally with `-diag(ρ)` added (giving Ψ¹).
pub fn assemble_diffusion(coeffs: &ModelCoefficients, grid: &Grid, with_reaction: bool) -> OperatorMatrix {
    let mut a = DiffusionStencil::new(coeffs, grid).to_dense();
    if with_reaction {
        for i in 0..a.nrows() {
            a[(i, i)] -= coeffs.rho[i];
        }
    }
    OperatorMatrix {
        a,
        kind: if with_reaction { OperatorKind::Psi1 } else { OperatorKind::Diffusion },
        meta: OperatorMeta::default(),
    }
}

/// Ψ_R v = (d v')' − ρ v + R ∫β(·, y) v(y) dy  (γ is ignored).
pub fn assemble_psi_r(coeffs: &ModelCoefficients, grid: &Grid, r: f64) -> Result<OperatorMatrix> {
    check_r(r)?;
    let mut op = assemble_diffusion(coeffs, grid, true);
    if r != 0.0 {
        op.a += &coeffs.beta * (r * grid.h());
    }
    op.kind = OperatorKind::PsiR;
    op.meta.r = Some(r);
    Ok(op)
}

/// Ψ_{(u,R)} v = (d v')' − ρ v + R ∫β(·, y) v(y) u(y)^{γ(y)} dy, with 0⁰ = 1.
pub fn assemble_psi_ur(coeffs: &ModelCoefficients, grid: &Grid, u: &[f64], r: f64) -> Result<OperatorMatrix> {
    check_r(r)?;
    grid.check_len(u, "u")?;
    if let Some((j, &x)) = u.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(SisError::input(format!("u must be nonnegative; u[{j}] = {x}")));
    }
    let mut op = assemble_diffusion(coeffs, grid, true);
    if r != 0.0 {
        let weights: Vec<f64> = u.iter().zip(&coeffs.gamma).map(|(&uj, &g)| uj.powf(g)).collect();
        let scale = r * grid.h();
        for (j, &wj) in weights.iter().enumerate() {
            let w = scale * wj;
            for i in 0..grid.n_cells() {
                op.a[(i, j)] += coeffs.beta[(i, j)] * w;
            }
        }
    }
    op.kind = OperatorKind::PsiUR;
    op.meta = OperatorMeta { r: Some(r), u: Some(u.to_vec()) };
    Ok(op)
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(SisError::input(format!("R must be a nonnegative real, got {r}")));
    }
    Ok(())
}

/// S · ∫β(x_i, y) |v(y)|^{1+γ(y)} dy at every cell.
pub fn infection_term(v: &[f64], s: f64, coeffs: &ModelCoefficients, grid: &Grid) -> Result<Vec<f64>> {
    grid.check_len(v, "v")?;
    Ok(infection_unchecked(v, s, coeffs, grid))
}

pub(crate) fn infection_unchecked(v: &[f64], s: f64, coeffs: &ModelCoefficients, grid: &Grid) -> Vec<f64> {
    let w: Vec<f64> = v.iter().zip(&coeffs.gamma).map(|(&vj, &g)| vj.abs().powf(1.0 + g)).collect();
    let mut out = matvec(&coeffs.beta, &w);
    let scale = s * grid.h();
    out.iter_mut().for_each(|o| *o *= scale);
    out
}
