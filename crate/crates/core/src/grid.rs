//! Uniform cell-centred mesh on the strain interval [0, 1].
//!
//! Every integral over strain space is evaluated with the midpoint rule on
//! this mesh, so `quadrature` is the single source of truth for "∫₀¹".

use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_cells: usize,
    h: f64,
    centers: Vec<f64>,
}

impl Grid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(SisError::input(format!("grid needs at least 2 cells, got {n_cells}")));
        }
        let h = 1.0 / n_cells as f64;
        let centers = (0..n_cells).map(|i| (i as f64 + 0.5) * h).collect();
        Ok(Self { n_cells, h, centers })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Samples `f` at the cell centres.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.centers.iter().map(|&x| f(x)).collect()
    }

    pub(crate) fn check_len(&self, f: &[f64], what: &str) -> Result<()> {
        if f.len() != self.n_cells {
            return Err(SisError::input(format!("{what} has {} entries, grid has {} cells", f.len(), self.n_cells)));
        }
        Ok(())
    }

    pub fn quadrature(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f, "integrand")?;
        Ok(self.integrate(f))
    }

    /// Unchecked midpoint rule; callers guarantee the length.
    pub(crate) fn integrate(&self, f: &[f64]) -> f64 {
        self.h * f.iter().sum::<f64>()
    }

    /// Discrete W^{1,1} norm: ∫|f| plus ∫|f'|, where the derivative term is
    /// the face-averaged forward difference `(1/(n-1)) Σ |f_i - f_{i-1}| / h`.
    /// This is exact for linear profiles and equals the total variation of the
    /// cell values up to the factor n/(n-1).
    pub fn discrete_w11_norm(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f, "function")?;
        Ok(self.w11(f))
    }

    pub(crate) fn w11(&self, f: &[f64]) -> f64 {
        let l1 = self.h * f.iter().map(|v| v.abs()).sum::<f64>();
        let tv: f64 = f.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        l1 + tv / ((self.n_cells - 1) as f64 * self.h)
    }

    /// h-weighted ℓ¹ norm (discrete L¹).
    pub fn l1(&self, f: &[f64]) -> f64 {
        self.h * f.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Infected density `v` on the grid together with the susceptible count `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub v: Vec<f64>,
    pub s: f64,
    pub t: f64,
    /// Total population ∫v + S fixed at construction.
    pub p_star: f64,
}

impl State {
    pub fn new(grid: &Grid, v: Vec<f64>, s: f64) -> Result<Self> {
        grid.check_len(&v, "initial density")?;
        if let Some((i, &x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
            return Err(SisError::input(format!("initial density must be nonnegative and finite; v[{i}] = {x}")));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(SisError::input(format!("susceptible count must be nonnegative, got {s}")));
        }
        let p_star = grid.integrate(&v) + s;
        Ok(Self { v, s, t: 0.0, p_star })
    }

    /// |∫v + S − P*|.
    pub fn mass_error(&self, grid: &Grid) -> f64 {
        (grid.integrate(&self.v) + self.s - self.p_star).abs()
    }
}
