//! Model coefficients d, ρ, β, γ: configuration schema, sampling on a
//! [`Grid`], and validation against the standing bounds
//! `0 ≤ β ≤ b`, `0 < d0 ≤ d ≤ d1`, `0 ≤ ρ ≤ r`, `0 ≤ γ ≤ Γ`.
//!
//! The presets are convenience profiles for experiments; none of them is
//! singled out by the model itself.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::grid::Grid;

/// A scalar profile on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Preset(ProfilePreset),
    /// Knots `[x, value]`, linearly interpolated and clamped outside the knot range.
    Table {
        table: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", content = "params", rename_all = "kebab-case")]
pub enum ProfilePreset {
    Constant {
        value: f64,
    },
    /// Straight line from `left` at x=0 to `right` at x=1.
    Linear {
        left: f64,
        right: f64,
    },
    /// `mean · (1 + amplitude · cos(mode · π · x))`; Neumann-compatible.
    Cosine {
        mean: f64,
        amplitude: f64,
        #[serde(default = "default_mode")]
        mode: u32,
    },
    /// `base + amplitude · exp(-(x - center)² / (2 width²))`.
    Gaussian {
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

fn default_mode() -> u32 {
    1
}

/// A transmission kernel β(x, y) on [0, 1]².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Preset(KernelPreset),
    /// Entries `[x, y, value]` on a full tensor-product set of knots,
    /// bilinearly interpolated.
    Table {
        table: Vec<[f64; 3]>,
    },
    /// β(x, y) = f(x) · g(y) for two knot tables.
    Separable {
        separable: [Vec<[f64; 2]>; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", content = "params", rename_all = "kebab-case")]
pub enum KernelPreset {
    Constant {
        value: f64,
    },
    /// `base + amplitude · exp(-(x - y)² / (2 width²))`: mass near the diagonal.
    GaussianKernel {
        base: f64,
        amplitude: f64,
        width: f64,
    },
    /// `base + amplitude · exp(-(y - center)² / (2 width²))`: infectiousness
    /// depends on the source strain y only.
    SourcePeaked {
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// `mean · (1 + amplitude · cos(πx) cos(πy))`.
    Cosine {
        mean: f64,
        amplitude: f64,
    },
}

/// Optional declared bounds. Any bound left out is taken from the samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub d: ProfileSpec,
    pub rho: ProfileSpec,
    pub beta: KernelSpec,
    pub gamma: ProfileSpec,
    #[serde(default, skip_serializing_if = "is_default_bounds")]
    pub bounds: DeclaredBounds,
}

fn is_default_bounds(b: &DeclaredBounds) -> bool {
    *b == DeclaredBounds::default()
}

impl CoefficientSpec {
    /// All four coefficients constant.
    pub fn constant(d: f64, rho: f64, beta: f64, gamma: f64) -> Self {
        let c = |value| ProfileSpec::Preset(ProfilePreset::Constant { value });
        Self {
            d: c(d),
            rho: c(rho),
            beta: KernelSpec::Preset(KernelPreset::Constant { value: beta }),
            gamma: c(gamma),
            bounds: DeclaredBounds::default(),
        }
    }
}

/// Effective bounds used by the analytic estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub b: f64,
    pub d0: f64,
    pub d1: f64,
    pub r: f64,
    pub gamma_max: f64,
}

/// Coefficients sampled at cell centres. β is stored dense with
/// `beta[(i, j)] = β(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCoefficients {
    pub d: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub bounds: Bounds,
}

impl ModelCoefficients {
    /// Validates raw samples. `declared` bounds are checked when present and
    /// otherwise inferred as the sample extrema.
    pub fn from_samples(
        grid: &Grid,
        d: Vec<f64>,
        rho: Vec<f64>,
        beta: DMatrix<f64>,
        gamma: Vec<f64>,
        declared: &DeclaredBounds,
    ) -> Result<Self> {
        let n = grid.n_cells();
        grid.check_len(&d, "d")?;
        grid.check_len(&rho, "rho")?;
        grid.check_len(&gamma, "gamma")?;
        if beta.nrows() != n || beta.ncols() != n {
            return Err(SisError::input(format!("beta is {}x{}, grid has {n} cells", beta.nrows(), beta.ncols())));
        }
        let x = grid.centers();

        for (name, arr) in [("d", &d), ("rho", &rho), ("gamma", &gamma)] {
            if let Some(i) = arr.iter().position(|v| !v.is_finite()) {
                return Err(validation(name, "finite", format!("{name}(x={}) = {}", x[i], arr[i])));
            }
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(validation("beta", "finite", "beta has a non-finite entry".into()));
        }

        let d0 = declared.d0.unwrap_or_else(|| min(&d));
        if let Some(i) = d.iter().position(|&v| v <= 0.0 || v < d0) {
            return Err(validation(
                "d",
                "d0",
                format!("d below d0 bound: d(x={:.6}) = {} (d0 = {d0}, must be > 0)", x[i], d[i]),
            ));
        }
        if d0 <= 0.0 {
            return Err(validation("d", "d0", format!("d below d0 bound: declared d0 = {d0} must be > 0")));
        }
        let d1 = declared.d1.unwrap_or_else(|| max(&d));
        if let Some(i) = d.iter().position(|&v| v > d1) {
            return Err(validation("d", "d1", format!("d above d1 bound: d(x={:.6}) = {}", x[i], d[i])));
        }

        if let Some(i) = rho.iter().position(|&v| v < 0.0) {
            return Err(validation(
                "rho",
                "rho >= 0",
                format!("negative recovery rate rho(x={:.6}) = {}", x[i], rho[i]),
            ));
        }
        let r = declared.r.unwrap_or_else(|| max(&rho));
        if let Some(i) = rho.iter().position(|&v| v > r) {
            return Err(validation("rho", "r", format!("rho above r bound: rho(x={:.6}) = {}", x[i], rho[i])));
        }

        if let Some(v) = beta.iter().find(|&&v| v < 0.0) {
            return Err(validation("beta", "beta >= 0", format!("negative transmission kernel entry {v}")));
        }
        let b = declared.b.unwrap_or_else(|| beta.max());
        if beta.max() > b {
            return Err(validation("beta", "b", format!("beta above b bound: max beta = {}", beta.max())));
        }

        if let Some(i) = gamma.iter().position(|&v| v < 0.0) {
            return Err(validation(
                "gamma",
                "gamma >= 0",
                format!("negative exponent gamma(y={:.6}) = {}", x[i], gamma[i]),
            ));
        }
        let gamma_max = declared.gamma_max.unwrap_or_else(|| max(&gamma));
        if let Some(i) = gamma.iter().position(|&v| v > gamma_max) {
            return Err(validation(
                "gamma",
                "Gamma",
                format!("gamma above Gamma bound: gamma(y={:.6}) = {}", x[i], gamma[i]),
            ));
        }

        Ok(Self { d, rho, beta, gamma, bounds: Bounds { b, d0, d1, r, gamma_max } })
    }

    /// All-constant coefficients.
    pub fn constant(grid: &Grid, d: f64, rho: f64, beta: f64, gamma: f64) -> Result<Self> {
        let n = grid.n_cells();
        Self::from_samples(
            grid,
            vec![d; n],
            vec![rho; n],
            DMatrix::from_element(n, n, beta),
            vec![gamma; n],
            &DeclaredBounds::default(),
        )
    }

    pub fn n_cells(&self) -> usize {
        self.d.len()
    }

    pub fn gamma_is_zero(&self) -> bool {
        self.gamma.iter().all(|&g| g == 0.0)
    }

    pub fn rho_is_zero(&self) -> bool {
        self.rho.iter().all(|&r| r == 0.0)
    }

    pub fn min_beta(&self) -> f64 {
        self.beta.min()
    }

    /// h · Σ_j β_ij for every row i.
    pub fn beta_row_integrals(&self, grid: &Grid) -> Vec<f64> {
        (0..self.n_cells()).map(|i| grid.h() * self.beta.row(i).sum()).collect()
    }
}

fn validation(field: &'static str, bound: &'static str, message: String) -> SisError {
    SisError::Validation { field, bound, message }
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Samples a coefficient specification on the grid and validates it.
pub fn sample_coefficients(spec: &CoefficientSpec, grid: &Grid) -> Result<ModelCoefficients> {
    let d = sample_profile(&spec.d, grid, "d")?;
    let rho = sample_profile(&spec.rho, grid, "rho")?;
    let gamma = sample_profile(&spec.gamma, grid, "gamma")?;
    let beta = sample_kernel(&spec.beta, grid)?;
    ModelCoefficients::from_samples(grid, d, rho, beta, gamma, &spec.bounds)
}

pub fn sample_profile(spec: &ProfileSpec, grid: &Grid, name: &str) -> Result<Vec<f64>> {
    match spec {
        ProfileSpec::Preset(p) => Ok(grid.sample(|x| eval_preset(p, x))),
        ProfileSpec::Table { table } => {
            let knots = sorted_knots(table, name)?;
            Ok(grid.sample(|x| interp1(&knots, x)))
        }
    }
}

fn eval_preset(p: &ProfilePreset, x: f64) -> f64 {
    match *p {
        ProfilePreset::Constant { value } => value,
        ProfilePreset::Linear { left, right } => left + (right - left) * x,
        ProfilePreset::Cosine { mean, amplitude, mode } => mean * (1.0 + amplitude * (mode as f64 * PI * x).cos()),
        ProfilePreset::Gaussian { base, amplitude, center, width } => {
            base + amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp()
        }
    }
}

fn sample_kernel(spec: &KernelSpec, grid: &Grid) -> Result<DMatrix<f64>> {
    let xs = grid.centers();
    let n = grid.n_cells();
    match spec {
        KernelSpec::Preset(p) => Ok(DMatrix::from_fn(n, n, |i, j| eval_kernel(p, xs[i], xs[j]))),
        KernelSpec::Separable { separable: [fx, fy] } => {
            let kx = sorted_knots(fx, "beta (x factor)")?;
            let ky = sorted_knots(fy, "beta (y factor)")?;
            let gx: Vec<f64> = xs.iter().map(|&x| interp1(&kx, x)).collect();
            let gy: Vec<f64> = xs.iter().map(|&y| interp1(&ky, y)).collect();
            Ok(DMatrix::from_fn(n, n, |i, j| gx[i] * gy[j]))
        }
        KernelSpec::Table { table } => {
            let t = TensorTable::new(table)?;
            Ok(DMatrix::from_fn(n, n, |i, j| t.eval(xs[i], xs[j])))
        }
    }
}

fn eval_kernel(p: &KernelPreset, x: f64, y: f64) -> f64 {
    match *p {
        KernelPreset::Constant { value } => value,
        KernelPreset::GaussianKernel { base, amplitude, width } => {
            base + amplitude * (-(x - y).powi(2) / (2.0 * width * width)).exp()
        }
        KernelPreset::SourcePeaked { base, amplitude, center, width } => {
            base + amplitude * (-(y - center).powi(2) / (2.0 * width * width)).exp()
        }
        KernelPreset::Cosine { mean, amplitude } => mean * (1.0 + amplitude * (PI * x).cos() * (PI * y).cos()),
    }
}

fn sorted_knots(table: &[[f64; 2]], name: &str) -> Result<Vec<[f64; 2]>> {
    if table.is_empty() {
        return Err(SisError::Config(format!("{name}: table has no knots")));
    }
    let mut knots = table.to_vec();
    knots.sort_by(|a, b| a[0].total_cmp(&b[0]));
    if knots.windows(2).any(|w| w[0][0] == w[1][0]) {
        return Err(SisError::Config(format!("{name}: duplicate knot abscissa")));
    }
    Ok(knots)
}

/// Piecewise-linear interpolation through sorted knots, constant beyond the ends.
fn interp1(knots: &[[f64; 2]], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first[0] {
        return first[1];
    }
    if x >= last[0] {
        return last[1];
    }
    let k = knots.partition_point(|k| k[0] <= x);
    let [x0, y0] = knots[k - 1];
    let [x1, y1] = knots[k];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

struct TensorTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: DMatrix<f64>,
}

impl TensorTable {
    fn new(table: &[[f64; 3]]) -> Result<Self> {
        let axis = |k: usize| {
            let mut a: Vec<f64> = table.iter().map(|e| e[k]).collect();
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        };
        let xs = axis(0);
        let ys = axis(1);
        if xs.is_empty() || xs.len() * ys.len() != table.len() {
            return Err(SisError::Config(
                "beta table must list every (x, y) pair of a tensor-product knot set exactly once".into(),
            ));
        }
        let mut values = DMatrix::from_element(xs.len(), ys.len(), f64::NAN);
        for e in table {
            let i = xs.partition_point(|&x| x < e[0]);
            let j = ys.partition_point(|&y| y < e[1]);
            values[(i, j)] = e[2];
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(SisError::Config("beta table has a missing (x, y) pair".into()));
        }
        Ok(Self { xs, ys, values })
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let (i0, i1, tx) = bracket(&self.xs, x);
        let (j0, j1, ty) = bracket(&self.ys, y);
        let v = &self.values;
        (1.0 - tx) * ((1.0 - ty) * v[(i0, j0)] + ty * v[(i0, j1)]) + tx * ((1.0 - ty) * v[(i1, j0)] + ty * v[(i1, j1)])
    }
}

fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let k = axis.partition_point(|&a| a <= x);
    (k - 1, k, (x - axis[k - 1]) / (axis[k] - axis[k - 1]))
}
