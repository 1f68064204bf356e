//! C ABI over the `strainsis` library.
//!
//! Every function returns a [`SisStatus`]; results go through out-pointers.
//! On failure, [`sis_last_error_message`] returns a description that stays
//! valid until the next call on the same thread. Panics are caught at the
//! boundary and reported as `SIS_STATUS_PANIC`.
//!
//! Arrays are caller-allocated. Vectors over the grid have `n_cells` entries;
//! the transmission kernel is row-major, `beta[i * n + j] = β(x_i, y_j)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use strainsis::dynamics::{integrate, IntegratorConfig, Scheme};
use strainsis::operators::assemble_psi_r;
use strainsis::scenario::Scenario;
use strainsis::spectral::{find_s_star, spectral_bound, DEFAULT_TOL};
use strainsis::steady::{endemic_bilinear, endemic_fixed_point};
use strainsis::{Grid, ModelCoefficients, SisError, State};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SisStatus {
    Ok = 0,
    NullPointer = 1,
    Input = 2,
    Validation = 3,
    Precondition = 4,
    Convergence = 5,
    NoSignChange = 6,
    Positivity = 7,
    Config = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SisScheme {
    ImexEuler = 0,
    ImexCn = 1,
}

/// Opaque model handle: grid, sampled coefficients and initial state.
pub struct SisModel {
    grid: Grid,
    coeffs: ModelCoefficients,
    state0: State,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SisError) -> SisStatus {
    match e {
        SisError::Input(_) => SisStatus::Input,
        SisError::Validation { .. } => SisStatus::Validation,
        SisError::Precondition(_) => SisStatus::Precondition,
        SisError::Convergence { .. } => SisStatus::Convergence,
        SisError::NoSignChange { .. } => SisStatus::NoSignChange,
        SisError::Positivity { .. } => SisStatus::Positivity,
        SisError::Config(_) => SisStatus::Config,
        SisError::Io(_) => SisStatus::Io,
        _ => SisStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Model(SisError),
}

impl From<SisError> for Fail {
    fn from(e: SisError) -> Self {
        Fail::Model(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SisStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SisStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SisStatus::NullPointer
        }
        Ok(Err(Fail::Model(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SisStatus::Panic
        }
    }
}

unsafe fn model<'a>(m: *const SisModel) -> Result<&'a SisModel, Fail> {
    m.as_ref().ok_or(Fail::Null("model"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn write_vec(p: *mut f64, v: &[f64], what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), p, v.len());
    Ok(())
}

fn boxed(grid: Grid, coeffs: ModelCoefficients, state0: State) -> *mut SisModel {
    Box::into_raw(Box::new(SisModel { grid, coeffs, state0 }))
}

/// Builds a model from scenario TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sis_model_from_toml(toml: *const c_char, out: *mut *mut SisModel) -> SisStatus {
    guard(|| {
        if toml.is_null() {
            return Err(Fail::Null("toml"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let text =
            CStr::from_ptr(toml).to_str().map_err(|e| SisError::Config(format!("scenario text is not UTF-8: {e}")))?;
        let p = Scenario::from_toml_str(text)?.prepare()?;
        out.write(boxed(p.grid, p.coeffs, p.state0));
        Ok(())
    })
}

/// Builds a model from cell samples on an `n_cells` grid; bounds are taken
/// from the samples.
///
/// # Safety
/// `d`, `rho`, `gamma`, `v0` must hold `n_cells` doubles, `beta` must hold
/// `n_cells * n_cells`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sis_model_from_arrays(
    n_cells: usize,
    d: *const f64,
    rho: *const f64,
    beta: *const f64,
    gamma: *const f64,
    v0: *const f64,
    s0: f64,
    out: *mut *mut SisModel,
) -> SisStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let grid = Grid::new(n_cells)?;
        let n2 = n_cells.checked_mul(n_cells).ok_or_else(|| SisError::Input("n_cells too large".into()))?;
        let beta = DMatrix::from_row_slice(n_cells, n_cells, slice(beta, n2, "beta")?);
        let coeffs = ModelCoefficients::from_samples(
            &grid,
            slice(d, n_cells, "d")?.to_vec(),
            slice(rho, n_cells, "rho")?.to_vec(),
            beta,
            slice(gamma, n_cells, "gamma")?.to_vec(),
            &Default::default(),
        )?;
        let state0 = State::new(&grid, slice(v0, n_cells, "v0")?.to_vec(), s0)?;
        out.write(boxed(grid, coeffs, state0));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a constructor above and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sis_model_free(model: *mut SisModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// `m` must be a live model; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sis_model_n_cells(m: *const SisModel, out: *mut usize) -> SisStatus {
    guard(|| write_out(out, model(m)?.grid.n_cells(), "out"))
}

/// Spectral bound of Ψ_R and, if `eigvec_out` is non-null, its Perron vector
/// (unit discrete W^{1,1} norm).
///
/// # Safety
/// `m` must be a live model; `s_out` writable; `eigvec_out` null or `n_cells` long.
#[no_mangle]
pub unsafe extern "C" fn sis_spectral_bound_psi_r(
    m: *const SisModel,
    r: f64,
    s_out: *mut f64,
    eigvec_out: *mut f64,
) -> SisStatus {
    guard(|| {
        let m = model(m)?;
        let res = spectral_bound(&assemble_psi_r(&m.coeffs, &m.grid, r)?, &m.grid, DEFAULT_TOL)?;
        write_out(s_out, res.s, "s_out")?;
        if !eigvec_out.is_null() {
            write_vec(eigvec_out, &res.eigvec, "eigvec_out")?;
        }
        Ok(())
    })
}

/// Susceptible threshold S* of a bilinear (γ ≡ 0) model.
///
/// # Safety
/// `m` must be a live model; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sis_find_s_star(m: *const SisModel, out: *mut f64) -> SisStatus {
    guard(|| {
        let m = model(m)?;
        write_out(out, find_s_star(&m.coeffs, &m.grid, None)?, "out")
    })
}

/// Bilinear endemic state with total infected mass `v_total`.
///
/// # Safety
/// `m` live; `v_out` holds `n_cells` doubles; `s_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sis_endemic_bilinear(
    m: *const SisModel,
    v_total: f64,
    v_out: *mut f64,
    s_out: *mut f64,
) -> SisStatus {
    guard(|| {
        let m = model(m)?;
        let ss = endemic_bilinear(&m.coeffs, &m.grid, v_total)?;
        write_vec(v_out, &ss.v_star, "v_out")?;
        write_out(s_out, ss.s_star, "s_out")
    })
}

/// Endemic state on the ray S* = R from the fixed-point solver.
///
/// # Safety
/// `m` live; `v_out` holds `n_cells` doubles; `s_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sis_endemic_fixed_point(
    m: *const SisModel,
    r: f64,
    v_out: *mut f64,
    s_out: *mut f64,
) -> SisStatus {
    guard(|| {
        let m = model(m)?;
        let ss = endemic_fixed_point(&m.coeffs, &m.grid, r, None)?;
        write_vec(v_out, &ss.v_star, "v_out")?;
        write_out(s_out, ss.s_star, "s_out")
    })
}

/// Integrates from the model's initial state to `t_end` and returns the
/// final state. `max_mass_error_out` may be null.
///
/// # Safety
/// `m` live; `v_out` holds `n_cells` doubles; `s_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sis_simulate(
    m: *const SisModel,
    dt: f64,
    t_end: f64,
    scheme: SisScheme,
    v_out: *mut f64,
    s_out: *mut f64,
    max_mass_error_out: *mut f64,
) -> SisStatus {
    guard(|| {
        let m = model(m)?;
        if v_out.is_null() {
            return Err(Fail::Null("v_out"));
        }
        let scheme = match scheme {
            SisScheme::ImexEuler => Scheme::ImexEuler,
            SisScheme::ImexCn => Scheme::ImexCn,
        };
        let mut cfg = IntegratorConfig::new(dt, t_end, scheme);
        // Only the final state is returned; skip intermediate snapshots.
        cfg.snapshot_every = usize::MAX;
        let traj = integrate(&m.state0, &m.coeffs, &m.grid, &cfg)?;
        let last = traj.last();
        write_vec(v_out, &last.v, "v_out")?;
        write_out(s_out, last.s, "s_out")?;
        if !max_mass_error_out.is_null() {
            max_mass_error_out.write(traj.max_mass_error());
        }
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null.
#[no_mangle]
pub extern "C" fn sis_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
