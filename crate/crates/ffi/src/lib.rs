//! C ABI over the `mrm` toolkit.
//!
//! Objects cross the boundary as opaque handles created by `mrm_*_new` or
//! `mrm_*_sample` style functions and released with the matching `*_free`.
//! Every fallible function returns an [`MrmStatus`] and writes its result
//! through an out-pointer; on failure a description is available from
//! [`mrm_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mrm::chaos2d::{green_disk, zeta2d};
use mrm::cone::{cone_mass, cone_overlap, ConeParams};
use mrm::dimension::predicted_dimension;
use mrm::levy::{critical_moment, normalize, Atom, JumpMeasure, LevyTriple};
use mrm::measure::{build_measure, rho, MeasureGrid};
use mrm::synthesis::{Field1D, FieldSampler, Grid1D};
use mrm::MrmError;

/// Result codes. `MRM_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrmStatus {
    MrmOk = 0,
    MrmNullPointer = 1,
    MrmValidation = 2,
    MrmRange = 3,
    MrmUnsupported = 4,
    MrmConfig = 5,
    MrmSingular = 6,
    MrmNumerical = 7,
    MrmCannotNormalize = 8,
    MrmIo = 9,
    MrmBufferTooSmall = 10,
    MrmPanic = 11,
}

/// A Lévy triple `(m, σ², ν)`.
pub struct MrmTriple {
    inner: LevyTriple,
}

/// A sampled log-field on a uniform 1D grid.
pub struct MrmField {
    inner: Field1D,
}

/// Cell masses of a random measure on a uniform 1D grid.
pub struct MrmMeasure {
    inner: MeasureGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &MrmError) -> MrmStatus {
    match e {
        MrmError::Validation(_) => MrmStatus::MrmValidation,
        MrmError::Range(_) => MrmStatus::MrmRange,
        MrmError::Unsupported(_) => MrmStatus::MrmUnsupported,
        MrmError::Config(_) => MrmStatus::MrmConfig,
        MrmError::Singular(_) => MrmStatus::MrmSingular,
        MrmError::Numerical { .. } => MrmStatus::MrmNumerical,
        MrmError::CannotNormalize(_) => MrmStatus::MrmCannotNormalize,
        MrmError::Io(_) | MrmError::Csv(_) => MrmStatus::MrmIo,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), MrmStatus>>(f: F) -> MrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MrmStatus::MrmOk
        }
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MrmStatus::MrmPanic
        }
    }
}

fn check<T>(r: mrm::Result<T>) -> Result<T, MrmStatus> {
    r.map_err(|e| {
        set_last_error(&e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> MrmStatus {
    set_last_error(&format!("null pointer: {what}"));
    MrmStatus::MrmNullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, MrmStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), MrmStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<(), MrmStatus> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < values.len() {
        set_last_error(&format!("buffer holds {len} values, need {}", values.len()));
        return Err(MrmStatus::MrmBufferTooSmall);
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next `mrm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mrm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mrm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Triples

fn boxed_triple(t: LevyTriple) -> *mut MrmTriple {
    Box::into_raw(Box::new(MrmTriple { inner: t }))
}

/// Normalized log-normal triple `(−σ²/2, σ², 0)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_lognormal(sigma2: f64, out: *mut *mut MrmTriple) -> MrmStatus {
    guard(|| {
        let t = check(LevyTriple::lognormal(sigma2))?;
        write_out(out, boxed_triple(t))
    })
}

/// The degenerate triple whose measure is Lebesgue.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_lebesgue(out: *mut *mut MrmTriple) -> MrmStatus {
    guard(|| write_out(out, boxed_triple(LevyTriple::lebesgue())))
}

/// Normalized triple with Gaussian part `sigma2` and `n` jump atoms.
///
/// # Safety
/// `xs` and `ws` must point to `n` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_atomic(
    sigma2: f64,
    xs: *const f64,
    ws: *const f64,
    n: usize,
    out: *mut *mut MrmTriple,
) -> MrmStatus {
    guard(|| {
        if n > 0 && (xs.is_null() || ws.is_null()) {
            return Err(null("atoms"));
        }
        let atoms = (0..n)
            .map(|i| Atom {
                x: *xs.add(i),
                w: *ws.add(i),
            })
            .collect();
        let t = check(normalize(sigma2, JumpMeasure::Atomic(atoms)))?;
        write_out(out, boxed_triple(t))
    })
}

/// # Safety
/// `t` must come from an `mrm_triple_*` constructor and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_free(t: *mut MrmTriple) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Drift `m` of the triple.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_drift(t: *const MrmTriple, out: *mut f64) -> MrmStatus {
    guard(|| write_out(out, deref(t, "triple")?.inner.m))
}

/// `ψ(q)`; `+∞` beyond the critical moment.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_psi(t: *const MrmTriple, q: f64, out: *mut f64) -> MrmStatus {
    guard(|| write_out(out, check(deref(t, "triple")?.inner.psi(q))?))
}

/// `ζ(q) = q − ψ(q)`.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_zeta(t: *const MrmTriple, q: f64, out: *mut f64) -> MrmStatus {
    guard(|| write_out(out, check(deref(t, "triple")?.inner.zeta(q))?))
}

/// Supremum of the `q` with `ψ(q) < ∞`.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_triple_critical_moment(
    t: *const MrmTriple,
    out: *mut f64,
) -> MrmStatus {
    guard(|| write_out(out, check(critical_moment(&deref(t, "triple")?.inner))?))
}

/// Root `δ` of `ζ(δ) = delta0`.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_kpz_predict_1d(
    t: *const MrmTriple,
    delta0: f64,
    out: *mut f64,
) -> MrmStatus {
    guard(|| {
        write_out(
            out,
            check(predicted_dimension(&deref(t, "triple")?.inner, delta0))?,
        )
    })
}

// ---------------------------------------------------------------------------
// Geometry

/// θ-mass of a cone with resolution `l` and integral scale `big_t`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrm_cone_mass(l: f64, big_t: f64, out: *mut f64) -> MrmStatus {
    guard(|| write_out(out, cone_mass(&check(ConeParams::new(l, big_t))?)))
}

/// θ-mass of the intersection of two cones whose apexes are `tau` apart.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrm_cone_overlap(
    l: f64,
    big_t: f64,
    tau: f64,
    out: *mut f64,
) -> MrmStatus {
    guard(|| {
        write_out(
            out,
            check(cone_overlap(&check(ConeParams::new(l, big_t))?, tau))?,
        )
    })
}

/// 2D log-normal structure function.
#[no_mangle]
pub extern "C" fn mrm_zeta2d(gamma2: f64, q: f64) -> f64 {
    zeta2d(gamma2, q)
}

/// Green function of the disk `B(0, radius)` with Dirichlet boundary.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrm_green_disk(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    radius: f64,
    out: *mut f64,
) -> MrmStatus {
    guard(|| write_out(out, check(green_disk([x0, x1], [y0, y1], radius))?))
}

// ---------------------------------------------------------------------------
// Fields and measures

/// Samples `ω_l` at the midpoints of `n` cells on `[0, length]`.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_field_sample(
    t: *const MrmTriple,
    length: f64,
    n: usize,
    l: f64,
    big_t: f64,
    seed: u64,
    out: *mut *mut MrmField,
) -> MrmStatus {
    guard(|| {
        let triple = &deref(t, "triple")?.inner;
        let grid = check(Grid1D::cells(length, n))?;
        let cone = check(ConeParams::new(l, big_t))?;
        let sampler = check(FieldSampler::new(grid, cone, triple))?;
        let field = check(sampler.sample(seed))?;
        write_out(out, Box::into_raw(Box::new(MrmField { inner: field })))
    })
}

/// # Safety
/// `f` must come from [`mrm_field_sample`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mrm_field_free(f: *mut MrmField) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of grid points; 0 for a null handle.
///
/// # Safety
/// `f` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mrm_field_len(f: *const MrmField) -> usize {
    f.as_ref().map_or(0, |f| f.inner.values.len())
}

/// Copies the field values into `buf`, which must hold `mrm_field_len`
/// values.
///
/// # Safety
/// `f` must be valid; `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mrm_field_values(
    f: *const MrmField,
    buf: *mut f64,
    len: usize,
) -> MrmStatus {
    guard(|| copy_out(&deref(f, "field")?.inner.values, buf, len))
}

/// Cell masses `M_l(cell)` of the field.
///
/// # Safety
/// `f` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_measure_from_field(
    f: *const MrmField,
    out: *mut *mut MrmMeasure,
) -> MrmStatus {
    guard(|| {
        let m = check(build_measure(&deref(f, "field")?.inner))?;
        write_out(out, Box::into_raw(Box::new(MrmMeasure { inner: m })))
    })
}

/// # Safety
/// `m` must come from [`mrm_measure_from_field`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mrm_measure_free(m: *mut MrmMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of cells; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mrm_measure_len(m: *const MrmMeasure) -> usize {
    m.as_ref().map_or(0, |m| m.inner.masses().len())
}

/// Copies the cell masses into `buf`.
///
/// # Safety
/// `m` must be valid; `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mrm_measure_masses(
    m: *const MrmMeasure,
    buf: *mut f64,
    len: usize,
) -> MrmStatus {
    guard(|| copy_out(deref(m, "measure")?.inner.masses(), buf, len))
}

/// # Safety
/// `m` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_measure_total_mass(m: *const MrmMeasure, out: *mut f64) -> MrmStatus {
    guard(|| write_out(out, deref(m, "measure")?.inner.total_mass()))
}

/// Random distance `ρ(x, y) = M([x, y])`.
///
/// # Safety
/// `m` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrm_measure_rho(
    m: *const MrmMeasure,
    x: f64,
    y: f64,
    out: *mut f64,
) -> MrmStatus {
    guard(|| write_out(out, check(rho(&deref(m, "measure")?.inner, x, y))?))
}
