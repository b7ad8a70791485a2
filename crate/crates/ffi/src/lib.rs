//! C interface to the gauge-map safety filter.
//!
//! Objects are opaque heap handles created by `sg_*_new`/`sg_*_from_json`
//! and released with the matching `sg_*_free`. Every fallible call returns an
//! [`SgStatus`]; on failure a description is available from
//! [`sg_last_error_message`] until the next failing call on the same thread.
//! Vectors are passed as pointer plus length and matrices row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use safegauge::cli::LoadedCase;
use safegauge::ddpg::PolicyCheckpoint;
use safegauge::invariance::{candidate_gains, gain_search, verify_certificate, CertificateFile, RciCertificate, RpiOptions, SafetySystem};
use safegauge::policy::{Controller, NeuralPolicy, SafetyLayer};
use safegauge::polytope::{gauge_map, HPolytope};
use safegauge::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    StateOutsideSet = 5,
    CertificateInvalid = 6,
    SynthesisFailed = 7,
    NumericalFailure = 8,
    Panic = 9,
}

/// Dynamics and constraint sets of a plant.
pub struct SgSystem {
    system: SafetySystem,
}

/// A verified invariant-set certificate bound to a system.
pub struct SgCertificate {
    cert: RciCertificate,
}

/// `u = K x + G(v | Ω̂(x))` for a fixed certificate.
pub struct SgSafetyLayer {
    layer: SafetyLayer,
}

/// A trained actor behind its action map.
pub struct SgPolicy {
    policy: NeuralPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SgStatus {
    match err {
        Error::DimensionMismatch(_) => SgStatus::DimensionMismatch,
        Error::NonFinite(_) => SgStatus::NonFinite,
        Error::StateOutsideS => SgStatus::StateOutsideSet,
        Error::CertificateInvalid(_) => SgStatus::CertificateInvalid,
        Error::NoValidGain | Error::SetTooComplex(_) | Error::NotConverged(_) | Error::EmptyInterior => {
            SgStatus::SynthesisFailed
        }
        Error::NumericalFailure(_) | Error::Infeasible | Error::Unbounded => SgStatus::NumericalFailure,
        Error::PolicyStep { source, .. } => status_of(source),
        _ => SgStatus::InvalidInput,
    }
}

/// Run `f`, turning errors and panics into a status plus the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), (SgStatus, String)>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SgStatus::Panic
        }
    }
}

fn lib(e: Error) -> (SgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (SgStatus, String) {
    (SgStatus::NullPointer, format!("{name} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, (SgStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, (SgStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (SgStatus::InvalidInput, format!("{name} is not UTF-8")))
}

unsafe fn vector(p: *const f64, len: usize, want: usize, name: &str) -> Result<DVector<f64>, (SgStatus, String)> {
    if len != want {
        return Err((SgStatus::DimensionMismatch, format!("{name} has length {len}, expected {want}")));
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(DVector::from_column_slice(std::slice::from_raw_parts(p, len)))
}

unsafe fn output<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], (SgStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn give<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the most recent failure on this thread, or null. Owned by the
/// library; valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a grid case or raw system description from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_system_from_json(json: *const c_char, out: *mut *mut SgSystem) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let system = LoadedCase::from_json(text(json, "json")?).and_then(|c| c.system()).map_err(lib)?;
        give(out, SgSystem { system });
        Ok(())
    })
}

/// # Safety
/// `system` must come from [`sg_system_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sg_system_free(system: *mut SgSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// State, input and disturbance dimensions.
///
/// # Safety
/// `system` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn sg_system_dims(system: *const SgSystem, n: *mut usize, m: *mut usize, p: *mut usize) -> SgStatus {
    guard(|| {
        let s = &borrow(system, "system")?.system;
        for (ptr, v) in [(n, s.state_dim()), (m, s.input_dim()), (p, s.disturbance_dim())] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        Ok(())
    })
}

/// Parse a certificate and verify it against `system`; invalid certificates
/// are refused with [`SgStatus::CertificateInvalid`].
///
/// # Safety
/// `system` must be a live handle, `json` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sg_certificate_from_json(
    system: *const SgSystem,
    json: *const c_char,
    out: *mut *mut SgCertificate,
) -> SgStatus {
    guard(|| {
        let s = &borrow(system, "system")?.system;
        if out.is_null() {
            return Err(null("out"));
        }
        let file: CertificateFile =
            serde_json::from_str(text(json, "json")?).map_err(|e| (SgStatus::InvalidInput, e.to_string()))?;
        let cert = file.into_certificate(s).map_err(lib)?;
        let report = verify_certificate(&cert, s).map_err(lib)?;
        if !report.check_valid() {
            return Err(lib(Error::CertificateInvalid(format!("worst slack {:e}", report.worst()))));
        }
        give(out, SgCertificate { cert });
        Ok(())
    })
}

/// Synthesize a certificate with the default gain sweep.
///
/// # Safety
/// `system` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sg_certificate_synthesize(system: *const SgSystem, out: *mut *mut SgCertificate) -> SgStatus {
    guard(|| {
        let s = &borrow(system, "system")?.system;
        if out.is_null() {
            return Err(null("out"));
        }
        let weights = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0];
        let candidates = candidate_gains(s, &weights, &[1.0], 1.0).map_err(lib)?;
        let result = gain_search(s, &candidates, &RpiOptions::default()).map_err(lib)?;
        give(out, SgCertificate { cert: result.certificate });
        Ok(())
    })
}

/// Serialize a certificate as JSON. The string must be released with
/// [`sg_string_free`].
///
/// # Safety
/// `cert` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sg_certificate_to_json(cert: *const SgCertificate, out: *mut *mut c_char) -> SgStatus {
    guard(|| {
        let c = &borrow(cert, "cert")?.cert;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = serde_json::to_string(&CertificateFile::from_certificate(c)).map_err(|e| (SgStatus::InvalidInput, e.to_string()))?;
        *out = CString::new(json).map_err(|e| (SgStatus::InvalidInput, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Number of row pairs `±V_s x ≤ s̄` in the certificate.
///
/// # Safety
/// `cert` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sg_certificate_rows(cert: *const SgCertificate) -> usize {
    cert.as_ref().map_or(0, |c| c.cert.num_rows())
}

/// Whether `x` lies in the certificate's invariant set (within `tol`).
///
/// # Safety
/// `cert` must be a live handle and `x` point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_certificate_contains(cert: *const SgCertificate, x: *const f64, n: usize, tol: f64, inside: *mut c_int) -> SgStatus {
    guard(|| {
        let c = &borrow(cert, "cert")?.cert;
        let x = vector(x, n, c.vs.ncols(), "x")?;
        if inside.is_null() {
            return Err(null("inside"));
        }
        *inside = c_int::from(c.contains_state(&x, tol));
        Ok(())
    })
}

/// # Safety
/// `cert` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sg_certificate_free(cert: *mut SgCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build the safety layer for `system` and `cert`. Both handles may be freed
/// afterwards.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sg_safety_layer_new(
    system: *const SgSystem,
    cert: *const SgCertificate,
    out: *mut *mut SgSafetyLayer,
) -> SgStatus {
    guard(|| {
        let s = &borrow(system, "system")?.system;
        let c = &borrow(cert, "cert")?.cert;
        if out.is_null() {
            return Err(null("out"));
        }
        let layer = SafetyLayer::new(c.clone(), s.clone()).map_err(lib)?;
        give(out, SgSafetyLayer { layer });
        Ok(())
    })
}

/// # Safety
/// `layer` must come from [`sg_safety_layer_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sg_safety_layer_free(layer: *mut SgSafetyLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Map a virtual action `v ∈ [−1, 1]^m` at state `x` to a safe input `u`.
/// `fallback` (optional) is set to 1 when the state is on the boundary band
/// and `u = K x` was returned.
///
/// # Safety
/// `x` holds `n` doubles, `v` and `u` hold `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_safety_layer_apply(
    layer: *const SgSafetyLayer,
    x: *const f64,
    n: usize,
    v: *const f64,
    m: usize,
    u: *mut f64,
    fallback: *mut c_int,
) -> SgStatus {
    guard(|| {
        let l = &borrow(layer, "layer")?.layer;
        let x = vector(x, n, l.system.state_dim(), "x")?;
        let v = vector(v, m, l.input_dim(), "v")?;
        let (action, fb) = l.apply_traced(&x, &v).map_err(lib)?;
        output(u, m, "u")?.copy_from_slice(action.as_slice());
        if !fallback.is_null() {
            *fallback = c_int::from(fb);
        }
        Ok(())
    })
}

/// `∂u/∂v` at `(x, v)`, written row-major into `jac` (`m × m`).
///
/// # Safety
/// `x` holds `n` doubles, `v` holds `m`, `jac` holds `m·m`.
#[no_mangle]
pub unsafe extern "C" fn sg_safety_layer_jacobian(
    layer: *const SgSafetyLayer,
    x: *const f64,
    n: usize,
    v: *const f64,
    m: usize,
    jac: *mut f64,
) -> SgStatus {
    guard(|| {
        let l = &borrow(layer, "layer")?.layer;
        let x = vector(x, n, l.system.state_dim(), "x")?;
        let v = vector(v, m, l.input_dim(), "v")?;
        let j = l.apply_with_jacobian(&x, &v).map_err(lib)?.jacobian;
        write_row_major(&j, output(jac, m * m, "jac")?);
        Ok(())
    })
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i * m.ncols() + j] = m[(i, j)];
        }
    }
}

/// Load a policy checkpoint. Safe policies need `cert`; penalty policies
/// ignore it (pass null).
///
/// # Safety
/// `system` must be live, `cert` live or null, `json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_from_json(
    system: *const SgSystem,
    cert: *const SgCertificate,
    json: *const c_char,
    out: *mut *mut SgPolicy,
) -> SgStatus {
    guard(|| {
        let s = &borrow(system, "system")?.system;
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt: PolicyCheckpoint =
            serde_json::from_str(text(json, "json")?).map_err(|e| (SgStatus::InvalidInput, e.to_string()))?;
        let c = cert.as_ref().map(|c| &c.cert);
        let policy = ckpt.into_policy(s, c).map_err(lib)?;
        give(out, SgPolicy { policy });
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`sg_policy_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_free(policy: *mut SgPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Action of the policy at `x`.
///
/// # Safety
/// `x` holds `n` doubles and `u` holds `m`.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_act(
    policy: *const SgPolicy,
    x: *const f64,
    n: usize,
    u: *mut f64,
    m: usize,
    fallback: *mut c_int,
) -> SgStatus {
    guard(|| {
        let p = &borrow(policy, "policy")?.policy;
        let x = vector(x, n, p.state_scale.len(), "x")?;
        let want = p.map.input_dim();
        if m != want {
            return Err((SgStatus::DimensionMismatch, format!("u has length {m}, expected {want}")));
        }
        let (action, fb) = p.act_traced(&x).map_err(lib)?;
        output(u, m, "u")?.copy_from_slice(action.as_slice());
        if !fallback.is_null() {
            *fallback = c_int::from(fb);
        }
        Ok(())
    })
}

/// Gauge map `G(v | Q)` for `Q = {w : F w ≤ g}` with `F` row-major
/// (`rows × m`). `Q` must be a C-set.
///
/// # Safety
/// `f` holds `rows·m` doubles, `g` holds `rows`, `v` and `out` hold `m`.
#[no_mangle]
pub unsafe extern "C" fn sg_gauge_map(
    f: *const f64,
    g: *const f64,
    rows: usize,
    m: usize,
    v: *const f64,
    out: *mut f64,
) -> SgStatus {
    guard(|| {
        if f.is_null() {
            return Err(null("f"));
        }
        let lhs = DMatrix::from_row_slice(rows, m, std::slice::from_raw_parts(f, rows * m));
        let rhs = vector(g, rows, rows, "g")?;
        let q = HPolytope::new(lhs, rhs).map_err(lib)?;
        let v = vector(v, m, m, "v")?;
        let w = gauge_map(&v, &q).map_err(lib)?;
        output(out, m, "out")?.copy_from_slice(w.as_slice());
        Ok(())
    })
}
