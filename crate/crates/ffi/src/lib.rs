//! C ABI over `spem-core`.
//!
//! Every fallible function returns a [`SpemStatus`]; on failure the message
//! is available from [`spem_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. No function
//! lets a Rust panic cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spem_core::embed::{Embedder, MemoryBank};
use spem_core::error::Error;
use spem_core::eval::{auroc, ScoreSet};
use spem_core::flow::FlowModel;
use spem_core::spem::{spem_score as core_spem_score, SpemConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

/// A trained coupling flow.
pub struct SpemFlow {
    model: FlowModel,
}

/// A memory bank together with the embedder it was built with.
pub struct SpemBank {
    embedder: Embedder,
    bank: MemoryBank,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SpemStatus {
    match e {
        Error::Io { .. } => SpemStatus::Io,
        Error::Format(_) | Error::Version { .. } | Error::Fingerprint { .. } | Error::Parse { .. } => {
            SpemStatus::Format
        }
        Error::NonFinite { .. } | Error::Diverged { .. } => SpemStatus::Numeric,
        Error::Dimension { .. } | Error::Parameter { .. } | Error::Empty(_) => SpemStatus::InvalidArgument,
    }
}

struct Fail(SpemStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SpemStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error or panic, and returns its status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpemStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SpemStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SpemStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a flow saved by `spem train`. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spem_flow_load(path: *const c_char, out: *mut *mut SpemFlow) -> SpemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = FlowModel::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SpemFlow { model }));
        Ok(())
    })
}

/// Releases a flow handle. Null is ignored.
///
/// # Safety
/// `flow` must come from [`spem_flow_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spem_flow_free(flow: *mut SpemFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Input width of the flow, or 0 for a null handle.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spem_flow_dim(flow: *const SpemFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.model.dim())
}

/// `log p(x)` for one point of width `d`.
///
/// # Safety
/// `x` must point to `d` doubles; `flow` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spem_flow_log_likelihood(
    flow: *const SpemFlow,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> SpemStatus {
    guard(|| {
        let f = handle(flow, "flow")?;
        let x = slice_arg(x, d, "x")?;
        *out_arg(out, "out")? = f.model.log_likelihood(x)?;
        Ok(())
    })
}

/// Maps `x` to the latent `z` (written to `z_out`, width `d`) and the
/// log-determinant of the Jacobian.
///
/// # Safety
/// `x` and `z_out` must point to `d` doubles; the handle and `log_det`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn spem_flow_forward(
    flow: *const SpemFlow,
    x: *const f64,
    d: usize,
    z_out: *mut f64,
    log_det: *mut f64,
) -> SpemStatus {
    guard(|| {
        let f = handle(flow, "flow")?;
        let x = slice_arg(x, d, "x")?;
        if z_out.is_null() {
            return Err(null("z_out"));
        }
        let ld = out_arg(log_det, "log_det")?;
        let (z, l) = f.model.forward(x)?;
        std::slice::from_raw_parts_mut(z_out, d).copy_from_slice(&z);
        *ld = l;
        Ok(())
    })
}

/// Loads a memory bank and its embedder, checking they belong together.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spem_bank_load(
    bank_path: *const c_char,
    embedder_path: *const c_char,
    out: *mut *mut SpemBank,
) -> SpemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let embedder = Embedder::load(&path_arg(embedder_path, "embedder_path")?)?;
        let bank = MemoryBank::load_for(&path_arg(bank_path, "bank_path")?, &embedder)?;
        *out = Box::into_raw(Box::new(SpemBank { embedder, bank }));
        Ok(())
    })
}

/// Releases a bank handle. Null is ignored.
///
/// # Safety
/// `bank` must come from [`spem_bank_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spem_bank_free(bank: *mut SpemBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Largest cosine similarity between the rectified embedding of `x` and
/// the bank.
///
/// # Safety
/// `x` must point to `d` doubles; the handle and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spem_bank_lambda(bank: *const SpemBank, x: *const f64, d: usize, out: *mut f64) -> SpemStatus {
    guard(|| {
        let b = handle(bank, "bank")?;
        let x = slice_arg(x, d, "x")?;
        *out_arg(out, "out")? = b.bank.similarity(&b.embedder, x)?;
        Ok(())
    })
}

/// SPEM score of one point. `sample_id` selects the noise stream, so the
/// same `(seed, sample_id)` always gives the same score. `lambda_out` and
/// `sigma_out` may be null.
///
/// # Safety
/// `x` must point to `d` doubles; handles and `score_out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn spem_score(
    flow: *const SpemFlow,
    bank: *const SpemBank,
    x: *const f64,
    d: usize,
    alpha: f64,
    alpha_noise: f64,
    seed: u64,
    sample_id: u64,
    score_out: *mut f64,
    lambda_out: *mut f64,
    sigma_out: *mut f64,
) -> SpemStatus {
    guard(|| {
        let f = handle(flow, "flow")?;
        let b = handle(bank, "bank")?;
        let x = slice_arg(x, d, "x")?;
        let out = out_arg(score_out, "score_out")?;
        let cfg = SpemConfig {
            alpha,
            alpha_noise,
            seed,
        };
        let s = core_spem_score(&f.model, &b.bank, &b.embedder, &cfg, x, sample_id)?;
        *out = s.value;
        if let Some(l) = lambda_out.as_mut() {
            *l = s.lambda.unwrap_or(f64::NAN);
        }
        if let Some(sg) = sigma_out.as_mut() {
            *sg = s.sigma.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// AUROC with OOD as the positive class (higher score means more anomalous).
///
/// # Safety
/// `id_scores` and `ood_scores` must point to `n_id` and `n_ood` doubles.
#[no_mangle]
pub unsafe extern "C" fn spem_auroc(
    id_scores: *const f64,
    n_id: usize,
    ood_scores: *const f64,
    n_ood: usize,
    out: *mut f64,
) -> SpemStatus {
    guard(|| {
        let id = slice_arg(id_scores, n_id, "id_scores")?.to_vec();
        let ood = slice_arg(ood_scores, n_ood, "ood_scores")?.to_vec();
        let out = out_arg(out, "out")?;
        *out = auroc(&ScoreSet::new(id, ood)?)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, SpemStatus::Panic);
        let msg = unsafe { CStr::from_ptr(spem_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }

    #[test]
    fn errors_map_to_codes() {
        assert_eq!(status_of(&Error::Empty("x")), SpemStatus::InvalidArgument);
        assert_eq!(status_of(&Error::Format("x".into())), SpemStatus::Format);
        assert_eq!(status_of(&Error::NonFinite { context: "x" }), SpemStatus::Numeric);
    }
}
