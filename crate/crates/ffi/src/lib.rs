//! C ABI for coverage tables and one-shot calibration.
//!
//! Every function returns a [`FedcalStatus`]. On failure the message is
//! available from [`fedcal_last_error`] on the same thread until the next call.
//! Panics are caught at the boundary and reported as `FEDCAL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fedcal::conformal::fedcp_qq_calibrate;
use fedcal::coverage_table::{CoverageTable, QQIndex, TableKey};
use fedcal::order_stats::ScoreMatrix;
use fedcal::FedcalError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedcalStatus {
    Ok = 0,
    InvalidArgument = 1,
    ResourceLimit = 2,
    Infeasible = 3,
    Internal = 4,
    ProtocolViolation = 5,
    Parse = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

/// Opaque coverage table for one `(m, n)`.
pub struct FedcalTable {
    inner: CoverageTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FedcalError) -> FedcalStatus {
    match e {
        FedcalError::InvalidArgument(_) => FedcalStatus::InvalidArgument,
        FedcalError::ResourceLimit(_) => FedcalStatus::ResourceLimit,
        FedcalError::Infeasible(_) => FedcalStatus::Infeasible,
        FedcalError::Internal(_) => FedcalStatus::Internal,
        FedcalError::ProtocolViolation(_) => FedcalStatus::ProtocolViolation,
        FedcalError::Parse { .. } => FedcalStatus::Parse,
        FedcalError::Io(_) => FedcalStatus::Io,
    }
}

struct Null(&'static str);

enum Failure {
    Lib(FedcalError),
    Null(&'static str),
}

impl From<FedcalError> for Failure {
    fn from(e: FedcalError) -> Self {
        Failure::Lib(e)
    }
}

impl From<Null> for Failure {
    fn from(n: Null) -> Self {
        Failure::Null(n.0)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FedcalStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedcalStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            FedcalStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FedcalStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Null> {
    p.as_mut().ok_or(Null(name))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| FedcalError::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Message for the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn fedcal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Create an empty table for `m` agents with `n` scores each.
///
/// # Safety
/// `out_table` must be a valid pointer. Release the result with [`fedcal_table_free`].
#[no_mangle]
pub unsafe extern "C" fn fedcal_table_new(m: usize, n: usize, out_table: *mut *mut FedcalTable) -> FedcalStatus {
    guard(|| {
        let slot = out(out_table, "out_table")?;
        let key = TableKey::new(m, n)?;
        *slot = Box::into_raw(Box::new(FedcalTable {
            inner: CoverageTable::new(key),
        }));
        Ok(())
    })
}

/// Load a table written by [`fedcal_table_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_table` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedcal_table_load(path: *const c_char, out_table: *mut *mut FedcalTable) -> FedcalStatus {
    guard(|| {
        let slot = out(out_table, "out_table")?;
        let inner = CoverageTable::load(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(FedcalTable { inner }));
        Ok(())
    })
}

/// # Safety
/// `table` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedcal_table_save(table: *const FedcalTable, path: *const c_char) -> FedcalStatus {
    guard(|| {
        let t = table.as_ref().ok_or(Null("table"))?;
        t.inner.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Destroy a table. Null is ignored.
///
/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedcal_table_free(table: *mut FedcalTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Coverage `M_{l,k}`, evaluated and cached on demand.
///
/// # Safety
/// `table` must come from this library and `out_coverage` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedcal_table_entry(
    table: *mut FedcalTable,
    l: usize,
    k: usize,
    out_coverage: *mut f64,
) -> FedcalStatus {
    guard(|| {
        let t = table.as_mut().ok_or(Null("table"))?;
        let slot = out(out_coverage, "out_coverage")?;
        *slot = t.inner.entry(QQIndex::new(l, k))?;
        Ok(())
    })
}

/// Pick `(l*, k*)` for miscoverage `alpha`.
///
/// # Safety
/// `table` must come from this library; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedcal_table_select(
    table: *mut FedcalTable,
    alpha: f64,
    out_l: *mut usize,
    out_k: *mut usize,
    out_coverage: *mut f64,
) -> FedcalStatus {
    guard(|| {
        let t = table.as_mut().ok_or(Null("table"))?;
        let (l, k, c) = (out(out_l, "out_l")?, out(out_k, "out_k")?, out(out_coverage, "out_coverage")?);
        let sel = t.inner.select(alpha)?;
        (*l, *k, *c) = (sel.index.l, sel.index.k, sel.coverage);
        Ok(())
    })
}

/// Calibrate from `m * n` scores laid out agent by agent.
///
/// `table` may be null; otherwise it must match `(m, n)` and is filled as a side effect.
/// `out_q_hat` is `+inf` when no finite threshold gives the target coverage.
///
/// # Safety
/// `scores` must point to `m * n` doubles; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedcal_calibrate_qq(
    scores: *const f64,
    m: usize,
    n: usize,
    alpha: f64,
    table: *mut FedcalTable,
    out_q_hat: *mut f64,
    out_l: *mut usize,
    out_k: *mut usize,
    out_coverage: *mut f64,
) -> FedcalStatus {
    guard(|| {
        if scores.is_null() {
            return Err(Failure::Null("scores"));
        }
        let total = m
            .checked_mul(n)
            .ok_or_else(|| FedcalError::InvalidArgument("m * n overflows".into()))?;
        let (q, l, k, c) = (
            out(out_q_hat, "out_q_hat")?,
            out(out_l, "out_l")?,
            out(out_k, "out_k")?,
            out(out_coverage, "out_coverage")?,
        );
        let flat = std::slice::from_raw_parts(scores, total);
        let matrix = ScoreMatrix::from_rows(flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect())?;
        let tab = table.as_mut().map(|t| &mut t.inner);
        let r = fedcp_qq_calibrate(&matrix, alpha, tab)?;
        let (rl, rk) = match r.params {
            fedcal::conformal::CalibrationParams::FedcpQq { l, k, .. } => (l, k),
            _ => return Err(FedcalError::Internal("unexpected parameter kind".into()).into()),
        };
        (*q, *l, *k, *c) = (r.q_hat.value(), rl, rk, r.guaranteed_coverage.unwrap_or(f64::NAN));
        Ok(())
    })
}

/// Rank correction for private local quantiles.
///
/// # Safety
/// `out_l_cor` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedcal_l_cor(
    epsilon: f64,
    bins: usize,
    m: usize,
    gamma_alpha: f64,
    out_l_cor: *mut usize,
) -> FedcalStatus {
    guard(|| {
        let slot = out(out_l_cor, "out_l_cor")?;
        *slot = fedcal::privacy::l_cor(epsilon, bins, m, gamma_alpha)?;
        Ok(())
    })
}
