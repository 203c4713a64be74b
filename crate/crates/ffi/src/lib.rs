//! C interface to the crossbar simulator.
//!
//! Every function returns an [`MxStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be fetched with
//! [`mx_last_error`]. Handles are opaque and must be released with
//! [`mx_crossbar_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use memxbar::crossbar::{CrossbarArray, CrossbarConfig, SolverMode};
use memxbar::device::VariabilityConfig;
use memxbar::seed::{self, SimRng};
use memxbar::tuning::{self, TuningConfig};
use memxbar::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InvalidConfig = 3,
    SolverFailed = 4,
    InvalidState = 5,
    Io = 6,
    Panic = 7,
}

/// Solver selection for [`mx_crossbar_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MxSolver {
    Ideal = 0,
    Nodal = 1,
}

/// Outcome of [`mx_crossbar_tune_device`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MxTuneResult {
    /// Last verified read conductance in siemens.
    pub achieved: f64,
    pub pulses: u32,
    /// 1 when the last read was within tolerance.
    pub converged: u8,
}

/// Opaque crossbar handle owning its array and random stream.
pub struct MxCrossbar {
    array: CrossbarArray,
    rng: SimRng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MxStatus {
    match e {
        Error::Config(_) => MxStatus::InvalidConfig,
        Error::Input(_) => MxStatus::InvalidInput,
        Error::Solver { .. } => MxStatus::SolverFailed,
        Error::State(_) => MxStatus::InvalidState,
        Error::Format { .. } | Error::Io(_) => MxStatus::Io,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MxStatus, String)>) -> MxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MxStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MxStatus::Panic
        }
    }
}

fn lift(e: Error) -> (MxStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MxStatus, String) {
    (MxStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a>(h: *mut MxCrossbar) -> Result<&'a mut MxCrossbar, (MxStatus, String)> {
    h.as_mut().ok_or_else(|| null("crossbar handle"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (MxStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mx_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Sample a `rows x cols` array with default device variability. All
/// randomness derives from `seed`.
///
/// # Safety
/// `out_handle` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_new(
    rows: usize,
    cols: usize,
    seed: u64,
    solver: MxSolver,
    out_handle: *mut *mut MxCrossbar,
) -> MxStatus {
    guard(|| {
        let slot = out(out_handle, "output handle")?;
        let config = CrossbarConfig {
            rows,
            cols,
            solver_mode: match solver {
                MxSolver::Ideal => SolverMode::Ideal,
                MxSolver::Nodal => SolverMode::Nodal,
            },
            ..CrossbarConfig::default()
        };
        let mut rng = seed::stream(seed, 0, "ffi");
        let array = CrossbarArray::sample(config, &VariabilityConfig::default(), &mut rng).map_err(lift)?;
        *slot = Box::into_raw(Box::new(MxCrossbar { array, rng }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from [`mx_crossbar_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_free(h: *mut MxCrossbar) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Array shape.
///
/// # Safety
/// `h`, `rows` and `cols` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_shape(h: *mut MxCrossbar, rows: *mut usize, cols: *mut usize) -> MxStatus {
    guard(|| {
        let x = handle(h)?;
        *out(rows, "rows")? = x.array.rows();
        *out(cols, "cols")? = x.array.cols();
        Ok(())
    })
}

/// True (noise-free) read conductance of one device in siemens.
///
/// # Safety
/// `h` and `g` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_conductance(h: *mut MxCrossbar, row: usize, col: usize, g: *mut f64) -> MxStatus {
    guard(|| {
        let x = handle(h)?;
        *out(g, "conductance")? = x.array.conductance(row, col).map_err(lift)?;
        Ok(())
    })
}

/// Force one device to `g` siemens, clamped to its bounds. Stuck devices are
/// left unchanged.
///
/// # Safety
/// `h` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_set_conductance(h: *mut MxCrossbar, row: usize, col: usize, g: f64) -> MxStatus {
    guard(|| {
        let x = handle(h)?;
        if !g.is_finite() {
            return Err((MxStatus::InvalidInput, format!("conductance {g} is not finite")));
        }
        x.array.set_conductance(row, col, g).map_err(lift)
    })
}

/// Measured read conductance through the configured solver, with read noise.
///
/// # Safety
/// `h` and `g` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_read(h: *mut MxCrossbar, row: usize, col: usize, g: *mut f64) -> MxStatus {
    guard(|| {
        let x = handle(h)?;
        let MxCrossbar { array, rng } = x;
        *out(g, "conductance")? = array.read_conductance(row, col, rng).map_err(lift)?;
        Ok(())
    })
}

/// Half-biased write pulse of `amplitude` volts on one device.
///
/// # Safety
/// `h` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_write(h: *mut MxCrossbar, row: usize, col: usize, amplitude: f64) -> MxStatus {
    guard(|| {
        let MxCrossbar { array, rng } = handle(h)?;
        array.apply_write(row, col, amplitude, rng).map_err(lift)
    })
}

/// Column drive `v` (length `cols`) to row currents `i_out` (length `rows`).
///
/// # Safety
/// `v` must point to `n_v` doubles and `i_out` to `n_out` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_vmm(
    h: *mut MxCrossbar,
    v: *const f64,
    n_v: usize,
    i_out: *mut f64,
    n_out: usize,
) -> MxStatus {
    guard(|| {
        let MxCrossbar { array, rng } = handle(h)?;
        if v.is_null() {
            return Err(null("drive vector"));
        }
        if i_out.is_null() {
            return Err(null("output vector"));
        }
        if n_out != array.rows() {
            return Err((
                MxStatus::InvalidInput,
                format!("output length {n_out} does not match {} rows", array.rows()),
            ));
        }
        let drive = std::slice::from_raw_parts(v, n_v);
        let rows = array.rows();
        let currents = array.vmm(drive, rows, rng).map_err(lift)?;
        std::slice::from_raw_parts_mut(i_out, n_out).copy_from_slice(&currents);
        Ok(())
    })
}

/// Write-verify tune one device toward `target` siemens at `tolerance_rel`
/// using the default pulse schedule.
///
/// # Safety
/// `h` and `result` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mx_crossbar_tune_device(
    h: *mut MxCrossbar,
    row: usize,
    col: usize,
    target: f64,
    tolerance_rel: f64,
    result: *mut MxTuneResult,
) -> MxStatus {
    guard(|| {
        let MxCrossbar { array, rng } = handle(h)?;
        let slot = out(result, "result")?;
        let cfg = TuningConfig::with_tolerance(tolerance_rel);
        let d = tuning::tune_device(array, row, col, target, &cfg, rng).map_err(lift)?;
        *slot = MxTuneResult {
            achieved: d.achieved,
            pulses: u32::try_from(d.pulses_used).unwrap_or(u32::MAX),
            converged: u8::from(d.converged),
        };
        Ok(())
    })
}

/// Signed tuning error `100 * (target - actual) / target` in percent.
///
/// # Safety
/// `pct` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mx_tuning_error(target: f64, actual: f64, pct: *mut f64) -> MxStatus {
    guard(|| {
        *out(pct, "error")? = tuning::tuning_error(target, actual).map_err(lift)?;
        Ok(())
    })
}
