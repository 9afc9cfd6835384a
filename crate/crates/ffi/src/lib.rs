//! C ABI over the cfb estimation library.
//!
//! All entry points return a [`CfbStatus`] code; rich error text for the most
//! recent failure on the calling thread is available through
//! [`cfb_last_error_message`]. Datasets, options, and analyses are opaque
//! handles created and destroyed by the paired `_new` / `_free` functions.
//! Buffers are caller-allocated; lengths are validated against the handle.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cfb::balancing::BalanceCriterion;
use cfb::data::{ColumnKind, ObservationalDataset};
use cfb::estimators::{Augmentation, CurveGrid, Method};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status code returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    RuntimeError = 3,
}

/// Estimator family selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfbMethod {
    Proposed = 0,
    AteRkhs = 1,
    Ipw = 2,
    Reg = 3,
}

impl From<CfbMethod> for Method {
    fn from(m: CfbMethod) -> Self {
        match m {
            CfbMethod::Proposed => Method::Proposed,
            CfbMethod::AteRkhs => Method::AteRkhs,
            CfbMethod::Ipw => Method::Ipw,
            CfbMethod::Reg => Method::Reg,
        }
    }
}

/// Outcome-model augmentation selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfbAugmentation {
    None = 0,
    Lm = 1,
    Krr = 2,
}

impl From<CfbAugmentation> for Augmentation {
    fn from(a: CfbAugmentation) -> Self {
        match a {
            CfbAugmentation::None => Augmentation::None,
            CfbAugmentation::Lm => Augmentation::Lm,
            CfbAugmentation::Krr => Augmentation::Krr,
        }
    }
}

/// Treatment arm selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfbArm {
    Treated = 0,
    Control = 1,
}

/// Solver diagnostics for one weight solve.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CfbWeightsDiagnostics {
    pub iterations: usize,
    /// 1 when the stall criterion was met within the iteration cap.
    pub converged: i32,
    /// Best objective value reached.
    pub objective: f64,
    /// Top eigengap of the terminal inner matrix.
    pub eigengap: f64,
}

/// Opaque dataset handle.
pub struct CfbDataset {
    inner: ObservationalDataset,
}

/// Opaque tuning-options handle.
pub struct CfbOptions {
    inner: PipelineConfig,
}

/// Opaque prepared-analysis handle; caches weight solves and fitted models.
pub struct CfbAnalysis {
    inner: Analysis,
}

fn ok_or_status<T>(result: cfb::Result<T>) -> Result<T, CfbStatus> {
    result.map_err(|e| {
        set_last_error(&e.to_string());
        match e {
            cfb::CfbError::InvalidConfig(_)
            | cfb::CfbError::InvalidDataset(_)
            | cfb::CfbError::DimensionMismatch { .. } => CfbStatus::InvalidArgument,
            _ => CfbStatus::RuntimeError,
        }
    })
}

fn guarded(body: impl FnOnce() -> CfbStatus) -> CfbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            CfbStatus::RuntimeError
        }
    }
}

/// Copies the most recent error message for this thread into `buffer` and
/// returns the number of bytes required including the trailing NUL. A zero
/// return means no error has been recorded.
#[no_mangle]
pub extern "C" fn cfb_last_error_message(buffer: *mut c_char, length: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes_with_nul();
        if bytes.len() <= 1 {
            return 0;
        }
        if !buffer.is_null() && length > 0 {
            let n = length.min(bytes.len());
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
                // always NUL-terminate what was written
                *buffer.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Builds a dataset from row-major covariates `x` (`n` rows, `d` columns),
/// a 0/1 treatment vector, outcomes, and the conditioning column indices.
/// `binary_flags` may be null (all columns continuous) or hold one 0/1 flag
/// per column.
///
/// # Safety
/// All pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn cfb_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    treatment: *const i32,
    outcome: *const f64,
    v_cols: *const usize,
    n_v_cols: usize,
    binary_flags: *const u8,
    out: *mut *mut CfbDataset,
) -> CfbStatus {
    guarded(|| {
        if x.is_null()
            || treatment.is_null()
            || outcome.is_null()
            || v_cols.is_null()
            || out.is_null()
        {
            set_last_error("null pointer argument");
            return CfbStatus::NullPointer;
        }
        if n == 0 || d == 0 || n_v_cols == 0 {
            set_last_error("n, d, and n_v_cols must be positive");
            return CfbStatus::InvalidArgument;
        }
        let xs = std::slice::from_raw_parts(x, n * d);
        let ts = std::slice::from_raw_parts(treatment, n);
        let ys = std::slice::from_raw_parts(outcome, n);
        let vs = std::slice::from_raw_parts(v_cols, n_v_cols);
        let kinds: Vec<ColumnKind> = if binary_flags.is_null() {
            vec![ColumnKind::Continuous; d]
        } else {
            std::slice::from_raw_parts(binary_flags, d)
                .iter()
                .map(|&f| {
                    if f == 0 {
                        ColumnKind::Continuous
                    } else {
                        ColumnKind::Binary
                    }
                })
                .collect()
        };
        let mut t = Vec::with_capacity(n);
        for (i, &ti) in ts.iter().enumerate() {
            if ti != 0 && ti != 1 {
                set_last_error(&format!("treatment[{i}] = {ti} is not 0/1"));
                return CfbStatus::InvalidArgument;
            }
            t.push(ti as u8);
        }
        let xm = nalgebra::DMatrix::from_fn(n, d, |i, j| xs[i * d + j]);
        let y = nalgebra::DVector::from_column_slice(ys);
        match ok_or_status(ObservationalDataset::new(xm, t, y, vs.to_vec(), kinds)) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(CfbDataset { inner: ds }));
                CfbStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// # Safety
/// `ds` must be a pointer returned by [`cfb_dataset_new`], or null.
#[no_mangle]
pub unsafe extern "C" fn cfb_dataset_free(ds: *mut CfbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fresh options handle with every knob at its built-in default.
#[no_mangle]
pub extern "C" fn cfb_options_new() -> *mut CfbOptions {
    Box::into_raw(Box::new(CfbOptions {
        inner: PipelineConfig::default(),
    }))
}

/// # Safety
/// `opts` must be a pointer returned by [`cfb_options_new`], or null.
#[no_mangle]
pub unsafe extern "C" fn cfb_options_free(opts: *mut CfbOptions) {
    if !opts.is_null() {
        drop(Box::from_raw(opts));
    }
}

unsafe fn with_options(
    opts: *mut CfbOptions,
    f: impl FnOnce(&mut PipelineConfig) -> CfbStatus,
) -> CfbStatus {
    if opts.is_null() {
        set_last_error("null options handle");
        return CfbStatus::NullPointer;
    }
    f(&mut (*opts).inner)
}

/// Smoothing bandwidth in scaled units; non-positive restores the automatic
/// reference rule.
///
/// # Safety
/// `opts` must be a valid options handle.
#[no_mangle]
pub unsafe extern "C" fn cfb_options_set_bandwidth(opts: *mut CfbOptions, h: f64) -> CfbStatus {
    with_options(opts, |config| {
        config.bandwidth = (h > 0.0).then_some(h);
        CfbStatus::Ok
    })
}

/// Penalty levels; a non-positive value restores that penalty's automatic
/// rule.
///
/// # Safety
/// `opts` must be a valid options handle.
#[no_mangle]
pub unsafe extern "C" fn cfb_options_set_penalties(
    opts: *mut CfbOptions,
    lambda1: f64,
    lambda2: f64,
) -> CfbStatus {
    with_options(opts, |config| {
        config.lambda1 = (lambda1 > 0.0).then_some(lambda1);
        config.lambda2 = (lambda2 > 0.0).then_some(lambda2);
        CfbStatus::Ok
    })
}

/// Quadrature points per conditioning dimension (minimum 51).
///
/// # Safety
/// `opts` must be a valid options handle.
#[no_mangle]
pub unsafe extern "C" fn cfb_options_set_quadrature(
    opts: *mut CfbOptions,
    points: usize,
) -> CfbStatus {
    with_options(opts, |config| {
        if points < 51 {
            set_last_error("quadrature needs at least 51 points per dimension");
            return CfbStatus::InvalidArgument;
        }
        config.quadrature_points = points;
        CfbStatus::Ok
    })
}

/// Subgradient solver controls.
///
/// # Safety
/// `opts` must be a valid options handle.
#[no_mangle]
pub unsafe extern "C" fn cfb_options_set_solver(
    opts: *mut CfbOptions,
    max_iters: usize,
    step0: f64,
    tol_obj: f64,
) -> CfbStatus {
    with_options(opts, |config| {
        if max_iters == 0 || !(step0 > 0.0) || !(tol_obj > 0.0) {
            set_last_error("solver controls must be positive");
            return CfbStatus::InvalidArgument;
        }
        config.max_iters = max_iters;
        config.step0 = step0;
        config.tol_obj = tol_obj;
        CfbStatus::Ok
    })
}

/// Cap on the retained Gram rank; zero restores the full rank.
///
/// # Safety
/// `opts` must be a valid options handle.
#[no_mangle]
pub unsafe extern "C" fn cfb_options_set_rank_cap(
    opts: *mut CfbOptions,
    r_max: usize,
) -> CfbStatus {
    with_options(opts, |config| {
        config.r_max = (r_max > 0).then_some(r_max);
        CfbStatus::Ok
    })
}

/// Prepares an analysis: rescales the data, factorizes the Gram matrix, and
/// precomputes the smoothing state. `opts` may be null for defaults.
///
/// # Safety
/// `ds` must be a valid dataset handle; `out` must be non-null.
#[no_mangle]
pub unsafe extern "C" fn cfb_analysis_new(
    ds: *const CfbDataset,
    opts: *const CfbOptions,
    out: *mut *mut CfbAnalysis,
) -> CfbStatus {
    guarded(|| {
        if ds.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return CfbStatus::NullPointer;
        }
        let config = if opts.is_null() {
            PipelineConfig::default()
        } else {
            (*opts).inner.clone()
        };
        match ok_or_status(Analysis::new(&(*ds).inner, config)) {
            Ok(analysis) => {
                *out = Box::into_raw(Box::new(CfbAnalysis { inner: analysis }));
                CfbStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// # Safety
/// `analysis` must be a pointer returned by [`cfb_analysis_new`], or null.
#[no_mangle]
pub unsafe extern "C" fn cfb_analysis_free(analysis: *mut CfbAnalysis) {
    if !analysis.is_null() {
        drop(Box::from_raw(analysis));
    }
}

/// The bandwidth the analysis resolved to (scaled units).
///
/// # Safety
/// `analysis` must be a valid analysis handle; `out` must be non-null.
#[no_mangle]
pub unsafe extern "C" fn cfb_analysis_bandwidth(
    analysis: *const CfbAnalysis,
    out: *mut f64,
) -> CfbStatus {
    if analysis.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return CfbStatus::NullPointer;
    }
    *out = (*analysis).inner.bandwidth();
    CfbStatus::Ok
}

/// Writes the default evaluation grid (original units, 5th to 95th sample
/// quantiles) into `out_grid`, which must hold `points` doubles.
///
/// # Safety
/// Pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn cfb_analysis_default_grid(
    analysis: *const CfbAnalysis,
    points: usize,
    out_grid: *mut f64,
) -> CfbStatus {
    guarded(|| {
        if analysis.is_null() || out_grid.is_null() {
            set_last_error("null pointer argument");
            return CfbStatus::NullPointer;
        }
        match ok_or_status((*analysis).inner.grid(GridSpec::Quantiles { points })) {
            Ok(grid) => {
                std::ptr::copy_nonoverlapping(grid.original.as_ptr(), out_grid, points);
                CfbStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Estimates an effect curve on a caller-supplied grid in original units.
/// `out_estimates` must hold `grid_len` doubles.
///
/// # Safety
/// Pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn cfb_analysis_curve(
    analysis: *mut CfbAnalysis,
    method: CfbMethod,
    augmentation: CfbAugmentation,
    grid: *const f64,
    grid_len: usize,
    out_estimates: *mut f64,
) -> CfbStatus {
    guarded(|| {
        if analysis.is_null() || grid.is_null() || out_estimates.is_null() {
            set_last_error("null pointer argument");
            return CfbStatus::NullPointer;
        }
        if grid_len == 0 {
            set_last_error("grid must be non-empty");
            return CfbStatus::InvalidArgument;
        }
        let handle = &mut *analysis;
        let original = std::slice::from_raw_parts(grid, grid_len).to_vec();
        let v_col = handle.inner.ds().v_cols()[0];
        let curve_grid = CurveGrid::from_original(original, handle.inner.scaling(), v_col);
        match ok_or_status(handle.inner.curve(method.into(), augmentation.into(), &curve_grid)) {
            Ok(output) => {
                std::ptr::copy_nonoverlapping(
                    output.curve.estimate.as_ptr(),
                    out_estimates,
                    grid_len,
                );
                CfbStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Solves balancing weights for one arm. `method` must be `Proposed` or
/// `AteRkhs`. `out_weights` must hold one double per sample; inactive-arm
/// entries are written as 1. `out_diagnostics` may be null.
///
/// # Safety
/// Pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn cfb_analysis_weights(
    analysis: *mut CfbAnalysis,
    method: CfbMethod,
    arm: CfbArm,
    out_weights: *mut f64,
    out_diagnostics: *mut CfbWeightsDiagnostics,
) -> CfbStatus {
    guarded(|| {
        if analysis.is_null() || out_weights.is_null() {
            set_last_error("null pointer argument");
            return CfbStatus::NullPointer;
        }
        let criterion = match method {
            CfbMethod::Proposed => BalanceCriterion::Smoothed,
            CfbMethod::AteRkhs => BalanceCriterion::MarginalLimit,
            _ => {
                set_last_error("weights require method Proposed or AteRkhs");
                return CfbStatus::InvalidArgument;
            }
        };
        let handle = &mut *analysis;
        match ok_or_status(handle.inner.weights(criterion)) {
            Ok((treated, control)) => {
                let solved = match arm {
                    CfbArm::Treated => treated,
                    CfbArm::Control => control,
                };
                std::ptr::copy_nonoverlapping(
                    solved.w.as_slice().as_ptr(),
                    out_weights,
                    solved.w.len(),
                );
                if !out_diagnostics.is_null() {
                    let best = solved
                        .objective_trace
                        .iter()
                        .cloned()
                        .fold(f64::INFINITY, f64::min);
                    *out_diagnostics = CfbWeightsDiagnostics {
                        iterations: solved.iterations,
                        converged: i32::from(solved.converged),
                        objective: best,
                        eigengap: solved.final_eigengap,
                    };
                }
                CfbStatus::Ok
            }
            Err(status) => status,
        }
    })
}
