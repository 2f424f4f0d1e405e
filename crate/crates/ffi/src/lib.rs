//! C ABI for `ecoinf`.
//!
//! Every fallible function returns an [`EcoinfStatus`]. On failure the message
//! is kept per thread and can be copied out with [`ecoinf_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Panics never cross the boundary; they surface as `ECOINF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ecoinf::evaluate::{roc_auc, ProbabilityModel};
use ecoinf::likelihood::{self, GaussianApprox};
use ecoinf::optimize::{self, FitConfig, FitReport, Method};
use ecoinf::poibin::{self, ProbVector};
use ecoinf::{Dataset, Error, LogitModel, PrecinctData};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcoinfStatus {
    Ok = 0,
    /// A required pointer was null.
    Null = 1,
    Domain = 2,
    Validation = 3,
    Evaluation = 4,
    Capability = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcoinfMethod {
    Gauss = 0,
    GaussBt = 1,
    GaussBtExact = 2,
    AggregateLr = 3,
}

/// Fit settings; start from `ecoinf_fit_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EcoinfFitOptions {
    /// An `EcoinfMethod` value.
    pub method: u32,
    pub iters_total: usize,
    pub iters_phase1: usize,
    pub iters_phase3: usize,
    pub lr: f64,
    pub phi2_floor: f64,
    pub seed: u64,
}

/// Precinct data: covariates (intercept included by the caller) and counts.
pub struct EcoinfDataset {
    data: Dataset,
}

/// A fitted logistic model and its report.
pub struct EcoinfFit {
    model: LogitModel,
    report: FitReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EcoinfStatus {
    match e {
        Error::Domain(_) => EcoinfStatus::Domain,
        Error::Validation(_) | Error::Csv(_) | Error::Json(_) => EcoinfStatus::Validation,
        Error::Evaluation(_) => EcoinfStatus::Evaluation,
        Error::Capability(_) => EcoinfStatus::Capability,
        Error::Io { .. } => EcoinfStatus::Io,
    }
}

struct Fail(EcoinfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EcoinfStatus::Null, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EcoinfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EcoinfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EcoinfStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or point to `n` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EcoinfStatus::Validation, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ecoinf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns the buffer size needed for the whole message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len) - 1;
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// `ln P(S = k)` for the sum of `n` independent Bernoulli(`p[j]`) variables.
///
/// # Safety
/// `p` must point to `n` values and `out` to one writable value.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_poibin_log_pmf(p: *const f64, n: usize, k: usize, out: *mut f64) -> EcoinfStatus {
    guard(|| {
        let pv = ProbVector::new(slice(p, n, "p")?.to_vec())?;
        *out_ref(out, "out")? = poibin::log_pmf(&pv, k)?;
        Ok(())
    })
}

/// Writes `P(S = 0), …, P(S = n)` into `out`, which holds `n + 1` values.
///
/// # Safety
/// `p` must point to `n` values and `out` to `n + 1` writable values.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_poibin_pmf(p: *const f64, n: usize, out: *mut f64) -> EcoinfStatus {
    guard(|| {
        let pv = ProbVector::new(slice(p, n, "p")?.to_vec())?;
        slice_mut(out, n + 1, "out")?.copy_from_slice(&poibin::pmf_vector(&pv));
        Ok(())
    })
}

/// Builds a dataset from `n_precincts` precincts. Voter rows are stored
/// row-major in `x`, precinct after precinct, `dim` values each; precinct `i`
/// has `sizes[i]` voters and observed total `counts[i]`.
///
/// # Safety
/// `x` must hold `dim · Σ sizes` values, `sizes` and `counts` `n_precincts`
/// values each, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_dataset_from_arrays(
    x: *const f64,
    dim: usize,
    sizes: *const usize,
    counts: *const usize,
    n_precincts: usize,
    out: *mut *mut EcoinfDataset,
) -> EcoinfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let sizes = slice(sizes, n_precincts, "sizes")?;
        let counts = slice(counts, n_precincts, "counts")?;
        let total: usize = sizes.iter().sum();
        let x = slice(x, total * dim, "x")?;
        let mut precincts = Vec::with_capacity(n_precincts);
        let mut row = 0;
        for (i, (&size, &count)) in sizes.iter().zip(counts).enumerate() {
            let rows: Vec<Vec<f64>> = (row..row + size).map(|r| x[r * dim..(r + 1) * dim].to_vec()).collect();
            precincts.push(PrecinctData::from_rows(format!("p{i}"), &rows, count)?);
            row += size;
        }
        let data = Dataset::from_precincts(precincts)?;
        *out = Box::into_raw(Box::new(EcoinfDataset { data }));
        Ok(())
    })
}

/// Loads `voters.csv` and `counts.csv`; an intercept column is prepended.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_dataset_load(
    voters: *const c_char,
    counts: *const c_char,
    standardize: bool,
    out: *mut *mut EcoinfDataset,
) -> EcoinfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let data = ecoinf::data::load_dataset(&path(voters, "voters")?, &path(counts, "counts")?, standardize)?;
        *out = Box::into_raw(Box::new(EcoinfDataset { data }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_dataset_free(ds: *mut EcoinfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of design columns, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_dataset_dim(ds: *const EcoinfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.dim())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_dataset_precincts(ds: *const EcoinfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.len())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_dataset_voters(ds: *const EcoinfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.n_voters())
}

unsafe fn model_of<'a>(ds: *const EcoinfDataset, beta: *const f64, dim: usize) -> Result<(&'a Dataset, LogitModel), Fail> {
    let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.data;
    if dim != data.dim() {
        return Err(Fail(
            EcoinfStatus::Domain,
            format!("{dim} coefficients for {} design columns", data.dim()),
        ));
    }
    Ok((data, LogitModel::from_slice(slice(beta, dim, "beta")?)?))
}

/// Exact log-likelihood at `beta`.
///
/// # Safety
/// `ds` must be a live handle, `beta` must hold `dim` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_exact_loglik(ds: *const EcoinfDataset, beta: *const f64, dim: usize, out: *mut f64) -> EcoinfStatus {
    guard(|| {
        let (data, m) = model_of(ds, beta, dim)?;
        *out_ref(out, "out")? = likelihood::exact_loglik(&m, data)?;
        Ok(())
    })
}

/// Exact gradient at `beta`, written to `grad` (`dim` values).
///
/// # Safety
/// As for `ecoinf_exact_loglik`, with `grad` holding `dim` writable values.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_exact_grad(ds: *const EcoinfDataset, beta: *const f64, dim: usize, grad: *mut f64) -> EcoinfStatus {
    guard(|| {
        let (data, m) = model_of(ds, beta, dim)?;
        let g = likelihood::exact_grad(&m, data)?;
        slice_mut(grad, dim, "grad")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Gaussian-approximation log-likelihood at `beta`, default variance floor.
///
/// # Safety
/// As for `ecoinf_exact_loglik`.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_approx_loglik(ds: *const EcoinfDataset, beta: *const f64, dim: usize, out: *mut f64) -> EcoinfStatus {
    guard(|| {
        let (data, m) = model_of(ds, beta, dim)?;
        *out_ref(out, "out")? = GaussianApprox::default().loglik(&m, data)?;
        Ok(())
    })
}

/// Gradient of the Gaussian approximation at `beta`.
///
/// # Safety
/// As for `ecoinf_exact_grad`.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_approx_grad(ds: *const EcoinfDataset, beta: *const f64, dim: usize, grad: *mut f64) -> EcoinfStatus {
    guard(|| {
        let (data, m) = model_of(ds, beta, dim)?;
        let g = GaussianApprox::default().grad(&m, data)?;
        slice_mut(grad, dim, "grad")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Library defaults, with `method` (an `EcoinfMethod` value) filled in.
#[no_mangle]
pub extern "C" fn ecoinf_fit_options_default(method: u32) -> EcoinfFitOptions {
    let c = FitConfig::default();
    EcoinfFitOptions {
        method,
        iters_total: c.iters_total,
        iters_phase1: c.iters_phase1,
        iters_phase3: c.iters_phase3,
        lr: c.lr,
        phi2_floor: c.phi2_floor,
        seed: c.seed,
    }
}

/// Fits a logistic model. A diverged fit still succeeds; check
/// `ecoinf_fit_diverged`.
///
/// # Safety
/// `ds` must be a live handle, `opts` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit(ds: *const EcoinfDataset, opts: *const EcoinfFitOptions, out: *mut *mut EcoinfFit) -> EcoinfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.data;
        let o = opts.as_ref().ok_or_else(|| null("options"))?;
        let cfg = FitConfig {
            method: match o.method {
                m if m == EcoinfMethod::Gauss as u32 => Method::Gauss,
                m if m == EcoinfMethod::GaussBt as u32 => Method::GaussBt,
                m if m == EcoinfMethod::GaussBtExact as u32 => Method::GaussBtExact,
                m if m == EcoinfMethod::AggregateLr as u32 => Method::AggregateLr,
                m => return Err(Fail(EcoinfStatus::Domain, format!("unknown method {m}"))),
            },
            iters_total: o.iters_total,
            iters_phase1: o.iters_phase1,
            iters_phase3: o.iters_phase3,
            lr: o.lr,
            phi2_floor: o.phi2_floor,
            seed: o.seed,
            ..FitConfig::default()
        };
        let (model, report) = optimize::fit(data, &cfg)?;
        *out = Box::into_raw(Box::new(EcoinfFit { model, report }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from `ecoinf_fit`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_free(fit: *mut EcoinfFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of fitted coefficients, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_dim(fit: *const EcoinfFit) -> usize {
    fit.as_ref().map_or(0, |f| f.model.dim())
}

/// Copies the coefficients into `beta`, which holds `dim` values.
///
/// # Safety
/// `fit` must be a live handle and `beta` hold `dim` writable values.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_beta(fit: *const EcoinfFit, beta: *mut f64, dim: usize) -> EcoinfStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if dim != f.model.dim() {
            return Err(Fail(EcoinfStatus::Domain, format!("buffer of {dim} for {} coefficients", f.model.dim())));
        }
        slice_mut(beta, dim, "beta")?.copy_from_slice(f.model.beta().as_slice());
        Ok(())
    })
}

/// 1 if the fit was flagged as diverged, 0 otherwise (and for null).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_diverged(fit: *const EcoinfFit) -> i32 {
    fit.as_ref().map_or(0, |f| i32::from(f.report.diverged))
}

/// Final value of the objective the method optimized.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_final_objective(fit: *const EcoinfFit, out: *mut f64) -> EcoinfStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let v = f
            .report
            .final_objective
            .ok_or_else(|| Fail(EcoinfStatus::Evaluation, "the final objective is unavailable".into()))?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// The fit report as a JSON string; release it with `ecoinf_string_free`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_report_json(fit: *const EcoinfFit, out: *mut *mut c_char) -> EcoinfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let json = serde_json::to_string(&f.report).map_err(Error::from)?;
        *out = CString::new(json).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// Per-voter probabilities for every voter of `ds`, in dataset order.
///
/// # Safety
/// Handles must be live and `out` hold `len` writable values, where `len`
/// equals `ecoinf_dataset_voters(ds)`.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_fit_predict(fit: *const EcoinfFit, ds: *const EcoinfDataset, out: *mut f64, len: usize) -> EcoinfStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.data;
        if len != data.n_voters() {
            return Err(Fail(EcoinfStatus::Domain, format!("buffer of {len} for {} voters", data.n_voters())));
        }
        if f.model.dim() != data.dim() {
            return Err(Fail(EcoinfStatus::Domain, "model and dataset dimensions differ".into()));
        }
        let out = slice_mut(out, len, "out")?;
        let mut at = 0;
        for pr in data.precincts() {
            let p = f.model.voter_probs(pr)?;
            out[at..at + p.len()].copy_from_slice(&p);
            at += p.len();
        }
        Ok(())
    })
}

/// ROC AUC of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` values each and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> EcoinfStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        if let Some(bad) = l.iter().find(|&&v| v > 1) {
            return Err(Fail(EcoinfStatus::Domain, format!("label {bad} is not 0 or 1")));
        }
        let l: Vec<bool> = l.iter().map(|&v| v == 1).collect();
        *out_ref(out, "out")? = roc_auc(s, &l)?;
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecoinf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
