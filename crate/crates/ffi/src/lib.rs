//! C ABI for `markalign`.
//!
//! Models and tilted chains are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`MkStatus`]; the message of the last failure on the calling thread is
//! available from [`mk_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use markalign::align::{scan_peaks_auto, Sequences};
use markalign::error::Error;
use markalign::map_constants::{normalize_score, p_value, simulate_ladder, GumbelParams, LadderOptions};
use markalign::model::{load_model, parse_model, ScoreModel};
use markalign::spectral::{phi, solve_theta_star, TiltedModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidModel = 2,
    Parse = 3,
    ConvergenceFailure = 4,
    DriftNotNegative = 5,
    NoPositiveCycle = 6,
    NotIid = 7,
    Unbounded = 8,
    InsufficientReplicates = 9,
    SeedRequired = 10,
    ConditionNotVerified = 11,
    SymbolOutOfAlphabet = 12,
    InvalidArgument = 13,
    Io = 14,
    InvalidUtf8 = 15,
    Panic = 16,
}

impl From<&Error> for MkStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidModel(_) => MkStatus::InvalidModel,
            Error::Parse { .. } => MkStatus::Parse,
            Error::ConvergenceFailure { .. } => MkStatus::ConvergenceFailure,
            Error::DriftNotNegative { .. } => MkStatus::DriftNotNegative,
            Error::NoPositiveCycle => MkStatus::NoPositiveCycle,
            Error::NotIid(_) => MkStatus::NotIid,
            Error::Unbounded { .. } => MkStatus::Unbounded,
            Error::InsufficientReplicates { .. } => MkStatus::InsufficientReplicates,
            Error::SeedRequired => MkStatus::SeedRequired,
            Error::ConditionNotVerified(_) => MkStatus::ConditionNotVerified,
            Error::SymbolOutOfAlphabet { .. } => MkStatus::SymbolOutOfAlphabet,
            Error::InvalidArgument(_) => MkStatus::InvalidArgument,
            Error::Io(_) => MkStatus::Io,
        }
    }
}

/// A validated scoring model.
pub struct MkModel(ScoreModel);

/// The tilted chain at `θ*` of a model.
pub struct MkTilted(TiltedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(MkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(MkStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MkStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MkStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MkStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MkStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn square(values: &[f64], n: usize) -> Vec<Vec<f64>> {
    values.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next `mk_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Load a model from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mk_model_load(path: *const c_char, out: *mut *mut MkModel) -> MkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        *out = Box::into_raw(Box::new(MkModel(load_model(path)?)));
        Ok(())
    })
}

/// Parse a model from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mk_model_parse(text: *const c_char, out: *mut *mut MkModel) -> MkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        *out = Box::into_raw(Box::new(MkModel(parse_model(text, "<memory>")?)));
        Ok(())
    })
}

/// Build a pair-score model from row-major `n × n` matrices `p`, `q` and `score`.
///
/// # Safety
/// Each matrix pointer must reference `n * n` readable doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_model_pair(
    n: usize,
    p: *const f64,
    q: *const f64,
    score: *const f64,
    out: *mut *mut MkModel,
) -> MkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if n == 0 {
            return Err(Failure(MkStatus::InvalidArgument, "alphabet is empty".into()));
        }
        let len = n.checked_mul(n).ok_or_else(|| Failure(MkStatus::InvalidArgument, "alphabet too large".into()))?;
        let p = square(slice_arg(p, len, "p")?, n);
        let q = square(slice_arg(q, len, "q")?, n);
        let f = square(slice_arg(score, len, "score")?, n);
        *out = Box::into_raw(Box::new(MkModel(ScoreModel::pair(p, q, f)?)));
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from a `mk_model_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mk_model_free(model: *mut MkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Alphabet size, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_model_n_states(model: *const MkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_states())
}

/// Whether the model's scores live on an integer lattice after rescaling.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_model_lattice(model: *const MkModel) -> bool {
    model.as_ref().is_some_and(|m| m.0.lattice())
}

/// Perron root `φ(θ)` of the tilted matrix.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mk_phi(model: *const MkModel, theta: f64, out: *mut f64) -> MkStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let out = out_arg(out, "out")?;
        *out = phi(&model.0, theta)?;
        Ok(())
    })
}

/// Solve `φ(θ*) = 1` and return the tilted chain.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mk_tilted_solve(model: *const MkModel, out: *mut *mut MkTilted) -> MkStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(MkTilted(solve_theta_star(&model.0)?)));
        Ok(())
    })
}

/// Release a tilted chain. NULL is ignored.
///
/// # Safety
/// `tilted` must come from [`mk_tilted_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mk_tilted_free(tilted: *mut MkTilted) {
    if !tilted.is_null() {
        drop(Box::from_raw(tilted));
    }
}

/// `θ*`, or NaN for NULL.
///
/// # Safety
/// `tilted` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_tilted_theta_star(tilted: *const MkTilted) -> f64 {
    tilted.as_ref().map_or(f64::NAN, |t| t.0.theta_star)
}

/// Mean score under the tilted chain, or NaN for NULL.
///
/// # Safety
/// `tilted` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_tilted_mu_star(tilted: *const MkTilted) -> f64 {
    tilted.as_ref().map_or(f64::NAN, |t| t.0.mu_star)
}

/// Estimate `K*` and its standard error by ladder simulation.
///
/// # Safety
/// `model` and `tilted` must be live handles for the same model; the output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_k_star(
    model: *const MkModel,
    tilted: *const MkTilted,
    seed: u64,
    cycles: usize,
    tail_samples: usize,
    out_k: *mut f64,
    out_stderr: *mut f64,
) -> MkStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let tilted = ref_arg(tilted, "tilted")?;
        let out_k = out_arg(out_k, "out_k")?;
        let out_stderr = out_arg(out_stderr, "out_stderr")?;
        let opts = LadderOptions { cycles, tail_samples, seed: Some(seed), ..LadderOptions::default() };
        let stats = simulate_ladder(&model.0, &tilted.0, &opts)?;
        *out_k = stats.k_star;
        *out_stderr = stats.k_star_stderr;
        Ok(())
    })
}

/// Best local score `Mₙ` and the count `Cₙ(t)` of excursion peaks above `t`.
///
/// Sequences are given as state indices `0..n_states`.
///
/// # Safety
/// `x` and `y` must reference `n_x` and `n_y` readable bytes; the output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_align(
    model: *const MkModel,
    x: *const u8,
    n_x: usize,
    y: *const u8,
    n_y: usize,
    t: f64,
    out_max: *mut f64,
    out_count: *mut usize,
) -> MkStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let out_max = out_arg(out_max, "out_max")?;
        let out_count = out_arg(out_count, "out_count")?;
        if t.is_nan() {
            return Err(Failure(MkStatus::InvalidArgument, "t is NaN".into()));
        }
        let x = slice_arg(x, n_x, "x")?.to_vec();
        let y = slice_arg(y, n_y, "y")?.to_vec();
        let seqs = Sequences::new(&model.0, x, y)?;
        let summary = scan_peaks_auto(&model.0, &seqs, t.max(0.0));
        *out_max = summary.m_n;
        *out_count = summary.c_of_t(t.max(0.0));
        Ok(())
    })
}

/// Normalized score `s'` and Gumbel tail `ℙ(Mₙ > s)`.
///
/// # Safety
/// The output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_normalize_score(
    theta_star: f64,
    k_star: f64,
    lattice: bool,
    s: f64,
    n_x: usize,
    n_y: usize,
    out_s_prime: *mut f64,
    out_p: *mut f64,
) -> MkStatus {
    guard(|| {
        let out_s_prime = out_arg(out_s_prime, "out_s_prime")?;
        let out_p = out_arg(out_p, "out_p")?;
        let params = gumbel(theta_star, k_star, lattice, n_x, n_y)?;
        let (sp, p) = normalize_score(&params, s, n_x, n_y);
        *out_s_prime = sp;
        *out_p = p;
        Ok(())
    })
}

/// Approximate p-value `ℙ(Mₙ ≥ s)` of an observed best score.
///
/// # Safety
/// `out_p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_p_value(
    theta_star: f64,
    k_star: f64,
    lattice: bool,
    s: f64,
    n_x: usize,
    n_y: usize,
    out_p: *mut f64,
) -> MkStatus {
    guard(|| {
        let out_p = out_arg(out_p, "out_p")?;
        let params = gumbel(theta_star, k_star, lattice, n_x, n_y)?;
        *out_p = p_value(&params, s, n_x, n_y);
        Ok(())
    })
}

fn gumbel(theta_star: f64, k_star: f64, lattice: bool, n_x: usize, n_y: usize) -> Result<GumbelParams, Failure> {
    if !(theta_star > 0.0 && theta_star.is_finite() && k_star > 0.0 && k_star.is_finite()) {
        return Err(Failure(MkStatus::InvalidArgument, "theta_star and k_star must be positive and finite".into()));
    }
    if n_x == 0 || n_y == 0 {
        return Err(Failure(MkStatus::InvalidArgument, "sequence lengths must be positive".into()));
    }
    Ok(GumbelParams { theta_star, k_star, lattice })
}
