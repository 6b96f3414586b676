//! C ABI over the `moat` library.
//!
//! Every fallible call returns a [`MoatStatus`]; on failure the message is
//! available from [`moat_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Matrices are passed row-major, one row per subject.
//! Predictor and edge indices are 0-based; edges follow the lexicographic
//! order of region pairs `(1,2), (1,3), ..., (n-1,n)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use moat::pipeline::AnalysisOutcome;
use moat::{
    pair_to_flat, run_analysis, AnalysisSettings, ErrorClass, MoatError, StudyData, Threshold,
};
use nalgebra::DMatrix;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoatStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid settings or arguments.
    Config = 2,
    /// Malformed or inconsistent data.
    Data = 3,
    /// A numerical failure inside the analysis.
    Numeric = 4,
    /// An index was out of range or a buffer was too small.
    OutOfRange = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Study data: predictors, vectorized connectome outcomes, confounders.
pub struct MoatStudy(StudyData);

/// Analysis settings, starting from the library defaults.
pub struct MoatSettings(AnalysisSettings);

/// Finished analysis: extracted subnetworks and their inference.
pub struct MoatAnalysis(AnalysisOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MoatStatus, msg: impl Into<String>) -> MoatStatus {
    set_error(msg);
    status
}

fn status_of(err: &MoatError) -> MoatStatus {
    match err.class() {
        ErrorClass::Config => MoatStatus::Config,
        ErrorClass::Data => MoatStatus::Data,
        ErrorClass::Numeric => MoatStatus::Numeric,
    }
}

fn from_moat(err: &MoatError) -> MoatStatus {
    fail(status_of(err), err.to_string())
}

fn guard(f: impl FnOnce() -> MoatStatus) -> MoatStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MoatStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(MoatStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Reads a row-major `rows x cols` matrix. A null pointer is accepted only
/// for an empty matrix.
unsafe fn read_matrix(data: *const f64, rows: usize, cols: usize) -> Option<DMatrix<f64>> {
    let len = rows.checked_mul(cols)?;
    if len == 0 {
        return Some(DMatrix::zeros(rows, cols));
    }
    if data.is_null() {
        return None;
    }
    let values = std::slice::from_raw_parts(data, len);
    Some(DMatrix::from_row_slice(rows, cols, values))
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn moat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn moat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// 0-based lexicographic index of region pair `(i, j)`, `0 <= i < j < n_regions`.
///
/// # Safety
/// `out` must be a valid pointer to a `size_t`.
#[no_mangle]
pub unsafe extern "C" fn moat_pair_index(
    i: usize,
    j: usize,
    n_regions: usize,
    out: *mut usize,
) -> MoatStatus {
    guard(|| {
        non_null!(out);
        match pair_to_flat(i + 1, j + 1, n_regions) {
            Ok(flat) => {
                *out = flat - 1;
                MoatStatus::Ok
            }
            Err(e) => fail(MoatStatus::OutOfRange, e.to_string()),
        }
    })
}

/// Builds a study from `subjects` rows of predictors (`n_predictors`
/// columns), outcomes (`n_edges` columns, a triangular number) and
/// confounders (`n_confounders` columns; pass null with 0 for none).
///
/// # Safety
/// Each non-null matrix pointer must reference `subjects * columns` readable
/// doubles. `out` must be a valid pointer; on success it receives a handle to
/// release with [`moat_study_free`].
#[no_mangle]
pub unsafe extern "C" fn moat_study_new(
    predictors: *const f64,
    n_predictors: usize,
    outcomes: *const f64,
    n_edges: usize,
    confounders: *const f64,
    n_confounders: usize,
    subjects: usize,
    out: *mut *mut MoatStudy,
) -> MoatStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let (Some(x), Some(y), Some(eta)) = (
            read_matrix(predictors, subjects, n_predictors),
            read_matrix(outcomes, subjects, n_edges),
            read_matrix(confounders, subjects, n_confounders),
        ) else {
            return fail(
                MoatStatus::NullPointer,
                "matrix pointer is null for a non-empty matrix",
            );
        };
        match StudyData::new(x, y, eta) {
            Ok(study) => {
                *out = Box::into_raw(Box::new(MoatStudy(study)));
                MoatStatus::Ok
            }
            Err(e) => from_moat(&e),
        }
    })
}

/// Releases a study. Null is ignored.
///
/// # Safety
/// `study` must come from [`moat_study_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn moat_study_free(study: *mut MoatStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// New settings holding the library defaults (p < 0.001 per pair, 200
/// permutations, alpha 0.05, seed 0, CCA on).
#[no_mangle]
pub extern "C" fn moat_settings_new() -> *mut MoatSettings {
    Box::into_raw(Box::new(MoatSettings(AnalysisSettings::default())))
}

/// Settings parsed from JSON with the field names of the CLI's `[analysis]`
/// table; missing fields keep their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_from_json(
    json: *const c_char,
    out: *mut *mut MoatSettings,
) -> MoatStatus {
    guard(|| {
        non_null!(json, out);
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(MoatStatus::Config, "settings JSON is not valid UTF-8");
        };
        let settings: AnalysisSettings = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(MoatStatus::Config, format!("settings JSON: {e}")),
        };
        if let Err(e) = settings.validate() {
            return from_moat(&e);
        }
        *out = Box::into_raw(Box::new(MoatSettings(settings)));
        MoatStatus::Ok
    })
}

/// Releases settings. Null is ignored.
///
/// # Safety
/// `settings` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_free(settings: *mut MoatSettings) {
    if !settings.is_null() {
        drop(Box::from_raw(settings));
    }
}

unsafe fn update(settings: *mut MoatSettings, f: impl FnOnce(&mut AnalysisSettings)) -> MoatStatus {
    guard(|| {
        non_null!(settings);
        let mut next = (*settings).0.clone();
        f(&mut next);
        match next.validate() {
            Ok(()) => {
                (*settings).0 = next;
                MoatStatus::Ok
            }
            Err(e) => from_moat(&e),
        }
    })
}

/// Seed for the permutation test.
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_seed(
    settings: *mut MoatSettings,
    seed: u64,
) -> MoatStatus {
    update(settings, |s| s.seed = seed)
}

/// Number of permutations `L`.
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_permutations(
    settings: *mut MoatSettings,
    permutations: usize,
) -> MoatStatus {
    update(settings, |s| s.permutations = permutations)
}

/// Significance level for the q-values.
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_alpha(
    settings: *mut MoatSettings,
    alpha: f64,
) -> MoatStatus {
    update(settings, |s| s.alpha = alpha)
}

/// Keeps pairs with per-pair p-value below `p`.
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_p_threshold(
    settings: *mut MoatSettings,
    p: f64,
) -> MoatStatus {
    update(settings, |s| s.threshold = Threshold::PValue(p))
}

/// Keeps pairs with p-value below `alpha / (pairs tested)`.
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_bonferroni(
    settings: *mut MoatSettings,
    alpha: f64,
) -> MoatStatus {
    update(settings, |s| s.threshold = Threshold::Bonferroni(alpha))
}

/// Skips the lambda search and uses the given pair.
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_lambdas(
    settings: *mut MoatSettings,
    lambda1: f64,
    lambda2: f64,
) -> MoatStatus {
    update(settings, |s| s.fixed_lambdas = Some((lambda1, lambda2)))
}

/// Turns CCA on significant subnetworks on (nonzero) or off (0).
///
/// # Safety
/// `settings` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_set_cca(
    settings: *mut MoatSettings,
    enabled: i32,
) -> MoatStatus {
    update(settings, |s| s.run_cca = enabled != 0)
}

/// Runs association, extraction, inference and (optionally) CCA.
///
/// # Safety
/// `study` and `settings` must be live handles; `out` a valid pointer that
/// receives a handle to release with [`moat_analysis_free`].
#[no_mangle]
pub unsafe extern "C" fn moat_analyze(
    study: *const MoatStudy,
    settings: *const MoatSettings,
    out: *mut *mut MoatAnalysis,
) -> MoatStatus {
    guard(|| {
        non_null!(study, settings, out);
        *out = ptr::null_mut();
        match run_analysis(&(*study).0, &(*settings).0, |_| {}) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(MoatAnalysis(outcome)));
                MoatStatus::Ok
            }
            Err(e) => fail(status_of(&e.source), e.to_string()),
        }
    })
}

/// Releases an analysis. Null is ignored.
///
/// # Safety
/// `analysis` must come from [`moat_analyze`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_free(analysis: *mut MoatAnalysis) {
    if !analysis.is_null() {
        drop(Box::from_raw(analysis));
    }
}

/// Number of extracted subnetworks (0 for a null handle).
///
/// # Safety
/// `analysis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_count(analysis: *const MoatAnalysis) -> usize {
    analysis
        .as_ref()
        .map_or(0, |a| a.0.extraction.subnetworks.len())
}

/// Lambdas used for extraction.
///
/// # Safety
/// `analysis` must be a live handle; the outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_lambdas(
    analysis: *const MoatAnalysis,
    lambda1: *mut f64,
    lambda2: *mut f64,
) -> MoatStatus {
    guard(|| {
        non_null!(analysis, lambda1, lambda2);
        let (l1, l2) = (*analysis).0.extraction.selected_lambdas;
        *lambda1 = l1;
        *lambda2 = l2;
        MoatStatus::Ok
    })
}

/// Summary of one extracted subnetwork.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MoatSubnetworkInfo {
    pub n_predictors: usize,
    pub n_edges: usize,
    pub n_regions: usize,
    /// Within-block density of the bipartite level.
    pub gamma1: f64,
    /// Within-block density of the connectome level.
    pub gamma2: f64,
    /// Natural log of the test statistic; 0 when not testable.
    pub log_statistic: f64,
    /// Permutation q-value; 1 when inference did not run.
    pub q_value: f64,
    /// 1 when `q_value < alpha`.
    pub significant: i32,
}

/// Summary of subnetwork `index`, in extraction order.
///
/// # Safety
/// `analysis` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_subnetwork(
    analysis: *const MoatAnalysis,
    index: usize,
    out: *mut MoatSubnetworkInfo,
) -> MoatStatus {
    guard(|| {
        non_null!(analysis, out);
        let a = &(*analysis).0;
        let Some(sub) = a.extraction.subnetworks.get(index) else {
            return fail(
                MoatStatus::OutOfRange,
                format!("subnetwork {index} of {}", a.extraction.subnetworks.len()),
            );
        };
        let report = a.inference.as_ref();
        *out = MoatSubnetworkInfo {
            n_predictors: sub.s_nodes.len(),
            n_edges: sub.f_nodes.len(),
            n_regions: sub.v_nodes.len(),
            gamma1: sub.gamma1,
            gamma2: sub.gamma2,
            log_statistic: report.map_or(0.0, |r| r.observed_log_t[index]),
            q_value: report.map_or(1.0, |r| r.q_values[index]),
            significant: i32::from(a.significant.contains(&index)),
        };
        MoatStatus::Ok
    })
}

unsafe fn copy_indices(values: &[usize], buf: *mut usize, capacity: usize) -> MoatStatus {
    if values.len() > capacity {
        return fail(
            MoatStatus::OutOfRange,
            format!("buffer holds {capacity}, need {}", values.len()),
        );
    }
    if !values.is_empty() {
        if buf.is_null() {
            return fail(MoatStatus::NullPointer, "`buf` is null");
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    MoatStatus::Ok
}

fn subnetwork_field(
    analysis: &MoatAnalysis,
    index: usize,
    pick: impl FnOnce(&moat::Subnetwork) -> &[usize],
) -> Result<&[usize], MoatStatus> {
    let subs = &analysis.0.extraction.subnetworks;
    subs.get(index).map(pick).ok_or_else(|| {
        fail(
            MoatStatus::OutOfRange,
            format!("subnetwork {index} of {}", subs.len()),
        )
    })
}

/// Copies the 0-based predictor indices of subnetwork `index` into `buf`,
/// which must hold at least `n_predictors` entries.
///
/// # Safety
/// `analysis` must be a live handle; `buf` must be writable for `capacity`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_predictors(
    analysis: *const MoatAnalysis,
    index: usize,
    buf: *mut usize,
    capacity: usize,
) -> MoatStatus {
    guard(|| {
        non_null!(analysis);
        match subnetwork_field(&*analysis, index, |s| &s.s_nodes) {
            Ok(v) => copy_indices(v, buf, capacity),
            Err(status) => status,
        }
    })
}

/// Copies the 0-based edge indices of subnetwork `index` into `buf`, which
/// must hold at least `n_edges` entries.
///
/// # Safety
/// `analysis` must be a live handle; `buf` must be writable for `capacity`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_edges(
    analysis: *const MoatAnalysis,
    index: usize,
    buf: *mut usize,
    capacity: usize,
) -> MoatStatus {
    guard(|| {
        non_null!(analysis);
        match subnetwork_field(&*analysis, index, |s| &s.f_nodes) {
            Ok(v) => copy_indices(v, buf, capacity),
            Err(status) => status,
        }
    })
}

/// Thresholded score `a(edge, predictor)` used for extraction.
///
/// # Safety
/// `analysis` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moat_analysis_score(
    analysis: *const MoatAnalysis,
    predictor: usize,
    edge: usize,
    out: *mut f64,
) -> MoatStatus {
    guard(|| {
        non_null!(analysis, out);
        let scores = &(*analysis).0.scores;
        if predictor >= scores.n_predictors() || edge >= scores.n_edges() {
            return fail(
                MoatStatus::OutOfRange,
                format!(
                    "score ({predictor}, {edge}) outside {} x {}",
                    scores.n_predictors(),
                    scores.n_edges()
                ),
            );
        }
        *out = scores.get(predictor, edge);
        MoatStatus::Ok
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn moat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Settings as JSON, the format [`moat_settings_from_json`] reads. Release
/// the string with [`moat_string_free`].
///
/// # Safety
/// `settings` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moat_settings_to_json(
    settings: *const MoatSettings,
    out: *mut *mut c_char,
) -> MoatStatus {
    guard(|| {
        non_null!(settings, out);
        *out = ptr::null_mut();
        match serde_json::to_string(&(*settings).0) {
            Ok(text) => {
                *out = CString::new(text).expect("JSON has no NUL").into_raw();
                MoatStatus::Ok
            }
            Err(e) => fail(MoatStatus::Internal, e.to_string()),
        }
    })
}
