//! C ABI for lcprune.
//!
//! Every fallible function returns an [`LcpStatus`]; `LCP_STATUS_OK` is zero
//! and failures are negative. After a failure the calling thread can fetch a
//! description with [`lcp_last_error_message`].
//!
//! Packs are exposed as the opaque [`LcpPack`] handle, created by
//! [`lcp_pack_load`] and released with [`lcp_pack_free`]. Vectors cross the
//! boundary as caller-owned pointer/length pairs.
//!
//! # Safety
//!
//! Pointer arguments are checked for null only. Callers must ensure that
//! non-null pointers are aligned and valid for the stated number of elements
//! for the duration of the call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lcprune::{
    evaluation, feature_store::Matrix, knn_scoring, selection, Error as CoreError, FeaturePack,
    Keep, KnnConfig, ScoreVector,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcpStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidUtf8 = -2,
    Usage = -3,
    Validation = -4,
    Numerical = -5,
    BufferTooSmall = -6,
    Panic = -7,
}

/// Opaque handle to a loaded, validated pack.
pub struct LcpPack(FeaturePack);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &CoreError) -> LcpStatus {
    match err.exit_code() {
        2 => LcpStatus::Usage,
        3 => LcpStatus::Validation,
        _ => LcpStatus::Numerical,
    }
}

fn fail(status: LcpStatus, msg: impl Into<String>) -> LcpStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), LcpStatus>) -> LcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(LcpStatus::Panic, "internal panic"),
    }
}

trait IntoStatus<T> {
    fn status(self) -> Result<T, LcpStatus>;
}

impl<T> IntoStatus<T> for lcprune::Result<T> {
    fn status(self) -> Result<T, LcpStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], LcpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LcpStatus::NullPointer, format!("{name} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], LcpStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(LcpStatus::NullPointer, format!("{name} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, LcpStatus> {
    unsafe { p.as_mut() }.ok_or_else(|| fail(LcpStatus::NullPointer, format!("{name} is null")))
}

unsafe fn pack_ref<'a>(p: *const LcpPack) -> Result<&'a FeaturePack, LcpStatus> {
    unsafe { p.as_ref() }
        .map(|p| &p.0)
        .ok_or_else(|| fail(LcpStatus::NullPointer, "pack is null"))
}

fn write_indices(
    indices: &[usize],
    out: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> Result<(), LcpStatus> {
    let len = unsafe { out_ref(out_len, "out_len") }?;
    *len = indices.len();
    if indices.len() > capacity {
        return Err(fail(
            LcpStatus::BufferTooSmall,
            format!("need {} slots, buffer has {capacity}", indices.len()),
        ));
    }
    unsafe { slice_out(out, indices.len(), "out_indices") }?.copy_from_slice(indices);
    Ok(())
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to fit. Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn lcp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Loads a pack from a `pack.json` path or its directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lcp_pack_load(path: *const c_char, out: *mut *mut LcpPack) -> LcpStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(LcpStatus::NullPointer, "path is null"));
        }
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| fail(LcpStatus::InvalidUtf8, "path is not valid UTF-8"))?;
        let pack = lcprune::load_pack(path).status()?;
        *out = Box::into_raw(Box::new(LcpPack(pack)));
        Ok(())
    })
}

/// Releases a pack. Null is ignored.
///
/// # Safety
/// `pack` must come from [`lcp_pack_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lcp_pack_free(pack: *mut LcpPack) {
    if !pack.is_null() {
        drop(unsafe { Box::from_raw(pack) });
    }
}

/// Sample count, or 0 for a null handle.
///
/// # Safety
/// `pack` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lcp_pack_num_samples(pack: *const LcpPack) -> usize {
    unsafe { pack.as_ref() }.map_or(0, |p| p.0.n_samples())
}

/// Layer count, or 0 for a null handle.
///
/// # Safety
/// `pack` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lcp_pack_num_layers(pack: *const LcpPack) -> usize {
    unsafe { pack.as_ref() }.map_or(0, |p| p.0.num_layers())
}

/// # Safety
/// `pack` must be a live handle; `out_dim` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lcp_pack_layer_dim(
    pack: *const LcpPack,
    layer: usize,
    out_dim: *mut usize,
) -> LcpStatus {
    guard(|| {
        let pack = unsafe { pack_ref(pack) }?;
        let dim = pack.layer(layer).status()?.dim();
        *unsafe { out_ref(out_dim, "out_dim") }? = dim;
        Ok(())
    })
}

/// Learning-complexity score of every sample, averaged over all layers with
/// the sample itself excluded from its neighbours. `out_scores` must hold
/// `len == num_samples` doubles.
///
/// # Safety
/// `pack` must be a live handle; `out_scores` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lcp_lc_score(
    pack: *const LcpPack,
    k: usize,
    tie_epsilon: f64,
    out_scores: *mut f64,
    len: usize,
) -> LcpStatus {
    guard(|| {
        let pack = unsafe { pack_ref(pack) }?;
        if len != pack.n_samples() {
            return Err(fail(
                LcpStatus::BufferTooSmall,
                format!(
                    "score buffer holds {len}, pack has {} samples",
                    pack.n_samples()
                ),
            ));
        }
        let cfg = KnnConfig {
            tie_epsilon,
            ..KnnConfig::new(k)
        };
        let scores = knn_scoring::lc_classification_score(pack, &cfg, None).status()?;
        unsafe { slice_out(out_scores, len, "out_scores") }?.copy_from_slice(&scores.values);
        Ok(())
    })
}

/// Mean reciprocal perplexity of each row of a `rows x cols` row-major matrix.
///
/// # Safety
/// `perplexities` valid for `rows * cols` reads; `out_scores` for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn lcp_lc_regression_score(
    perplexities: *const f32,
    rows: usize,
    cols: usize,
    out_scores: *mut f64,
) -> LcpStatus {
    guard(|| {
        let data = unsafe { slice_in(perplexities, rows * cols, "perplexities") }?;
        let m = Matrix::new(rows, cols, data.to_vec()).status()?;
        let scores = knn_scoring::lc_regression_score(&m).status()?;
        unsafe { slice_out(out_scores, rows, "out_scores") }?.copy_from_slice(&scores.values);
        Ok(())
    })
}

/// Spearman rank correlation with fractional ranks for ties.
///
/// # Safety
/// `a`, `b` valid for `n` reads; `out_rho` for a write.
#[no_mangle]
pub unsafe extern "C" fn lcp_spearman(
    a: *const f64,
    b: *const f64,
    n: usize,
    out_rho: *mut f64,
) -> LcpStatus {
    guard(|| {
        let a = unsafe { slice_in(a, n, "a") }?;
        let b = unsafe { slice_in(b, n, "b") }?;
        let rho = evaluation::spearman(a, b).status()?;
        *unsafe { out_ref(out_rho, "out_rho") }? = rho;
        Ok(())
    })
}

/// `floor(eta * n)`, the number of samples every selector keeps.
///
/// # Safety
/// `out_m` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lcp_budget_size(n: usize, eta: f64, out_m: *mut usize) -> LcpStatus {
    guard(|| {
        let m = selection::budget_size(n, eta).status()?;
        *unsafe { out_ref(out_m, "out_m") }? = m;
        Ok(())
    })
}

/// Top-k selection. Indices are written ascending; `out_len` receives the
/// count even when the buffer is too small.
///
/// # Safety
/// `scores` valid for `n` reads; `out_indices` for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn lcp_select_top_k(
    scores: *const f64,
    n: usize,
    eta: f64,
    keep_highest: bool,
    out_indices: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> LcpStatus {
    guard(|| {
        let values = unsafe { slice_in(scores, n, "scores") }?;
        let sv = ScoreVector::new(values.to_vec(), "ffi", keep_highest);
        let keep = if keep_highest {
            Keep::Highest
        } else {
            Keep::Lowest
        };
        let r = selection::top_k_select(&sv, eta, keep).status()?;
        write_indices(&r.indices, out_indices, capacity, out_len)
    })
}

/// Easy-and-diverse selection: K-means on `layer`, proportional quotas, the
/// easiest samples of each cluster.
///
/// # Safety
/// `pack` must be a live handle; `scores` valid for `n` reads;
/// `out_indices` for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn lcp_select_easy_diverse(
    pack: *const LcpPack,
    scores: *const f64,
    n: usize,
    higher_is_easier: bool,
    layer: usize,
    k_clusters: usize,
    eta: f64,
    seed: u64,
    out_indices: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> LcpStatus {
    guard(|| {
        let pack = unsafe { pack_ref(pack) }?;
        let values = unsafe { slice_in(scores, n, "scores") }?;
        let sv = ScoreVector::new(values.to_vec(), "ffi", higher_is_easier);
        let r = selection::easy_diverse_select(pack, &sv, layer, k_clusters, eta, seed).status()?;
        write_indices(&r.indices, out_indices, capacity, out_len)
    })
}

/// k-center greedy over an `n x d` row-major feature matrix. A negative
/// `initial` draws the first pick from `seed`. Indices are in pick order.
///
/// # Safety
/// `features` valid for `n * d` reads; `out_indices` for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn lcp_select_kcenter(
    features: *const f32,
    n: usize,
    d: usize,
    eta: f64,
    seed: u64,
    initial: i64,
    out_indices: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> LcpStatus {
    guard(|| {
        let data = unsafe { slice_in(features, n * d, "features") }?;
        let m = Matrix::new(n, d, data.to_vec()).status()?;
        let initial = usize::try_from(initial).ok();
        let r = selection::kcenter_greedy_select(&m, eta, seed, initial).status()?;
        write_indices(&r.indices, out_indices, capacity, out_len)
    })
}

/// Mean nearest-neighbour distance within `subset` of an `n x d` matrix.
///
/// # Safety
/// `features` valid for `n * d` reads; `subset` for `m` reads.
#[no_mangle]
pub unsafe extern "C" fn lcp_diversity(
    features: *const f32,
    n: usize,
    d: usize,
    subset: *const usize,
    m: usize,
    out_delta: *mut f64,
) -> LcpStatus {
    guard(|| {
        let data = unsafe { slice_in(features, n * d, "features") }?;
        let subset = unsafe { slice_in(subset, m, "subset") }?;
        let mat = Matrix::new(n, d, data.to_vec()).status()?;
        let delta = lcprune::diversity(&mat, subset).status()?;
        *unsafe { out_ref(out_delta, "out_delta") }? = delta;
        Ok(())
    })
}
