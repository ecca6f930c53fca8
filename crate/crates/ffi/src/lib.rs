//! C ABI over a trained `ehi` index.
//!
//! Handles are opaque. Every fallible call returns an [`EhiStatus`]; on
//! failure a message for the calling thread is available from
//! [`ehi_last_error`] until the next failing call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ehi::{Error, IndexArtifact};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Not an index file, corrupt, or written by another format version.
    Format = 4,
    InvalidArgument = 5,
    DimensionMismatch = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// A loaded index. Immutable after opening, so a handle may be shared
/// across threads for concurrent searches.
pub struct EhiIndex {
    artifact: IndexArtifact,
    doc_ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: EhiStatus, msg: impl Into<String>) -> EhiStatus {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
    status
}

fn from_error(e: Error) -> EhiStatus {
    let status = match &e {
        Error::Io { .. } => EhiStatus::Io,
        Error::MalformedHeader(_)
        | Error::UnsupportedVersion(_)
        | Error::Artifact(_)
        | Error::PayloadSize { .. }
        | Error::Config(_) => EhiStatus::Format,
        Error::DimensionMismatch { .. } => EhiStatus::DimensionMismatch,
        _ => EhiStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> EhiStatus) -> EhiStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(EhiStatus::Internal, "panic"))
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ehi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens an index file. On success `*out` receives a handle that must be
/// released with [`ehi_index_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_open(path: *const c_char, out: *mut *mut EhiIndex) -> EhiStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(EhiStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(EhiStatus::InvalidUtf8, "path is not valid UTF-8");
        };
        let artifact = match IndexArtifact::load(path) {
            Ok(a) => a,
            Err(e) => return from_error(e),
        };
        let doc_ids = artifact
            .index
            .docs
            .ids()
            .iter()
            .map(|id| CString::new(id.as_str()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(EhiIndex { artifact, doc_ids }));
        EhiStatus::Ok
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `index` must come from [`ehi_index_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_free(index: *mut EhiIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of indexed documents, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_num_docs(index: *const EhiIndex) -> usize {
    index.as_ref().map_or(0, |i| i.artifact.index.num_docs())
}

/// Base embedding dimension expected by [`ehi_index_search`].
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_dim(index: *const EhiIndex) -> usize {
    index.as_ref().map_or(0, |i| i.artifact.index.dim())
}

/// Number of leaves; the beam at which search becomes exhaustive.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_num_leaves(index: *const EhiIndex) -> usize {
    index.as_ref().map_or(0, |i| i.artifact.index.max_beam())
}

/// 1 for a jointly trained tree, 2 for the k-means inverted file, 0 for null.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_kind(index: *const EhiIndex) -> u32 {
    index.as_ref().map_or(0, |i| match i.artifact.kind() {
        ehi::IndexKind::Ehi => 1,
        ehi::IndexKind::Ivf => 2,
    })
}

/// Searches with one query. Writes up to `k` results, best first, into
/// `out_docs` / `out_scores` (each with room for `k` entries) and the
/// result count into `*out_len`. `out_visited` may be null; otherwise it
/// receives the fraction of the corpus that was scored.
///
/// # Safety
/// `query` must point to `dim` floats; output pointers must be valid for
/// `k` writes.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_search(
    index: *const EhiIndex,
    query: *const f32,
    dim: usize,
    beam: usize,
    k: usize,
    out_docs: *mut u32,
    out_scores: *mut f64,
    out_len: *mut usize,
    out_visited: *mut f64,
) -> EhiStatus {
    guard(|| {
        let Some(index) = index.as_ref() else {
            return fail(EhiStatus::NullPointer, "null index");
        };
        if query.is_null() || out_docs.is_null() || out_scores.is_null() || out_len.is_null() {
            return fail(EhiStatus::NullPointer, "null argument");
        }
        *out_len = 0;
        let idx = &index.artifact.index;
        if dim != idx.dim() {
            return from_error(Error::DimensionMismatch {
                expected: idx.dim(),
                got: dim,
            });
        }
        let q = std::slice::from_raw_parts(query, dim);
        let res = match idx.search(q, beam, k) {
            Ok(r) => r,
            Err(e) => return from_error(e),
        };
        let docs = std::slice::from_raw_parts_mut(out_docs, k);
        let scores = std::slice::from_raw_parts_mut(out_scores, k);
        for (slot, &(d, s)) in res.hits.iter().enumerate() {
            docs[slot] = d;
            scores[slot] = s;
        }
        *out_len = res.hits.len();
        if !out_visited.is_null() {
            *out_visited = res.visited_fraction;
        }
        EhiStatus::Ok
    })
}

/// The id of document `doc`, or null when out of range. Owned by the handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehi_index_doc_id(index: *const EhiIndex, doc: u32) -> *const c_char {
    index
        .as_ref()
        .and_then(|i| i.doc_ids.get(doc as usize))
        .map_or(ptr::null(), |s| s.as_ptr())
}
