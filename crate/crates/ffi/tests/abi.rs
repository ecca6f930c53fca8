use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use ehi::data::{EmbeddingMatrix, RelevanceJudgments};
use ehi::trainer::TrainData;
use ehi::{IndexArtifact, IndexKind, TrainConfig};
use ehi_ffi::*;

fn corpus() -> (EmbeddingMatrix, EmbeddingMatrix, RelevanceJudgments) {
    let row = |i: usize, salt: f32| {
        (0..4)
            .map(|j| ((i * 7 + j * 3) as f32 * 0.37 + salt).sin())
            .collect::<Vec<_>>()
    };
    let docs = EmbeddingMatrix::new(
        (0..60).map(|i| format!("doc{i}")).collect(),
        4,
        (0..60).flat_map(|i| row(i, 0.0)).collect(),
    )
    .unwrap();
    let queries = EmbeddingMatrix::new(
        (0..20).map(|i| format!("q{i}")).collect(),
        4,
        (0..20).flat_map(|i| row(i, 0.05)).collect(),
    )
    .unwrap();
    let qrels = RelevanceJudgments::from_triples(
        (0..20).map(|i| (format!("q{i}"), format!("doc{i}"), 1i8)),
    )
    .unwrap();
    (docs, queries, qrels)
}

fn saved(kind: IndexKind, dir: &Path) -> (IndexArtifact, CString) {
    let (docs, queries, qrels) = corpus();
    let data = TrainData {
        queries: &queries,
        docs: &docs,
        judgments: &qrels,
    };
    let cfg = TrainConfig {
        branching: 3,
        height: 2,
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (art, _) = IndexArtifact::train(kind, &data, &cfg).unwrap();
    let path = dir.join(format!("{kind}.idx"));
    art.save(&path).unwrap();
    (art, CString::new(path.to_str().unwrap()).unwrap())
}

fn open(path: &CStr) -> *mut EhiIndex {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { ehi_index_open(path.as_ptr(), &mut h) },
        EhiStatus::Ok
    );
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ehi_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn search_matches_the_rust_api() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, code) in [(IndexKind::Ehi, 1), (IndexKind::Ivf, 2)] {
        let (art, path) = saved(kind, dir.path());
        let h = open(&path);
        unsafe {
            assert_eq!(ehi_index_num_docs(h), 60);
            assert_eq!(ehi_index_dim(h), 4);
            assert_eq!(ehi_index_num_leaves(h), 9);
            assert_eq!(ehi_index_kind(h), code);
            let q = [0.1f32, -0.4, 0.8, 0.2];
            for beam in [1, 3, 9] {
                let (mut docs, mut scores) = ([0u32; 5], [0f64; 5]);
                let (mut len, mut visited) = (0usize, 0f64);
                let status = ehi_index_search(
                    h,
                    q.as_ptr(),
                    4,
                    beam,
                    5,
                    docs.as_mut_ptr(),
                    scores.as_mut_ptr(),
                    &mut len,
                    &mut visited,
                );
                assert_eq!(status, EhiStatus::Ok);
                let want = art.index.search(&q, beam, 5).unwrap();
                assert_eq!(len, want.hits.len());
                assert_eq!(visited, want.visited_fraction);
                for (slot, &(d, s)) in want.hits.iter().enumerate() {
                    assert_eq!((docs[slot], scores[slot]), (d, s));
                    let id = CStr::from_ptr(ehi_index_doc_id(h, d)).to_str().unwrap();
                    assert_eq!(id, art.index.doc_id(d));
                }
            }
            assert!(ehi_index_doc_id(h, 60).is_null());
            ehi_index_free(h);
        }
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved(IndexKind::Ehi, dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(ehi_index_open(ptr::null(), &mut h), EhiStatus::NullPointer);
        assert_eq!(
            ehi_index_open(path.as_ptr(), ptr::null_mut()),
            EhiStatus::NullPointer
        );

        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(ehi_index_open(missing.as_ptr(), &mut h), EhiStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("nope"));

        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not an index").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(ehi_index_open(junk.as_ptr(), &mut h), EhiStatus::Format);

        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            ehi_index_open(bad_utf8.as_ptr().cast(), &mut h),
            EhiStatus::InvalidUtf8
        );

        let h = open(&path);
        let (mut docs, mut scores, mut len) = ([0u32; 3], [0f64; 3], 0usize);
        let q = [0f32; 3];
        let status = ehi_index_search(
            h,
            q.as_ptr(),
            3,
            1,
            3,
            docs.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut len,
            ptr::null_mut(),
        );
        assert_eq!(status, EhiStatus::DimensionMismatch);
        assert_eq!(len, 0);
        let q = [0f32; 4];
        let status = ehi_index_search(
            h,
            q.as_ptr(),
            4,
            0,
            3,
            docs.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut len,
            ptr::null_mut(),
        );
        assert_eq!(status, EhiStatus::InvalidArgument);
        assert!(last_error().contains("beam"));
        let status = ehi_index_search(
            ptr::null(),
            q.as_ptr(),
            4,
            1,
            3,
            docs.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut len,
            ptr::null_mut(),
        );
        assert_eq!(status, EhiStatus::NullPointer);
        ehi_index_free(h);

        assert_eq!(ehi_index_num_docs(ptr::null()), 0);
        ehi_index_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ehi.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ehi_index_open",
        "ehi_index_free",
        "ehi_index_search",
        "ehi_index_doc_id",
        "ehi_index_num_docs",
        "ehi_index_dim",
        "ehi_last_error",
        "EHI_STATUS_OK",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Only checked where a C compiler is installed.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
