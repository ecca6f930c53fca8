use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ehi::artifact::{IndexArtifact, ARTIFACT_MAGIC};
use ehi::data::{load_qrels, EmbeddingMatrix};

fn ehi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehi"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ehi(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        ok(&[
            "synth",
            "--out",
            s(&corpus),
            "--docs",
            "400",
            "--clusters",
            "8",
            "--train-queries",
            "96",
            "--test-queries",
            "48",
        ]);
        std::fs::write(
            root.join("cfg"),
            "branching = 4\nheight = 2\nepochs = 5\nbatch_size = 32\n",
        )
        .unwrap();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn corpus(&self, name: &str) -> String {
        s(&self.root.join("corpus").join(name)).to_string()
    }

    fn train(&self, kind: &str, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&[
            "train",
            "--config",
            s(&self.path("cfg")),
            "--docs",
            &self.corpus("docs.emb"),
            "--queries",
            &self.corpus("train.emb"),
            "--qrels",
            &self.corpus("train.qrels"),
            "--out",
            s(&out),
            "--kind",
            kind,
        ]);
        out
    }
}

#[test]
fn end_to_end_smoke() {
    let started = Instant::now();
    let fx = Fixture::new();
    for kind in ["ehi", "ivf"] {
        let idx = fx.train(kind, &format!("{kind}.idx"));
        let log = std::fs::read_to_string(format!("{}.log.csv", s(&idx))).unwrap();
        assert!(log
            .starts_with("epoch,siamese,indexing,intra_leaf,total,expected_docs_per_leaf,wall_ms"));
        assert_eq!(log.lines().count(), 6);

        let hits = ok(&[
            "search",
            "--index",
            s(&idx),
            "--queries",
            &fx.corpus("test.emb"),
            "--beam",
            "2",
            "--k",
            "5",
        ]);
        assert_eq!(hits.lines().count(), 48 * 5);
        let first: Vec<&str> = hits.lines().next().unwrap().split('\t').collect();
        assert_eq!(first[..2], ["test0", "1"]);

        let eval = ok(&[
            "eval",
            "--index",
            s(&idx),
            "--queries",
            &fx.corpus("test.emb"),
            "--qrels",
            &fx.corpus("test.qrels"),
            "--beam",
            "16",
        ]);
        let rows: Vec<&str> = eval.lines().collect();
        assert_eq!(
            rows[0],
            "beam,mean_visited_fraction,metric_name,metric_value"
        );
        assert_eq!(rows.len(), 4);
        assert!(rows[1].starts_with("16,1,recall,"));

        let curve = ok(&[
            "curve",
            "--index",
            s(&idx),
            "--queries",
            &fx.corpus("test.emb"),
            "--qrels",
            &fx.corpus("test.qrels"),
            "--metric",
            "ndcg",
        ]);
        let beams: Vec<&str> = curve
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(beams, ["1", "2", "4", "8", "16"]);

        let rebuilt = fx.path(&format!("{kind}.d2l2"));
        ok(&[
            "build-index",
            "--index",
            s(&idx),
            "--out",
            s(&rebuilt),
            "--d2l",
            "2",
        ]);
        let art = IndexArtifact::load(&rebuilt).unwrap();
        assert_eq!(art.index.leaf_map.d2l(), 2);
        assert_eq!(art.index.leaf_map.total_assignments(), 800);
    }
    let grad = ok(&["gradcheck"]);
    assert!(grad.contains("max relative error"));
    assert!(started.elapsed() < Duration::from_secs(60));
}

#[test]
fn full_beam_search_equals_exact_search() {
    let fx = Fixture::new();
    let art = IndexArtifact::load(fx.train("ehi", "a.idx")).unwrap();
    let queries = EmbeddingMatrix::load(fx.corpus("test.emb")).unwrap();
    for i in 0..queries.count() {
        let got = art
            .index
            .search(queries.row(i), art.index.max_beam(), 10)
            .unwrap();
        assert_eq!(
            got.hits,
            art.index.exact_search(queries.row(i), 10).unwrap()
        );
    }
}

#[test]
fn env_seed_changes_the_artifact() {
    let fx = Fixture::new();
    let a = std::fs::read(fx.train("ehi", "a.idx")).unwrap();
    let seeded = Command::new(env!("CARGO_BIN_EXE_ehi"))
        .env("EHI_SEED", "7")
        .args([
            "train",
            "--config",
            s(&fx.path("cfg")),
            "--docs",
            &fx.corpus("docs.emb"),
            "--queries",
            &fx.corpus("train.emb"),
            "--qrels",
            &fx.corpus("train.qrels"),
            "--out",
            s(&fx.path("b.idx")),
        ])
        .output()
        .unwrap();
    assert!(seeded.status.success());
    assert_ne!(a, std::fs::read(fx.path("b.idx")).unwrap());
}

#[test]
fn synth_files_round_trip() {
    let fx = Fixture::new();
    let docs = EmbeddingMatrix::load(fx.corpus("docs.emb")).unwrap();
    assert_eq!((docs.count(), docs.dim()), (400, 16));
    let qrels = load_qrels(fx.corpus("train.qrels")).unwrap();
    assert_eq!(qrels.num_queries(), 96);
}

#[test]
fn unknown_format_version_exits_1() {
    let fx = Fixture::new();
    let idx = fx.train("ehi", "a.idx");
    let mut bytes = std::fs::read(&idx).unwrap();
    assert_eq!(&bytes[..8], ARTIFACT_MAGIC);
    bytes[8] = 99;
    let bad = fx.path("bad.idx");
    std::fs::write(&bad, bytes).unwrap();
    let out = ehi(&[
        "search",
        "--index",
        s(&bad),
        "--queries",
        &fx.corpus("test.emb"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn empty_query_file_exits_1() {
    let fx = Fixture::new();
    let idx = fx.train("ehi", "a.idx");
    let empty = fx.path("empty.emb");
    EmbeddingMatrix::new(Vec::new(), 16, Vec::new())
        .unwrap()
        .save(&empty)
        .unwrap();
    let out = ehi(&["search", "--index", s(&idx), "--queries", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no queries"));
}

#[test]
fn missing_input_names_the_path() {
    let fx = Fixture::new();
    let out = ehi(&[
        "train",
        "--config",
        s(&fx.path("cfg")),
        "--docs",
        &fx.corpus("docs.emb"),
        "--queries",
        &fx.corpus("train.emb"),
        "--qrels",
        "/nonexistent/qrels",
        "--out",
        s(&fx.path("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/qrels"));
}

#[test]
fn bad_config_exits_1() {
    let fx = Fixture::new();
    std::fs::write(fx.path("cfg"), "branching = 0\n").unwrap();
    let out = ehi(&[
        "train",
        "--config",
        s(&fx.path("cfg")),
        "--docs",
        &fx.corpus("docs.emb"),
        "--queries",
        &fx.corpus("train.emb"),
        "--qrels",
        &fx.corpus("train.qrels"),
        "--out",
        s(&fx.path("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
