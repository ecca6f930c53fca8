//! Base embeddings, relevance judgments, and minibatch sampling.
//!
//! Embedding files start with the magic `EHIV1\0`, followed by little-endian
//! `u64` count and `u64` dim and then `count * dim` little-endian `f32`s.
//! Row ids live in a sidecar `<path>.ids`, one UTF-8 id per line.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 6] = b"EHIV1\0";
const HEADER_LEN: usize = EMBEDDING_MAGIC.len() + 16;

/// Dense row-per-item base embeddings with string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::MalformedHeader("dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::IdCount {
                ids: ids.len(),
                rows: data.len() / dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos / dim));
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix {
            dim,
            data,
            ids,
            lookup,
        })
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Header and payload, without ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses header and payload; `ids` must match the row count.
    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..EMBEDDING_MAGIC.len()] != EMBEDDING_MAGIC {
            return Err(Error::MalformedHeader("missing EHIV1 magic".into()));
        }
        let count = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let dim = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        if dim == 0 {
            return Err(Error::MalformedHeader("dim must be positive".into()));
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::MalformedHeader("count*dim overflows".into()))?;
        if payload.len() as u64 != expected {
            return Err(Error::PayloadSize {
                expected,
                found: payload.len() as u64,
            });
        }
        if ids.len() as u64 != count {
            return Err(Error::IdCount {
                ids: ids.len(),
                rows: count as usize,
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingMatrix::new(ids, dim as usize, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ids_path = ids_path(path);
        let text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let ids = text.lines().map(str::to_owned).collect();
        EmbeddingMatrix::from_bytes(&bytes, ids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let ids_path = ids_path(path);
        let mut text = String::new();
        for id in &self.ids {
            text.push_str(id);
            text.push('\n');
        }
        fs::write(&ids_path, text).map_err(|e| Error::io(&ids_path, e))
    }
}

/// `<path>.ids`
pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Labels for one query, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryJudgments {
    pub query: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

/// Binary relevance labels. Pairs absent from the set count as irrelevant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgments {
    queries: Vec<QueryJudgments>,
    lookup: HashMap<String, usize>,
    positive_sets: Vec<HashSet<String>>,
}

impl RelevanceJudgments {
    /// Builds judgments from `(query, doc, label)` triples, label in {-1, +1}.
    pub fn from_triples<I, S>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, i8)>,
        S: Into<String>,
    {
        let mut queries: Vec<QueryJudgments> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut labels: HashMap<(String, String), i8> = HashMap::new();
        for (q, d, label) in triples {
            let (q, d) = (q.into(), d.into());
            if label != 1 && label != -1 {
                return Err(Error::InvalidArgument(format!(
                    "label {label} for ({q},{d}) is not -1 or 1"
                )));
            }
            match labels.get(&(q.clone(), d.clone())) {
                Some(&prev) if prev == label => continue,
                Some(_) => return Err(Error::ConflictingLabel(q, d)),
                None => {}
            }
            labels.insert((q.clone(), d.clone()), label);
            let slot = *lookup.entry(q.clone()).or_insert_with(|| {
                queries.push(QueryJudgments {
                    query: q.clone(),
                    positives: Vec::new(),
                    negatives: Vec::new(),
                });
                queries.len() - 1
            });
            if label == 1 {
                queries[slot].positives.push(d);
            } else {
                queries[slot].negatives.push(d);
            }
        }
        if let Some(q) = queries.iter().find(|q| q.positives.is_empty()) {
            return Err(Error::NoPositive(q.query.clone()));
        }
        let positive_sets = queries
            .iter()
            .map(|q| q.positives.iter().cloned().collect())
            .collect();
        Ok(RelevanceJudgments {
            queries,
            lookup,
            positive_sets,
        })
    }

    pub fn queries(&self) -> &[QueryJudgments] {
        &self.queries
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn get(&self, query: &str) -> Option<&QueryJudgments> {
        self.lookup.get(query).map(|&i| &self.queries[i])
    }

    pub fn positives(&self, query: &str) -> Option<&HashSet<String>> {
        self.lookup.get(query).map(|&i| &self.positive_sets[i])
    }

    pub fn is_positive(&self, query: &str, doc: &str) -> bool {
        self.positives(query).is_some_and(|s| s.contains(doc))
    }

    /// Serializes to the TSV accepted by [`load_qrels`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            for d in &q.positives {
                out.push_str(&format!("{}\t{}\t1\n", q.query, d));
            }
            for d in &q.negatives {
                out.push_str(&format!("{}\t{}\t-1\n", q.query, d));
            }
        }
        out
    }
}

/// Parses `query-id<TAB>doc-id<TAB>label` lines. Blank lines are skipped.
pub fn parse_qrels(text: &str) -> Result<RelevanceJudgments> {
    let mut triples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let label = match fields[2].trim() {
            "1" | "+1" => 1,
            "-1" => -1,
            other => {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("label {other:?} is not -1 or 1"),
                })
            }
        };
        triples.push((fields[0].to_owned(), fields[1].to_owned(), label));
    }
    RelevanceJudgments::from_triples(triples)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<RelevanceJudgments> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text)
}

/// One training minibatch: distinct queries, each with one sampled positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub entries: Vec<(String, String)>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.entries.len()
    }
}

/// Draws `size` distinct queries without replacement and one uniformly
/// chosen positive for each.
pub fn sample_minibatch<R: Rng + ?Sized>(
    judgments: &RelevanceJudgments,
    size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if judgments.is_empty() {
        return Err(Error::Empty);
    }
    if size == 0 || size > judgments.num_queries() {
        return Err(Error::InvalidArgument(format!(
            "batch size {size} exceeds query count {}",
            judgments.num_queries()
        )));
    }
    let picks = rand::seq::index::sample(rng, judgments.num_queries(), size);
    let entries = picks
        .into_iter()
        .map(|qi| {
            let q = &judgments.queries[qi];
            let d = q.positives.choose(rng).expect("positives are non-empty");
            (q.query.clone(), d.clone())
        })
        .collect();
    Ok(Batch { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn header_shape_passthrough() {
        let m = EmbeddingMatrix::new(ids(2), 3, vec![1.0; 6]).unwrap();
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes(), ids(2)).unwrap();
        assert_eq!(back.count(), 2);
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn short_payload_is_rejected() {
        let m = EmbeddingMatrix::new(ids(2), 3, vec![1.0; 6]).unwrap();
        let mut bytes = m.to_bytes();
        bytes.truncate(bytes.len() - 4);
        let err = EmbeddingMatrix::from_bytes(&bytes, ids(2)).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"), "{err}");
    }

    #[test]
    fn nan_is_rejected_with_row() {
        let mut data = vec![0.5f32; 6];
        data[1] = f32::NAN;
        let err = EmbeddingMatrix::new(ids(2), 3, data).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at row 0");
    }

    #[test]
    fn bad_magic_and_duplicate_ids() {
        assert!(matches!(
            EmbeddingMatrix::from_bytes(b"nope", vec![]),
            Err(Error::MalformedHeader(_))
        ));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            EmbeddingMatrix::new(dup, 1, vec![0.0, 1.0]),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let m = EmbeddingMatrix::new(ids(3), 2, vec![0.1, -2.0, 3.5, 1e-7, 0.0, -0.0]).unwrap();
        m.save(&path).unwrap();
        let first = fs::read(&path).unwrap();
        let back = EmbeddingMatrix::load(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert_eq!(back.ids(), m.ids());
    }

    #[test]
    fn qrels_split_labels() {
        let j = parse_qrels("q1\td1\t1\nq1\td2\t-1\n").unwrap();
        let q = j.get("q1").unwrap();
        assert_eq!(q.positives, vec!["d1"]);
        assert_eq!(q.negatives, vec!["d2"]);
    }

    #[test]
    fn qrels_conflicting_label() {
        let err = parse_qrels("q1\td1\t1\nq1\td1\t-1\n").unwrap_err();
        assert_eq!(err.to_string(), "conflicting label for (q1,d1)");
    }

    #[test]
    fn qrels_without_positive() {
        let err = parse_qrels("q1\td2\t-1\n").unwrap_err();
        assert_eq!(err.to_string(), "query q1 has no positive");
    }

    #[test]
    fn qrels_bad_label_and_duplicates() {
        assert!(parse_qrels("q1\td1\t2\n").is_err());
        let j = parse_qrels("q1\td1\t1\nq1\td1\t1\n").unwrap();
        assert_eq!(j.get("q1").unwrap().positives.len(), 1);
    }

    fn ten_queries() -> RelevanceJudgments {
        RelevanceJudgments::from_triples((0..10).map(|i| (format!("q{i}"), format!("d{i}"), 1i8)))
            .unwrap()
    }

    #[test]
    fn exhaustive_batch_covers_all_queries() {
        let j = ten_queries();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = sample_minibatch(&j, 10, &mut rng).unwrap();
        let qs: HashSet<_> = b.entries.iter().map(|e| e.0.clone()).collect();
        assert_eq!(qs.len(), 10);
    }

    #[test]
    fn sampling_is_deterministic() {
        let j = ten_queries();
        let a = sample_minibatch(&j, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_minibatch(&j, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let j = ten_queries();
        assert!(sample_minibatch(&j, 11, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn positives_drawn_uniformly() {
        let j = RelevanceJudgments::from_triples([("q", "d1", 1i8), ("q", "d2", 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_minibatch(&j, 1, &mut rng).unwrap().entries[0].1 == "d1")
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
    }

    #[test]
    fn no_query_starves() {
        let j = ten_queries();
        let size = 3;
        let draws = 100 * (10 / size + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen: HashMap<String, usize> = HashMap::new();
        for _ in 0..draws {
            for (q, _) in sample_minibatch(&j, size, &mut rng).unwrap().entries {
                *seen.entry(q).or_default() += 1;
            }
        }
        assert_eq!(seen.len(), 10);
        assert!(seen.values().all(|&c| c > 0));
    }
}
