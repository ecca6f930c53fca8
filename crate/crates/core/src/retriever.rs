//! Beam search over the tree, the leaf → documents map, candidate
//! collection, and exact reranking.

use std::cmp::Ordering;

use crate::data::EmbeddingMatrix;
use crate::encoder::{similarity, EncoderParams, Metric};
use crate::error::{Error, Result};
use crate::indexer::{IndexerParams, LeafId};
use crate::math::Matrix;

/// Documents indexed under each leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafMap {
    /// `assignments[leaf]` holds sorted document indices.
    assignments: Vec<Vec<u32>>,
    d2l: usize,
    total_docs: usize,
}

impl LeafMap {
    /// Validates that every document sits in exactly `d2l` distinct leaves.
    pub fn from_assignments(
        assignments: Vec<Vec<u32>>,
        d2l: usize,
        total_docs: usize,
    ) -> Result<Self> {
        if d2l == 0 || d2l > assignments.len() {
            return Err(Error::InvalidArgument(format!(
                "d2l {d2l} outside [1, {}]",
                assignments.len()
            )));
        }
        let mut per_doc = vec![0usize; total_docs];
        for list in &assignments {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Artifact("leaf list not strictly sorted".into()));
            }
            for &d in list {
                let slot = per_doc
                    .get_mut(d as usize)
                    .ok_or_else(|| Error::Artifact(format!("document index {d} out of range")))?;
                *slot += 1;
            }
        }
        if let Some(d) = per_doc.iter().position(|&c| c != d2l) {
            return Err(Error::Artifact(format!(
                "document {d} appears in {} leaves, expected {d2l}",
                per_doc[d]
            )));
        }
        Ok(LeafMap {
            assignments,
            d2l,
            total_docs,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.assignments.len()
    }

    pub fn d2l(&self) -> usize {
        self.d2l
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn docs(&self, leaf: LeafId) -> &[u32] {
        &self.assignments[leaf.0]
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.assignments
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total_assignments(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    /// Deduplicated union of the given leaves' documents.
    pub fn collect<I: IntoIterator<Item = LeafId>>(&self, leaves: I) -> Candidates {
        let mut docs: Vec<u32> = leaves
            .into_iter()
            .flat_map(|l| self.assignments[l.0].iter().copied())
            .collect();
        docs.sort_unstable();
        docs.dedup();
        Candidates::new(docs, self.total_docs)
    }
}

/// Unique candidate documents and the fraction of the corpus they represent.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub doc_indices: Vec<u32>,
    pub visited_fraction: f64,
}

impl Candidates {
    pub fn new(doc_indices: Vec<u32>, total_docs: usize) -> Self {
        let visited_fraction = if total_docs == 0 {
            0.0
        } else {
            doc_indices.len() as f64 / total_docs as f64
        };
        Candidates {
            doc_indices,
            visited_fraction,
        }
    }

    pub fn all(total_docs: usize) -> Self {
        Candidates::new((0..total_docs as u32).collect(), total_docs)
    }

    pub fn len(&self) -> usize {
        self.doc_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_indices.is_empty()
    }
}

/// Descending by score, ties toward the lower id.
pub(crate) fn by_score_desc<T: Ord>(a: &(T, f64), b: &(T, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Level-synchronous beam search returning up to `beta` leaves with their
/// chained probabilities, best first.
pub fn top_beta_leaves(
    emb: &[f64],
    phi: &IndexerParams,
    beta: usize,
) -> Result<Vec<(LeafId, f64)>> {
    if beta == 0 {
        return Err(Error::InvalidArgument("beam must be >= 1".into()));
    }
    let b = phi.branching();
    // (node id, probability, path)
    let mut frontier: Vec<(usize, f64, Vec<usize>)> = vec![(0, 1.0, Vec::new())];
    for _ in 0..phi.height() {
        let mut expanded = Vec::with_capacity(frontier.len() * b);
        for (node, prob, path) in &frontier {
            let dist = phi.child_distribution(emb, path)?;
            for (child, p) in dist.into_iter().enumerate() {
                let mut next = path.clone();
                next.push(child);
                expanded.push((node * b + child, prob * p, next));
            }
        }
        expanded.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        expanded.truncate(beta);
        frontier = expanded;
    }
    Ok(frontier
        .into_iter()
        .map(|(n, p, _)| (LeafId(n), p))
        .collect())
}

/// Encodes every document and places it in its `d2l` most probable leaves.
pub fn build_leaf_map(
    docs: &EmbeddingMatrix,
    theta: &EncoderParams,
    phi: &IndexerParams,
    d2l: usize,
) -> Result<LeafMap> {
    let leaves = phi.num_leaves();
    if d2l == 0 || d2l > leaves {
        return Err(Error::InvalidArgument(format!(
            "d2l {d2l} outside [1, {leaves}]"
        )));
    }
    let mut assignments = vec![Vec::new(); leaves];
    for i in 0..docs.count() {
        let emb = theta.encode(docs.row(i))?;
        for (leaf, _) in top_beta_leaves(&emb, phi, d2l)? {
            assignments[leaf.0].push(i as u32);
        }
    }
    Ok(LeafMap {
        assignments,
        d2l,
        total_docs: docs.count(),
    })
}

/// Union of the documents stored in the query's top-`beta` leaves.
pub fn retrieve(
    query_emb: &[f64],
    phi: &IndexerParams,
    map: &LeafMap,
    beta: usize,
) -> Result<Candidates> {
    let leaves = top_beta_leaves(query_emb, phi, beta)?;
    Ok(map.collect(leaves.into_iter().map(|(l, _)| l)))
}

/// Retrieval embeddings of a whole corpus under a fixed encoder head.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    embeddings: Matrix,
}

impl EncodedCorpus {
    pub fn encode(docs: &EmbeddingMatrix, theta: &EncoderParams) -> Result<Self> {
        let mut data = Vec::with_capacity(docs.count() * theta.dim());
        for i in 0..docs.count() {
            data.extend(theta.encode(docs.row(i))?);
        }
        Ok(EncodedCorpus {
            embeddings: Matrix::from_vec(docs.count(), theta.dim(), data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.embeddings
    }
}

/// Scores candidates against the query and keeps the best `k`, ties toward
/// the lower document index.
pub fn rerank(
    query_emb: &[f64],
    candidates: &Candidates,
    docs: &EncodedCorpus,
    k: usize,
    metric: Metric,
) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &d in &candidates.doc_indices {
        scored.push((d, similarity(query_emb, docs.row(d as usize), metric)?));
    }
    scored.sort_by(by_score_desc);
    scored.truncate(k);
    Ok(scored)
}

/// Brute-force scoring of the entire corpus.
pub fn exact_search(
    query_emb: &[f64],
    docs: &EncodedCorpus,
    k: usize,
    metric: Metric,
) -> Result<Vec<(u32, f64)>> {
    rerank(query_emb, &Candidates::all(docs.len()), docs, k, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_docs(rng: &mut ChaCha8Rng, n: usize, m: usize) -> EmbeddingMatrix {
        let data = (0..n * m).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        EmbeddingMatrix::new((0..n).map(|i| format!("d{i}")).collect(), m, data).unwrap()
    }

    #[test]
    fn top_two_of_explicit_distribution() {
        let mut phi = IndexerParams::zeros(1, 4, 1).unwrap();
        for (c, p) in [0.4f64, 0.3, 0.2, 0.1].into_iter().enumerate() {
            phi.weights[0].set(0, c, p.ln());
        }
        let top = top_beta_leaves(&[1.0], &phi, 2).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!((top[0].0, top[1].0), (LeafId(0), LeafId(1)));
        assert!((top[0].1 - 0.4).abs() < 1e-12 && (top[1].1 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn full_beam_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = IndexerParams::random(5, 3, 2, &mut rng).unwrap();
        let emb: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beam = top_beta_leaves(&emb, &phi, 9).unwrap();
        let mut brute: Vec<(usize, f64)> = (0..9)
            .map(|l| (l, phi.leaf_probability(&emb, LeafId(l)).unwrap()))
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let total: f64 = beam.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-5);
        for ((l, p), (bl, bp)) in beam.iter().zip(&brute) {
            assert_eq!(l.0, *bl);
            assert!((p - bp).abs() < 1e-12);
        }
        // Oversized beam carries everything.
        assert_eq!(top_beta_leaves(&emb, &phi, 100).unwrap().len(), 9);
        assert!(top_beta_leaves(&emb, &phi, 0).is_err());
    }

    #[test]
    fn leaf_map_partitions_and_replicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let docs = random_docs(&mut rng, 10, 4);
        let theta = EncoderParams::identity(4, true);
        let phi = IndexerParams::random(4, 2, 2, &mut rng).unwrap();
        let m1 = build_leaf_map(&docs, &theta, &phi, 1).unwrap();
        assert_eq!(m1.total_assignments(), 10);
        for i in 0..10 {
            let leaf = phi
                .path_embedding(&theta.encode(docs.row(i)).unwrap())
                .unwrap()
                .leaf();
            assert!(m1.docs(leaf).contains(&(i as u32)));
        }
        let m3 = build_leaf_map(&docs, &theta, &phi, 3).unwrap();
        assert_eq!(m3.total_assignments(), 30);
        for i in 0..10u32 {
            let n = m3.assignments().iter().filter(|l| l.contains(&i)).count();
            assert_eq!(n, 3);
        }
        assert!(LeafMap::from_assignments(m3.assignments().to_vec(), 3, 10).is_ok());
        assert!(LeafMap::from_assignments(m3.assignments().to_vec(), 1, 10).is_err());
        assert!(build_leaf_map(&docs, &theta, &phi, 5).is_err());
    }

    #[test]
    fn full_beam_retrieves_everything_and_beam_one_the_argmax_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let docs = random_docs(&mut rng, 25, 3);
        let theta = EncoderParams::identity(3, false);
        let phi = IndexerParams::random(3, 3, 2, &mut rng).unwrap();
        let map = build_leaf_map(&docs, &theta, &phi, 1).unwrap();
        let q = vec![0.2, -0.5, 0.9];
        let all = retrieve(&q, &phi, &map, 9).unwrap();
        assert_eq!(all.len(), 25);
        assert_eq!(all.visited_fraction, 1.0);
        let one = retrieve(&q, &phi, &map, 1).unwrap();
        let leaf = phi.path_embedding(&q).unwrap().leaf();
        assert_eq!(one.doc_indices, map.docs(leaf).to_vec());
    }

    #[test]
    fn visited_fraction_grows_with_beam() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let docs = random_docs(&mut rng, 40, 4);
            let theta = EncoderParams::identity(4, true);
            let phi = IndexerParams::random(4, 2, 3, &mut rng).unwrap();
            let map = build_leaf_map(&docs, &theta, &phi, 1).unwrap();
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut last = 0.0;
            for beta in 1..=8 {
                let f = retrieve(&q, &phi, &map, beta).unwrap().visited_fraction;
                assert!(f >= last);
                last = f;
            }
        }
    }

    #[test]
    fn rerank_rules() {
        let docs = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let enc = EncodedCorpus::encode(&docs, &EncoderParams::identity(2, false)).unwrap();
        let q = [1.0, 0.2];
        let single = rerank(&q, &Candidates::new(vec![2], 3), &enc, 10, Metric::Dot).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].0, 2);
        // a and b tie exactly; a has the lower index.
        let ranked = exact_search(&q, &enc, 10, Metric::Cosine).unwrap();
        assert_eq!(
            ranked.iter().map(|r| r.0).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!(rerank(&q, &Candidates::all(3), &enc, 0, Metric::Dot).is_err());
    }
}
