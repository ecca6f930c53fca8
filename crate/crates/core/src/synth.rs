//! Synthetic clustered corpus: Gaussian clusters of documents, queries drawn
//! as noisy copies of documents with the source document as the positive.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{EmbeddingMatrix, RelevanceJudgments};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub docs: usize,
    pub clusters: usize,
    pub dim: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    /// Standard deviation of cluster centers around the origin.
    pub center_scale: f64,
    /// Standard deviation of documents around their center.
    pub cluster_spread: f64,
    /// Standard deviation of a query around its source document.
    pub query_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 2048,
            clusters: 32,
            dim: 16,
            train_queries: 512,
            test_queries: 256,
            center_scale: 1.0,
            cluster_spread: 0.2,
            query_noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: EmbeddingMatrix,
    /// Cluster of every document.
    pub doc_cluster: Vec<usize>,
    pub train_queries: EmbeddingMatrix,
    pub train_qrels: RelevanceJudgments,
    pub test_queries: EmbeddingMatrix,
    pub test_qrels: RelevanceJudgments,
}

fn gaussian<R: Rng>(rng: &mut R, scale: f64) -> f32 {
    (rng.sample::<f64, _>(StandardNormal) * scale) as f32
}

fn queries_from<R: Rng>(
    rng: &mut R,
    docs: &EmbeddingMatrix,
    sources: &[usize],
    prefix: &str,
    noise: f64,
) -> Result<(EmbeddingMatrix, RelevanceJudgments)> {
    let dim = docs.dim();
    let mut data = Vec::with_capacity(sources.len() * dim);
    let mut ids = Vec::with_capacity(sources.len());
    let mut triples = Vec::with_capacity(sources.len());
    for (i, &src) in sources.iter().enumerate() {
        data.extend(docs.row(src).iter().map(|&x| x + gaussian(rng, noise)));
        let id = format!("{prefix}{i}");
        triples.push((id.clone(), docs.id(src).to_owned(), 1i8));
        ids.push(id);
    }
    Ok((
        EmbeddingMatrix::new(ids, dim, data)?,
        RelevanceJudgments::from_triples(triples)?,
    ))
}

/// Train and test queries come from disjoint sets of source documents.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.clusters == 0 || cfg.dim == 0 || cfg.docs < cfg.clusters {
        return Err(Error::InvalidArgument(
            "need dim >= 1 and docs >= clusters >= 1".into(),
        ));
    }
    if cfg.train_queries + cfg.test_queries > cfg.docs {
        return Err(Error::InvalidArgument(
            "more queries than source documents".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<f32> = (0..cfg.clusters * cfg.dim)
        .map(|_| gaussian(&mut rng, cfg.center_scale))
        .collect();

    let mut data = Vec::with_capacity(cfg.docs * cfg.dim);
    let mut doc_cluster = Vec::with_capacity(cfg.docs);
    for d in 0..cfg.docs {
        let c = d % cfg.clusters;
        doc_cluster.push(c);
        let center = &centers[c * cfg.dim..(c + 1) * cfg.dim];
        data.extend(
            center
                .iter()
                .map(|&x| x + gaussian(&mut rng, cfg.cluster_spread)),
        );
    }
    let docs = EmbeddingMatrix::new(
        (0..cfg.docs).map(|i| format!("d{i}")).collect(),
        cfg.dim,
        data,
    )?;

    let sources = sample(&mut rng, cfg.docs, cfg.train_queries + cfg.test_queries).into_vec();
    let (train_src, test_src) = sources.split_at(cfg.train_queries);
    let (train_queries, train_qrels) =
        queries_from(&mut rng, &docs, train_src, "train", cfg.query_noise)?;
    let (test_queries, test_qrels) =
        queries_from(&mut rng, &docs, test_src, "test", cfg.query_noise)?;
    Ok(SynthCorpus {
        docs,
        doc_cluster,
        train_queries,
        train_qrels,
        test_queries,
        test_qrels,
    })
}

impl SynthCorpus {
    /// Writes `docs.emb`, `train.emb`, `test.emb` (each with an `.ids`
    /// sidecar) and `train.qrels`, `test.qrels` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.docs.save(dir.join("docs.emb"))?;
        self.train_queries.save(dir.join("train.emb"))?;
        self.test_queries.save(dir.join("test.emb"))?;
        for (name, qrels) in [
            ("train.qrels", &self.train_qrels),
            ("test.qrels", &self.test_qrels),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, qrels.to_tsv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
