//! A searchable index: encoder head, routing structure, leaf map, and the
//! document corpus it was built over.

use std::fmt;
use std::str::FromStr;

use crate::data::EmbeddingMatrix;
use crate::encoder::{EncoderParams, Metric};
use crate::error::{Error, Result};
use crate::indexer::IndexerParams;
use crate::ivf::nearest_centroids;
use crate::math::Matrix;
use crate::retriever::{rerank, retrieve, Candidates, EncodedCorpus, LeafMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    /// Jointly trained tree.
    Ehi,
    /// k-means inverted file over a siamese-only encoder.
    Ivf,
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexKind::Ehi => "ehi",
            IndexKind::Ivf => "ivf",
        })
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ehi" => Ok(IndexKind::Ehi),
            "ivf" => Ok(IndexKind::Ivf),
            _ => Err(Error::InvalidArgument(format!("unknown index kind {s:?}"))),
        }
    }
}

/// How queries are routed to leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum Router {
    Tree(IndexerParams),
    /// One centroid per leaf, `L × m`.
    Centroids(Matrix),
}

impl Router {
    pub fn kind(&self) -> IndexKind {
        match self {
            Router::Tree(_) => IndexKind::Ehi,
            Router::Centroids(_) => IndexKind::Ivf,
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Router::Tree(phi) => phi.num_leaves(),
            Router::Centroids(c) => c.rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<(u32, f64)>,
    pub visited_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SearchIndex {
    pub encoder: EncoderParams,
    pub router: Router,
    pub leaf_map: LeafMap,
    pub docs: EmbeddingMatrix,
    pub metric: Metric,
    encoded: EncodedCorpus,
}

impl SearchIndex {
    pub fn new(
        encoder: EncoderParams,
        router: Router,
        leaf_map: LeafMap,
        docs: EmbeddingMatrix,
        metric: Metric,
    ) -> Result<Self> {
        let dim = encoder.dim();
        if docs.dim() != dim {
            return Err(Error::dim(dim, docs.dim()));
        }
        let router_dim = match &router {
            Router::Tree(phi) => phi.dim(),
            Router::Centroids(c) => c.cols(),
        };
        if router_dim != dim {
            return Err(Error::dim(dim, router_dim));
        }
        if leaf_map.num_leaves() != router.num_leaves() {
            return Err(Error::dim(router.num_leaves(), leaf_map.num_leaves()));
        }
        if leaf_map.total_docs() != docs.count() {
            return Err(Error::dim(docs.count(), leaf_map.total_docs()));
        }
        let encoded = EncodedCorpus::encode(&docs, &encoder)?;
        Ok(SearchIndex {
            encoder,
            router,
            leaf_map,
            docs,
            metric,
            encoded,
        })
    }

    pub fn kind(&self) -> IndexKind {
        self.router.kind()
    }

    /// Beam (or n-probe) at which every leaf is visited.
    pub fn max_beam(&self) -> usize {
        self.router.num_leaves()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.count()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn doc_id(&self, index: u32) -> &str {
        self.docs.id(index as usize)
    }

    pub fn encoded(&self) -> &EncodedCorpus {
        &self.encoded
    }

    pub fn encode_query(&self, base: &[f32]) -> Result<Vec<f64>> {
        self.encoder.encode(base)
    }

    /// Candidates from the top `beam` leaves (tree) or `beam` nearest
    /// centroids (inverted file). Beams past the leaf count visit every leaf.
    pub fn candidates(&self, query_emb: &[f64], beam: usize) -> Result<Candidates> {
        if beam == 0 {
            return Err(Error::InvalidArgument("beam must be >= 1".into()));
        }
        match &self.router {
            Router::Tree(phi) => retrieve(query_emb, phi, &self.leaf_map, beam),
            Router::Centroids(c) => {
                let probe = beam.min(c.rows());
                Ok(self
                    .leaf_map
                    .collect(nearest_centroids(query_emb, c, probe)?))
            }
        }
    }

    pub fn search(&self, query_base: &[f32], beam: usize, k: usize) -> Result<SearchResult> {
        let q = self.encode_query(query_base)?;
        let cands = self.candidates(&q, beam)?;
        Ok(SearchResult {
            hits: rerank(&q, &cands, &self.encoded, k, self.metric)?,
            visited_fraction: cands.visited_fraction,
        })
    }

    /// Brute-force ranking over the whole corpus.
    pub fn exact_search(&self, query_base: &[f32], k: usize) -> Result<Vec<(u32, f64)>> {
        let q = self.encode_query(query_base)?;
        crate::retriever::exact_search(&q, &self.encoded, k, self.metric)
    }
}
