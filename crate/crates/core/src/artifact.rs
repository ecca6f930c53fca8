//! Single-file binary index format.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! magic "EHIIDX\0\0" | u32 version | u8 kind (0 tree, 1 inverted file)
//! u64 len, config text (key = value lines)
//! encoder: u64 m, u8 normalize, f64[m·m] weight, f64[m] bias
//! tree:    u64 B, u64 H, per level f64 W_l then f64 U_l
//!   or
//! ivf:     u64 L, f64[L·m] centroids
//! leaf map: u64 leaves, u64 d2l, u64 docs, per leaf u64 n + u32[n]
//! docs: u64 n, f32[n·m], per doc u64 len + utf-8 id
//! ```

use std::path::Path;

use crate::config::TrainConfig;
use crate::data::EmbeddingMatrix;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::index::{IndexKind, Router, SearchIndex};
use crate::indexer::{IndexerParams, MAX_LEAVES};
use crate::ivf::{assign_lists, train_baseline};
use crate::math::Matrix;
use crate::retriever::{build_leaf_map, EncodedCorpus, LeafMap};
use crate::trainer::{train, TrainData, TrainingLog};

pub const ARTIFACT_MAGIC: &[u8; 8] = b"EHIIDX\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// A trained index together with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct IndexArtifact {
    pub config: TrainConfig,
    pub index: SearchIndex,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Artifact(format!("truncated at byte {}", self.at)))?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Artifact(format!("length {v} too large")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Artifact("overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Artifact("overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::from_vec(rows, cols, self.f64s(rows * cols)?)
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u64()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Artifact("id is not valid utf-8".into()))
    }
}

impl IndexArtifact {
    /// Trains either index kind on `data` and indexes `data.docs`.
    pub fn train(
        kind: IndexKind,
        data: &TrainData<'_>,
        config: &TrainConfig,
    ) -> Result<(Self, TrainingLog)> {
        let (index, log) = match kind {
            IndexKind::Ehi => {
                let out = train(data, config)?;
                let index = SearchIndex::new(
                    out.model.encoder,
                    Router::Tree(out.model.indexer),
                    out.leaf_map,
                    data.docs.clone(),
                    config.metric,
                )?;
                (index, out.log)
            }
            IndexKind::Ivf => {
                let out = train_baseline(data, config)?;
                let log = out.log.clone();
                (out.into_search_index(data.docs, config.metric)?, log)
            }
        };
        Ok((
            IndexArtifact {
                config: config.clone(),
                index,
            },
            log,
        ))
    }

    /// Keeps the trained encoder and router but rebuilds the leaf map over
    /// `docs` with each document placed in `d2l` leaves.
    pub fn reindex(&self, docs: EmbeddingMatrix, d2l: usize) -> Result<Self> {
        let idx = &self.index;
        let leaf_map = match &idx.router {
            Router::Tree(phi) => build_leaf_map(&docs, &idx.encoder, phi, d2l)?,
            Router::Centroids(c) => {
                assign_lists(EncodedCorpus::encode(&docs, &idx.encoder)?.matrix(), c, d2l)?
            }
        };
        let config = TrainConfig {
            d2l,
            ..self.config.clone()
        };
        Ok(IndexArtifact {
            index: SearchIndex::new(
                idx.encoder.clone(),
                idx.router.clone(),
                leaf_map,
                docs,
                idx.metric,
            )?,
            config,
        })
    }

    pub fn kind(&self) -> IndexKind {
        self.index.kind()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(ARTIFACT_MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(match self.kind() {
            IndexKind::Ehi => 0,
            IndexKind::Ivf => 1,
        });
        w.str(&self.config.to_text());

        let enc = &self.index.encoder;
        w.u64(enc.dim());
        w.u8(enc.normalize as u8);
        w.f64s(enc.weight.as_slice());
        w.f64s(&enc.bias);

        match &self.index.router {
            Router::Tree(phi) => {
                w.u64(phi.branching());
                w.u64(phi.height());
                for (wl, ul) in phi.weights.iter().zip(&phi.mixers) {
                    w.f64s(wl.as_slice());
                    w.f64s(ul.as_slice());
                }
            }
            Router::Centroids(c) => {
                w.u64(c.rows());
                w.f64s(c.as_slice());
            }
        }

        let map = &self.index.leaf_map;
        w.u64(map.num_leaves());
        w.u64(map.d2l());
        w.u64(map.total_docs());
        for list in map.assignments() {
            w.u64(list.len());
            for &d in list {
                w.u32(d);
            }
        }

        let docs = &self.index.docs;
        w.u64(docs.count());
        w.f32s(docs.as_slice());
        for id in docs.ids() {
            w.str(id);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(8).ok() != Some(&ARTIFACT_MAGIC[..]) {
            return Err(Error::MalformedHeader("not an index artifact".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = match r.u8()? {
            0 => IndexKind::Ehi,
            1 => IndexKind::Ivf,
            k => return Err(Error::Artifact(format!("unknown index kind tag {k}"))),
        };
        let config = TrainConfig::parse(&r.string()?)?;

        let m = r.u64()?;
        let normalize = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Artifact(format!("bad normalize flag {v}"))),
        };
        let encoder = EncoderParams {
            weight: r.matrix(m, m)?,
            bias: r.f64s(m)?,
            normalize,
        };

        let router = match kind {
            IndexKind::Ehi => {
                let b = r.u64()?;
                let h = r.u64()?;
                if b < 2 || h == 0 || h > 64 {
                    return Err(Error::Artifact(format!("bad tree shape B={b} H={h}")));
                }
                let mut weights = Vec::with_capacity(h);
                let mut mixers = Vec::with_capacity(h);
                for l in 0..h {
                    let n = b * l + m;
                    weights.push(r.matrix(n, b)?);
                    mixers.push(r.matrix(n, n)?);
                }
                Router::Tree(IndexerParams::from_parts(m, b, h, weights, mixers)?)
            }
            IndexKind::Ivf => {
                let leaves = r.u64()?;
                if leaves == 0 || leaves > MAX_LEAVES {
                    return Err(Error::Artifact(format!("bad centroid count {leaves}")));
                }
                Router::Centroids(r.matrix(leaves, m)?)
            }
        };

        let leaves = r.u64()?;
        let d2l = r.u64()?;
        let total_docs = r.u64()?;
        if leaves != router.num_leaves() {
            return Err(Error::Artifact(format!(
                "leaf map has {leaves} leaves, router has {}",
                router.num_leaves()
            )));
        }
        let mut assignments = Vec::with_capacity(leaves);
        for _ in 0..leaves {
            let n = r.u64()?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Artifact("overflow".into()))?,
            )?;
            assignments.push(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        let leaf_map = LeafMap::from_assignments(assignments, d2l, total_docs)?;

        let n = r.u64()?;
        let data = r.f32s(
            n.checked_mul(m)
                .ok_or_else(|| Error::Artifact("overflow".into()))?,
        )?;
        let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        if r.at != bytes.len() {
            return Err(Error::Artifact(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        let docs = EmbeddingMatrix::new(ids, m, data)?;
        let metric = config.metric;
        Ok(IndexArtifact {
            config,
            index: SearchIndex::new(encoder, router, leaf_map, docs, metric)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
