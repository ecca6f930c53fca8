//! Disjoint baseline: a siamese-only encoder head, then k-means over the
//! encoded corpus with n-probe retrieval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::encoder::{EncoderParams, Metric};
use crate::error::{Error, Result};
use crate::index::{Router, SearchIndex};
use crate::indexer::LeafId;
use crate::math::Matrix;
use crate::retriever::{rerank, Candidates, EncodedCorpus, LeafMap};
use crate::trainer::{train, TrainData, TrainingLog};

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub centroids: Matrix,
    pub assignments: LeafMap,
}

#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub index: IvfIndex,
    /// Sum of squared distances after seeding and after every iteration.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties toward the lower index.
fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, sq_dist(p, centroids.row(0)));
            for c in 1..centroids.rows() {
                let d = sq_dist(p, centroids.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn seed_centroids<R: Rng>(points: &Matrix, leaves: usize, rng: &mut R) -> Matrix {
    let (n, m) = (points.rows(), points.cols());
    let mut centroids = Matrix::zeros(leaves, m);
    let first = rng.gen_range(0..n);
    centroids.as_mut_slice()[..m].copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for c in 1..leaves {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.as_mut_slice()[c * m..(c + 1) * m].copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

/// Seeded k-means++ followed by Lloyd iterations. Empty clusters are
/// reseeded to the point farthest from its centroid.
pub fn kmeans_with_history(
    points: &Matrix,
    leaves: usize,
    iters: usize,
    seed: u64,
) -> Result<KmeansRun> {
    let (n, m) = (points.rows(), points.cols());
    if leaves == 0 || leaves > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {leaves} clusters from {n} points"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, leaves, &mut rng);
    let (mut labels, mut dists) = assign(points, &centroids);
    let mut objective = vec![dists.iter().sum::<f64>()];

    for _ in 0..iters {
        let mut sums = Matrix::zeros(leaves, m);
        let mut counts = vec![0usize; leaves];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums.as_mut_slice()[c * m..(c + 1) * m]
                .iter_mut()
                .zip(points.row(i))
            {
                *s += x;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                for k in 0..m {
                    centroids.set(c, k, sums.get(c, k) / count as f64);
                }
            }
        }
        let mut taken = vec![false; n];
        for c in (0..leaves).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, sq_dist(points.row(i), centroids.row(labels[i]))))
                .fold(None::<(usize, f64)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                })
                .map(|(i, _)| i)
                .expect("leaves <= n leaves a free point");
            taken[far] = true;
            centroids.as_mut_slice()[c * m..(c + 1) * m].copy_from_slice(points.row(far));
        }
        let (next, next_dists) = assign(points, &centroids);
        let changed = next != labels;
        labels = next;
        dists = next_dists;
        objective.push(dists.iter().sum());
        if !changed {
            break;
        }
    }

    let mut lists = vec![Vec::new(); leaves];
    for (i, &c) in labels.iter().enumerate() {
        lists[c].push(i as u32);
    }
    Ok(KmeansRun {
        index: IvfIndex {
            centroids,
            assignments: LeafMap::from_assignments(lists, 1, n)?,
        },
        objective,
    })
}

pub fn kmeans(points: &Matrix, leaves: usize, iters: usize, seed: u64) -> Result<IvfIndex> {
    Ok(kmeans_with_history(points, leaves, iters, seed)?.index)
}

/// The `n_probe` centroids closest to `query` in L2, ties toward the lower id.
pub fn nearest_centroids(query: &[f64], centroids: &Matrix, n_probe: usize) -> Result<Vec<LeafId>> {
    if n_probe == 0 || n_probe > centroids.rows() {
        return Err(Error::InvalidArgument(format!(
            "n_probe {n_probe} outside [1, {}]",
            centroids.rows()
        )));
    }
    if query.len() != centroids.cols() {
        return Err(Error::dim(centroids.cols(), query.len()));
    }
    let mut scored: Vec<(usize, f64)> = (0..centroids.rows())
        .map(|c| (c, sq_dist(query, centroids.row(c))))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(n_probe)
        .map(|(c, _)| LeafId(c))
        .collect())
}

/// Places every point in the lists of its `d2l` nearest centroids.
pub fn assign_lists(points: &Matrix, centroids: &Matrix, d2l: usize) -> Result<LeafMap> {
    let mut lists = vec![Vec::new(); centroids.rows()];
    for i in 0..points.rows() {
        for leaf in nearest_centroids(points.row(i), centroids, d2l)? {
            lists[leaf.0].push(i as u32);
        }
    }
    LeafMap::from_assignments(lists, d2l, points.rows())
}

/// Probes `n_probe` lists and reranks their union exactly.
pub fn ivf_retrieve(
    query_emb: &[f64],
    index: &IvfIndex,
    n_probe: usize,
    k: usize,
    docs: &EncodedCorpus,
    metric: Metric,
) -> Result<(Vec<(u32, f64)>, Candidates)> {
    let cands = index
        .assignments
        .collect(nearest_centroids(query_emb, &index.centroids, n_probe)?);
    Ok((rerank(query_emb, &cands, docs, k, metric)?, cands))
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub encoder: EncoderParams,
    pub index: IvfIndex,
    pub log: TrainingLog,
}

impl BaselineOutcome {
    pub fn into_search_index(
        self,
        docs: &crate::data::EmbeddingMatrix,
        metric: Metric,
    ) -> Result<SearchIndex> {
        SearchIndex::new(
            self.encoder,
            Router::Centroids(self.index.centroids),
            self.index.assignments,
            docs.clone(),
            metric,
        )
    }
}

/// Trains the encoder with the siamese term only (same budget as the joint
/// run), freezes it, and clusters the encoded corpus into `B^H` lists.
pub fn train_baseline(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<BaselineOutcome> {
    let siamese_only = TrainConfig {
        lambda2: 0.0,
        lambda3: 0.0,
        ..cfg.clone()
    };
    let run = train(data, &siamese_only)?;
    let encoded = EncodedCorpus::encode(data.docs, &run.model.encoder)?;
    let mut index = kmeans(
        encoded.matrix(),
        cfg.num_leaves(),
        cfg.kmeans_iters,
        cfg.seed,
    )?;
    if cfg.d2l > 1 {
        index.assignments = assign_lists(encoded.matrix(), &index.centroids, cfg.d2l)?;
    }
    Ok(BaselineOutcome {
        encoder: run.model.encoder,
        index,
        log: run.log,
    })
}
