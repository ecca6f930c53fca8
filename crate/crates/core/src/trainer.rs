//! Joint optimization of the encoder head and the tree indexer.
//!
//! Each step samples a minibatch, mines one hard negative per query from the
//! current leaf-map snapshot, and accumulates three triplet terms:
//!
//! * siamese: encoder-space triplets against the hard negative and against
//!   every other query's positive,
//! * indexing: the same in-batch triplets on path embeddings,
//! * intra-leaf: positive-vs-negative document triplets on path embeddings,
//!   gated on the documents being dissimilar (cosine below `tau`).
//!
//! Each term is averaged over its triplet count; the total is the
//! `lambda`-weighted sum. Gradients are analytic with routing held fixed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{sample_minibatch, Batch, EmbeddingMatrix, RelevanceJudgments};
use crate::encoder::{similarity, triplet_margin, EncodeCache, EncoderParams, Metric};
use crate::error::{Error, Result};
use crate::evaluator::expected_docs_per_leaf;
use crate::indexer::{IndexerParams, PathTrace};
use crate::math::dot;
use crate::optim::{optimizer_step, MomentState};
use crate::retriever::{build_leaf_map, retrieve, LeafMap};

/// Encoder head and tree routing parameters (θ, φ).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub indexer: IndexerParams,
}

impl Model {
    /// Identity encoder head and Glorot-initialized routing layers.
    pub fn init<R: Rng + ?Sized>(dim: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        Ok(Model {
            encoder: EncoderParams::identity(dim, cfg.normalize),
            indexer: IndexerParams::random(dim, cfg.branching, cfg.height, rng)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: self.encoder.zeros_like(),
            indexer: self.indexer.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    /// Every trainable tensor, encoder first.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![
            ("encoder.W".to_string(), self.encoder.weight.as_mut_slice()),
            ("encoder.b".to_string(), self.encoder.bias.as_mut_slice()),
        ];
        out.extend(self.indexer.tensors_mut());
        out
    }

    pub fn num_params(&mut self) -> usize {
        self.tensors_mut().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Mean value of each loss term and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub siamese: f64,
    pub indexing: f64,
    pub intra_leaf: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted(siamese: f64, indexing: f64, intra_leaf: f64, cfg: &TrainConfig) -> Self {
        LossBreakdown {
            siamese,
            indexing,
            intra_leaf,
            total: cfg.lambda1 * siamese + cfg.lambda2 * indexing + cfg.lambda3 * intra_leaf,
        }
    }

    fn check(&self, epoch: usize) -> Result<()> {
        for (term, v) in [
            ("siamese", self.siamese),
            ("indexing", self.indexing),
            ("intra_leaf", self.intra_leaf),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, epoch });
            }
        }
        Ok(())
    }
}

/// Training inputs: query and document base embeddings plus labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub queries: &'a EmbeddingMatrix,
    pub docs: &'a EmbeddingMatrix,
    pub judgments: &'a RelevanceJudgments,
}

impl TrainData<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.queries.dim() != self.docs.dim() {
            return Err(Error::dim(self.docs.dim(), self.queries.dim()));
        }
        if self.judgments.is_empty() || self.docs.count() == 0 {
            return Err(Error::Empty);
        }
        for q in self.judgments.queries() {
            if self.queries.index_of(&q.query).is_none() {
                return Err(Error::UnknownId {
                    kind: "query",
                    id: q.query.clone(),
                });
            }
            for d in q.positives.iter().chain(&q.negatives) {
                if self.docs.index_of(d).is_none() {
                    return Err(Error::UnknownId {
                        kind: "document",
                        id: d.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn query_index(&self, id: &str) -> Result<usize> {
        self.queries.index_of(id).ok_or_else(|| Error::UnknownId {
            kind: "query",
            id: id.to_owned(),
        })
    }

    fn doc_index(&self, id: &str) -> Result<usize> {
        self.docs.index_of(id).ok_or_else(|| Error::UnknownId {
            kind: "document",
            id: id.to_owned(),
        })
    }
}

/// Loss, gradients, and the discrete decisions taken while computing them.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    pub grads: Model,
    /// Hinge activity, intra-leaf gates, ReLU signs and greedy paths. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub signature: Vec<u32>,
}

struct Forward {
    enc: EncodeCache,
    path: PathTrace,
}

impl Forward {
    fn u(&self) -> &[f64] {
        &self.enc.output
    }

    fn t(&self) -> &[f64] {
        &self.path.embedding.blocks
    }
}

fn forward(model: &Model, base: &[f32]) -> Result<Forward> {
    let enc = model.encoder.forward(base)?;
    let path = model.indexer.path_forward(&enc.output)?;
    Ok(Forward { enc, path })
}

/// Adds `scale·∂[a·n − a·p + γ]/∂(a, p, n)` with `a`, `p`, `n` distinct slots.
fn triplet_grads(
    a: usize,
    p: usize,
    n: usize,
    vecs: &[&[f64]],
    scale: f64,
    grads: &mut [Vec<f64>],
) {
    for k in 0..vecs[a].len() {
        grads[a][k] += scale * (vecs[n][k] - vecs[p][k]);
        grads[p][k] -= scale * vecs[a][k];
        grads[n][k] += scale * vecs[a][k];
    }
}

/// Loss and analytic gradients for one minibatch.
///
/// `hard_negs` maps query id to a mined negative document id; queries
/// without an entry contribute in-batch terms only.
pub fn batch_loss(
    batch: &Batch,
    hard_negs: &HashMap<String, String>,
    model: &Model,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let s = batch.size();
    // Slots: queries first, then each distinct document once.
    let mut slots: Vec<Forward> = Vec::with_capacity(3 * s);
    let mut doc_slot: HashMap<usize, usize> = HashMap::new();
    for (q, _) in &batch.entries {
        slots.push(forward(model, data.queries.row(data.query_index(q)?))?);
    }
    let mut slot_of_doc = |id: &str, slots: &mut Vec<Forward>| -> Result<usize> {
        let d = data.doc_index(id)?;
        if let Some(&slot) = doc_slot.get(&d) {
            return Ok(slot);
        }
        slots.push(forward(model, data.docs.row(d))?);
        doc_slot.insert(d, slots.len() - 1);
        Ok(slots.len() - 1)
    };
    let mut pos_slot = Vec::with_capacity(s);
    for (_, d) in &batch.entries {
        pos_slot.push(slot_of_doc(d, &mut slots)?);
    }
    let mut hard: Vec<(usize, usize)> = Vec::new();
    for (i, (q, _)) in batch.entries.iter().enumerate() {
        if let Some(h) = hard_negs.get(q) {
            hard.push((i, slot_of_doc(h, &mut slots)?));
        }
    }
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(s * s.saturating_sub(1));
    for (i, (qi, _)) in batch.entries.iter().enumerate() {
        for (j, (_, dj)) in batch.entries.iter().enumerate() {
            if i != j && !data.judgments.is_positive(qi, dj) {
                pairs.push((i, j));
            }
        }
    }

    let n_siamese = hard.len() + pairs.len();
    let n_pairs = pairs.len();
    let per = |lambda: f64, n: usize| if n == 0 { 0.0 } else { lambda / n as f64 };
    let siamese_scale = per(cfg.lambda1, n_siamese);
    let indexing_scale = per(cfg.lambda2, n_pairs);
    let intra_scale = per(cfg.lambda3, n_pairs);

    let us: Vec<&[f64]> = slots.iter().map(Forward::u).collect();
    let ts: Vec<&[f64]> = slots.iter().map(Forward::t).collect();
    let mut d_u = vec![vec![0.0; model.dim()]; slots.len()];
    let mut d_t = vec![vec![0.0; ts[0].len()]; slots.len()];
    let mut signature = Vec::new();
    let (mut siamese, mut indexing, mut intra) = (0.0, 0.0, 0.0);

    for &(i, h) in &hard {
        let margin = triplet_margin(us[i], us[pos_slot[i]], us[h], cfg.gamma);
        signature.push((margin > 0.0) as u32);
        if margin > 0.0 {
            siamese += margin;
            triplet_grads(i, pos_slot[i], h, &us, siamese_scale, &mut d_u);
        }
    }
    for &(i, j) in &pairs {
        let (di, dj) = (pos_slot[i], pos_slot[j]);
        let margin = triplet_margin(us[i], us[di], us[dj], cfg.gamma);
        signature.push((margin > 0.0) as u32);
        if margin > 0.0 {
            siamese += margin;
            triplet_grads(i, di, dj, &us, siamese_scale, &mut d_u);
        }

        let margin = triplet_margin(ts[i], ts[di], ts[dj], cfg.gamma);
        signature.push((margin > 0.0) as u32);
        if margin > 0.0 {
            indexing += margin;
            triplet_grads(i, di, dj, &ts, indexing_scale, &mut d_t);
        }

        let gate = similarity(us[di], us[dj], Metric::Cosine)? < cfg.tau;
        signature.push(gate as u32);
        if gate {
            // Anchor and positive are the same document.
            let margin = dot(ts[di], ts[dj]) - dot(ts[di], ts[di]) + cfg.gamma;
            signature.push((margin > 0.0) as u32);
            if margin > 0.0 {
                intra += margin;
                for k in 0..ts[di].len() {
                    d_t[di][k] += intra_scale * (ts[dj][k] - 2.0 * ts[di][k]);
                    d_t[dj][k] += intra_scale * ts[di][k];
                }
            }
        }
    }

    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let breakdown = LossBreakdown::weighted(
        mean(siamese, n_siamese),
        mean(indexing, n_pairs),
        mean(intra, n_pairs),
        cfg,
    );

    let mut grads = model.zeros_like();
    for (slot, fw) in slots.iter().enumerate() {
        let mut d_emb = std::mem::take(&mut d_u[slot]);
        model
            .indexer
            .path_backward(&fw.path, &d_t[slot], &mut grads.indexer, &mut d_emb);
        model.encoder.backward(&fw.enc, &d_emb, &mut grads.encoder);
        signature.extend(fw.path.relu_pattern().map(u32::from));
        signature.extend(fw.path.embedding.chosen_path.iter().map(|&c| c as u32));
    }
    Ok(BatchLoss {
        breakdown,
        grads,
        signature,
    })
}

/// One hard negative per query: a uniformly drawn non-positive document
/// from the query's top-`beam` leaves in `map`.
pub fn mine_hard_negatives<R: Rng + ?Sized>(
    batch: &Batch,
    model: &Model,
    map: &LeafMap,
    beam: usize,
    data: &TrainData<'_>,
    rng: &mut R,
) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (q, _) in &batch.entries {
        let emb = model
            .encoder
            .encode(data.queries.row(data.query_index(q)?))?;
        let pool: Vec<&str> = retrieve(&emb, &model.indexer, map, beam)?
            .doc_indices
            .iter()
            .map(|&d| data.docs.id(d as usize))
            .filter(|d| !data.judgments.is_positive(q, d))
            .collect();
        if let Some(h) = pool.choose(rng) {
            out.insert(q.clone(), (*h).to_owned());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the per-step breakdowns.
    pub loss: LossBreakdown,
    /// Load statistic of the leaf map under the parameters at epoch start.
    pub expected_docs_per_leaf: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// `(epoch, expected docs per leaf)` at each leaf-map rebuild.
    pub refreshes: Vec<(usize, f64)>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,siamese,indexing,intra_leaf,total,expected_docs_per_leaf,wall_ms\n",
        );
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.loss.siamese,
                e.loss.indexing,
                e.loss.intra_leaf,
                e.loss.total,
                e.expected_docs_per_leaf,
                e.wall_ms
            );
        }
        out
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Leaf map over the corpus under the final parameters.
    pub leaf_map: LeafMap,
    pub log: TrainingLog,
}

fn apply_step(
    model: &mut Model,
    grads: &mut Model,
    states: &mut [MomentState],
    cfg: &TrainConfig,
) -> Result<()> {
    let mut grad_tensors = grads.tensors_mut();
    for ((state, (name, params)), (_, g)) in states
        .iter_mut()
        .zip(model.tensors_mut())
        .zip(grad_tensors.iter_mut())
    {
        let lr = if name.starts_with("encoder.") {
            cfg.enc_lr
        } else {
            cfg.idx_lr
        };
        optimizer_step(params, g, state, lr, cfg.weight_decay)
            .map_err(|_| Error::NonFiniteGradient(name.clone()))?;
    }
    Ok(())
}

/// Runs the full training loop. Deterministic for a fixed `cfg.seed`.
pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(data.docs.dim(), cfg, &mut rng)?;
    let mut states: Vec<MomentState> = model
        .tensors_mut()
        .iter()
        .map(|(_, t)| MomentState::new(t.len()))
        .collect();

    let nq = data.judgments.num_queries();
    let batch_size = cfg.batch_size.min(nq);
    let steps = nq.div_ceil(batch_size);
    let mut log = TrainingLog::default();
    let mut map: Option<LeafMap> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        // Hard negatives need an index, so the first snapshot is taken after
        // `refresh` epochs of in-batch training.
        let load = if epoch > 0 && epoch % cfg.refresh == 0 {
            let fresh = build_leaf_map(data.docs, &model.encoder, &model.indexer, cfg.d2l)?;
            let load = expected_docs_per_leaf(&fresh)?;
            log.refreshes.push((epoch, load));
            map = Some(fresh);
            load
        } else {
            expected_docs_per_leaf(&build_leaf_map(
                data.docs,
                &model.encoder,
                &model.indexer,
                cfg.d2l,
            )?)?
        };
        let mut sums = [0.0f64; 3];
        for _ in 0..steps {
            let batch = sample_minibatch(data.judgments, batch_size, &mut rng)?;
            let hard = match &map {
                Some(snapshot) => {
                    mine_hard_negatives(&batch, &model, snapshot, cfg.beam_train, data, &mut rng)?
                }
                None => HashMap::new(),
            };
            let mut out = batch_loss(&batch, &hard, &model, data, cfg)?;
            out.breakdown.check(epoch)?;
            sums[0] += out.breakdown.siamese;
            sums[1] += out.breakdown.indexing;
            sums[2] += out.breakdown.intra_leaf;
            apply_step(&mut model, &mut out.grads, &mut states, cfg)?;
        }
        let n = steps as f64;
        log.epochs.push(EpochLog {
            epoch,
            loss: LossBreakdown::weighted(sums[0] / n, sums[1] / n, sums[2] / n, cfg),
            expected_docs_per_leaf: load,
            wall_ms: started.elapsed().as_millis(),
        });
    }

    let leaf_map = build_leaf_map(data.docs, &model.encoder, &model.indexer, cfg.d2l)?;
    Ok(TrainOutcome {
        model,
        leaf_map,
        log,
    })
}
