//! Finite-difference validation of the analytic training gradients.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{Batch, EmbeddingMatrix, RelevanceJudgments};
use crate::error::Result;
use crate::math::{finite_diff_grad, relative_error, GradCheckReport};
use crate::trainer::{batch_loss, Model, TrainData};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-4;
/// Denominator floor for relative errors of near-zero derivatives.
pub const REL_FLOOR: f64 = 1e-6;

/// A small, fully seeded training problem.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub queries: EmbeddingMatrix,
    pub docs: EmbeddingMatrix,
    pub judgments: RelevanceJudgments,
    pub batch: Batch,
    pub hard_negs: HashMap<String, String>,
    pub model: Model,
    pub cfg: TrainConfig,
}

impl GradCheckInstance {
    /// `m = 8`, `B = 3`, `H = 2`, four queries with one positive and one
    /// hard negative each. The encoder head starts away from identity so
    /// every weight has a nontrivial derivative.
    pub fn standard(seed: u64) -> Result<Self> {
        Self::new(8, 3, 2, 4, seed)
    }

    pub fn new(
        dim: usize,
        branching: usize,
        height: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| {
            let data = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            EmbeddingMatrix::new((0..n).map(|i| format!("{prefix}{i}")).collect(), dim, data)
        };
        let queries = matrix("q", batch, &mut rng)?;
        let docs = matrix("d", 2 * batch, &mut rng)?;
        let judgments = RelevanceJudgments::from_triples(
            (0..batch).map(|i| (format!("q{i}"), format!("d{i}"), 1i8)),
        )?;
        let batch_entries = Batch {
            entries: (0..batch)
                .map(|i| (format!("q{i}"), format!("d{i}")))
                .collect(),
        };
        let hard_negs = (0..batch)
            .map(|i| (format!("q{i}"), format!("d{}", batch + i)))
            .collect();
        let cfg = TrainConfig {
            branching,
            height,
            batch_size: batch,
            // A large margin keeps most hinges active.
            gamma: 1.0,
            tau: 0.9,
            ..TrainConfig::default()
        };
        let mut model = Model::init(dim, &cfg, &mut rng)?;
        for w in model.encoder.weight.as_mut_slice() {
            *w += rng.gen_range(-0.3..0.3);
        }
        for b in &mut model.encoder.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
        Ok(GradCheckInstance {
            queries,
            docs,
            judgments,
            batch: batch_entries,
            hard_negs,
            model,
            cfg,
        })
    }

    fn data(&self) -> TrainData<'_> {
        TrainData {
            queries: &self.queries,
            docs: &self.docs,
            judgments: &self.judgments,
        }
    }
}

fn flatten(model: &mut Model) -> (Vec<f64>, Vec<String>) {
    let mut flat = Vec::new();
    let mut names = Vec::new();
    for (name, t) in model.tensors_mut() {
        for (k, &v) in t.iter().enumerate() {
            flat.push(v);
            names.push(format!("{name}[{k}]"));
        }
    }
    (flat, names)
}

fn unflatten(model: &mut Model, flat: &[f64]) {
    let mut at = 0;
    for (_, t) in model.tensors_mut() {
        t.copy_from_slice(&flat[at..at + t.len()]);
        at += t.len();
    }
}

/// Compares the analytic gradient of the total loss against central
/// differences for every parameter. Coordinates whose `±eps` probes change
/// any hinge, gate, ReLU sign, or greedy path are excluded.
pub fn run(inst: &GradCheckInstance, eps: f64) -> Result<GradCheckReport> {
    let data = inst.data();
    let base = batch_loss(&inst.batch, &inst.hard_negs, &inst.model, &data, &inst.cfg)?;
    let mut grads = base.grads.clone();
    let (analytic, _) = flatten(&mut grads);
    let mut model = inst.model.clone();
    let (params, names) = flatten(&mut model);

    let mut kinks = Vec::with_capacity(2 * params.len());
    let mut failure = None;
    let numeric = finite_diff_grad(
        |p| {
            unflatten(&mut model, p);
            match batch_loss(&inst.batch, &inst.hard_negs, &model, &data, &inst.cfg) {
                Ok(out) => {
                    kinks.push(out.signature != base.signature);
                    out.breakdown.total
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &params,
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let numeric = numeric?;

    let mut report = GradCheckReport::default();
    for (i, name) in names.into_iter().enumerate() {
        if kinks[2 * i] || kinks[2 * i + 1] {
            report.excluded.push(name);
        } else {
            report.push(name, relative_error(analytic[i], numeric[i], REL_FLOOR));
        }
    }
    Ok(report)
}

/// The standard instance at the standard step.
pub fn run_standard(seed: u64) -> Result<GradCheckReport> {
    run(&GradCheckInstance::standard(seed)?, FD_EPS)
}
