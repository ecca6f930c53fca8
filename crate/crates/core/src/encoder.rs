//! Trainable affine head over frozen base embeddings, similarity scores, and
//! the margin triplet loss.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{dot, norm, Matrix};

/// Scoring function used for reranking and the intra-leaf gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Cosine,
    Dot,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Dot => "dot",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cos" => Ok(Metric::Cosine),
            "dot" => Ok(Metric::Dot),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// Encoder head `x ↦ Wᵀx + b`, optionally L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub normalize: bool,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    input: Vec<f64>,
    pre_norm: f64,
    pub output: Vec<f64>,
}

impl EncoderParams {
    /// Identity weight and zero bias: training starts from the base geometry.
    pub fn identity(dim: usize, normalize: bool) -> Self {
        EncoderParams {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
            normalize,
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            weight: Matrix::zeros(self.dim(), self.dim()),
            bias: vec![0.0; self.dim()],
            normalize: self.normalize,
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn encode(&self, base: &[f32]) -> Result<Vec<f64>> {
        Ok(self.forward(base)?.output)
    }

    pub fn forward(&self, base: &[f32]) -> Result<EncodeCache> {
        if base.len() != self.dim() {
            return Err(Error::dim(self.dim(), base.len()));
        }
        let input: Vec<f64> = base.iter().map(|&v| v as f64).collect();
        let mut out = self.weight.t_mul_vec(&input);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        let mut pre_norm = 1.0;
        if self.normalize {
            pre_norm = norm(&out);
            if pre_norm == 0.0 {
                return Err(Error::InvalidArgument(
                    "encoder output is the zero vector".into(),
                ));
            }
            for o in &mut out {
                *o /= pre_norm;
            }
        }
        Ok(EncodeCache {
            input,
            pre_norm,
            output: out,
        })
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/d(output)`.
    pub fn backward(&self, cache: &EncodeCache, d_out: &[f64], grads: &mut EncoderParams) {
        let d_pre: Vec<f64> = if self.normalize {
            let u = &cache.output;
            let proj = dot(u, d_out);
            u.iter()
                .zip(d_out)
                .map(|(&ui, &gi)| (gi - ui * proj) / cache.pre_norm)
                .collect()
        } else {
            d_out.to_vec()
        };
        grads.weight.add_outer(&cache.input, &d_pre);
        for (g, d) in grads.bias.iter_mut().zip(&d_pre) {
            *g += d;
        }
    }
}

/// Cosine or inner-product similarity.
pub fn similarity(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    let ab = dot(a, b);
    match metric {
        Metric::Dot => Ok(ab),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::InvalidArgument(
                    "cosine similarity of a zero vector".into(),
                ));
            }
            Ok((ab / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

/// `[q·neg − q·pos + γ]₊`.
pub fn triplet_loss(q: &[f64], pos: &[f64], neg: &[f64], gamma: f64) -> Result<f64> {
    if pos.len() != q.len() {
        return Err(Error::dim(q.len(), pos.len()));
    }
    if neg.len() != q.len() {
        return Err(Error::dim(q.len(), neg.len()));
    }
    Ok((dot(q, neg) - dot(q, pos) + gamma).max(0.0))
}

/// Hinge value and its (pre-hinge) margin. The hinge is active when the
/// margin is strictly positive; the subgradient at zero is taken as zero.
pub(crate) fn triplet_margin(q: &[f64], pos: &[f64], neg: &[f64], gamma: f64) -> f64 {
    dot(q, neg) - dot(q, pos) + gamma
}

/// Adds `scale · ∂L/∂(q, pos, neg)` for an active hinge.
#[cfg(test)]
fn triplet_backward(
    q: &[f64],
    pos: &[f64],
    neg: &[f64],
    scale: f64,
    dq: &mut [f64],
    dpos: &mut [f64],
    dneg: &mut [f64],
) {
    for k in 0..q.len() {
        dq[k] += scale * (neg[k] - pos[k]);
        dpos[k] -= scale * q[k];
        dneg[k] += scale * q[k];
    }
}
