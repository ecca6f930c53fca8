//! The learnable B-ary tree of height H.
//!
//! Each height `h` owns a routing layer `(W_h, U_h)`. The layer sees the
//! retrieval embedding with one-hot codes of the children already chosen
//! prepended (most recent first), applies `x + ReLU(Uᵀx)`, projects with
//! `Wᵀ` and normalizes with a softmax over the `B` children.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{dot, relu_residual, softmax, softmax_backward, Matrix};

/// Upper bound on `B^H` so that leaf maps stay addressable in memory.
pub const MAX_LEAVES: usize = 1 << 24;

/// Routing parameters of the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexerParams {
    branching: usize,
    height: usize,
    dim: usize,
    /// `weights[l]` has shape `(B·l + m) × B`.
    pub weights: Vec<Matrix>,
    /// `mixers[l]` is square with side `B·l + m`.
    pub mixers: Vec<Matrix>,
}

/// Leaf index in `[0, B^H)`, the mixed-radix encoding of its root path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafId(pub usize);

impl LeafId {
    pub fn from_path(path: &[usize], branching: usize) -> Self {
        LeafId(path.iter().fold(0, |acc, &i| acc * branching + i))
    }

    pub fn to_path(self, branching: usize, height: usize) -> Vec<usize> {
        let mut path = vec![0; height];
        let mut id = self.0;
        for slot in path.iter_mut().rev() {
            *slot = id % branching;
            id /= branching;
        }
        path
    }
}

/// Compressed path embedding: per-height child distributions scaled by the
/// probability of the greedy prefix, stored highest height first.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEmbedding {
    branching: usize,
    /// `[p^H; p^{H-1}; …; p^1]`, length `B·H`.
    pub blocks: Vec<f64>,
    /// Greedy child indices `[i^1, …, i^H]`.
    pub chosen_path: Vec<usize>,
}

impl PathEmbedding {
    pub fn height(&self) -> usize {
        self.chosen_path.len()
    }

    /// Block for 1-based `height`.
    pub fn block(&self, height: usize) -> &[f64] {
        let slot = self.height() - height;
        &self.blocks[slot * self.branching..(slot + 1) * self.branching]
    }

    pub fn leaf(&self) -> LeafId {
        LeafId::from_path(&self.chosen_path, self.branching)
    }
}

#[derive(Debug, Clone)]
struct LevelTrace {
    input: Vec<f64>,
    mixed_pre: Vec<f64>,
    activated: Vec<f64>,
    probs: Vec<f64>,
    prefix_prob: f64,
}

/// Forward values kept for backpropagating through [`IndexerParams::path_embedding`].
#[derive(Debug, Clone)]
pub struct PathTrace {
    levels: Vec<LevelTrace>,
    pub embedding: PathEmbedding,
}

impl PathTrace {
    /// Sign pattern of every residual pre-activation, for kink detection.
    pub fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.levels
            .iter()
            .flat_map(|l| l.mixed_pre.iter().map(|&s| s > 0.0))
    }
}

impl IndexerParams {
    /// All-zero parameters: every routing distribution is uniform.
    pub fn zeros(dim: usize, branching: usize, height: usize) -> Result<Self> {
        check_shape(dim, branching, height)?;
        let (weights, mixers) = (0..height)
            .map(|l| {
                let n = branching * l + dim;
                (Matrix::zeros(n, branching), Matrix::zeros(n, n))
            })
            .unzip();
        Ok(IndexerParams {
            branching,
            height,
            dim,
            weights,
            mixers,
        })
    }

    /// Glorot-uniform initialization, `U[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        branching: usize,
        height: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = IndexerParams::zeros(dim, branching, height)?;
        for l in 0..height {
            let n = p.level_input_dim(l);
            let a = (6.0 / (n + branching) as f64).sqrt();
            for w in p.weights[l].as_mut_slice() {
                *w = rng.gen_range(-a..a);
            }
            let a = (6.0 / (2 * n) as f64).sqrt();
            for u in p.mixers[l].as_mut_slice() {
                *u = rng.gen_range(-a..a);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        IndexerParams::zeros(self.dim, self.branching, self.height).expect("shape already valid")
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_leaves(&self) -> usize {
        self.branching.pow(self.height as u32)
    }

    /// Input width of the 0-based `level`: `B·level + m`.
    pub fn level_input_dim(&self, level: usize) -> usize {
        self.branching * level + self.dim
    }

    /// Rebuilds parameters from stored matrices, validating every shape.
    pub fn from_parts(
        dim: usize,
        branching: usize,
        height: usize,
        weights: Vec<Matrix>,
        mixers: Vec<Matrix>,
    ) -> Result<Self> {
        let p = IndexerParams::zeros(dim, branching, height)?;
        if weights.len() != height || mixers.len() != height {
            return Err(Error::dim(height, weights.len().min(mixers.len())));
        }
        for l in 0..height {
            let n = p.level_input_dim(l);
            if weights[l].rows() != n || weights[l].cols() != branching {
                return Err(Error::dim(
                    n * branching,
                    weights[l].rows() * weights[l].cols(),
                ));
            }
            if mixers[l].rows() != n || mixers[l].cols() != n {
                return Err(Error::dim(n * n, mixers[l].rows() * mixers[l].cols()));
            }
        }
        Ok(IndexerParams {
            weights,
            mixers,
            ..p
        })
    }

    fn level_input(&self, emb: &[f64], prefix: &[usize]) -> Vec<f64> {
        let b = self.branching;
        let mut x = vec![0.0; b * prefix.len() + self.dim];
        for (slot, &child) in prefix.iter().rev().enumerate() {
            x[slot * b + child] = 1.0;
        }
        x[b * prefix.len()..].copy_from_slice(emb);
        x
    }

    fn check_emb(&self, emb: &[f64]) -> Result<()> {
        if emb.len() != self.dim {
            return Err(Error::dim(self.dim, emb.len()));
        }
        Ok(())
    }

    fn check_prefix(&self, prefix: &[usize]) -> Result<()> {
        if prefix.len() >= self.height {
            return Err(Error::InvalidArgument(format!(
                "path prefix of length {} in a tree of height {}",
                prefix.len(),
                self.height
            )));
        }
        if let Some(&bad) = prefix.iter().find(|&&c| c >= self.branching) {
            return Err(Error::InvalidArgument(format!(
                "child index {bad} out of range for branching {}",
                self.branching
            )));
        }
        Ok(())
    }

    fn level_forward(&self, emb: &[f64], prefix: &[usize]) -> LevelTrace {
        let level = prefix.len();
        let input = self.level_input(emb, prefix);
        let mixed_pre = self.mixers[level].t_mul_vec(&input);
        let activated: Vec<f64> = input
            .iter()
            .zip(&mixed_pre)
            .map(|(&x, &s)| x + s.max(0.0))
            .collect();
        let logits = self.weights[level].t_mul_vec(&activated);
        let probs = softmax(&logits).expect("branching >= 2");
        LevelTrace {
            input,
            mixed_pre,
            activated,
            probs,
            prefix_prob: 1.0,
        }
    }

    /// Distribution over the `B` children of the node reached by `prefix`
    /// (`prefix = [i^1, …, i^h]`, `h < H`), before scaling by the prefix
    /// probability.
    pub fn child_distribution(&self, emb: &[f64], prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_emb(emb)?;
        self.check_prefix(prefix)?;
        let level = prefix.len();
        let input = self.level_input(emb, prefix);
        let activated = relu_residual(&input, &self.mixers[level])?;
        softmax(&self.weights[level].t_mul_vec(&activated))
    }

    /// Greedy (beam 1) descent returning the path embedding.
    pub fn path_embedding(&self, emb: &[f64]) -> Result<PathEmbedding> {
        Ok(self.path_forward(emb)?.embedding)
    }

    /// Greedy descent keeping every intermediate needed by [`Self::path_backward`].
    pub fn path_forward(&self, emb: &[f64]) -> Result<PathTrace> {
        self.check_emb(emb)?;
        let b = self.branching;
        let mut levels = Vec::with_capacity(self.height);
        let mut path = Vec::with_capacity(self.height);
        let mut blocks = vec![0.0; b * self.height];
        let mut prefix_prob = 1.0;
        for level in 0..self.height {
            let mut trace = self.level_forward(emb, &path);
            trace.prefix_prob = prefix_prob;
            let slot = self.height - 1 - level;
            for (dst, &p) in blocks[slot * b..(slot + 1) * b]
                .iter_mut()
                .zip(&trace.probs)
            {
                *dst = p * prefix_prob;
            }
            let child = argmax(&trace.probs);
            prefix_prob *= trace.probs[child];
            path.push(child);
            levels.push(trace);
        }
        Ok(PathTrace {
            levels,
            embedding: PathEmbedding {
                branching: b,
                blocks,
                chosen_path: path,
            },
        })
    }

    /// Accumulates `∂L/∂φ` into `grads` and `∂L/∂emb` into `d_emb`, given
    /// `∂L/∂blocks` in storage order. The routing decisions are held fixed.
    pub fn path_backward(
        &self,
        trace: &PathTrace,
        d_blocks: &[f64],
        grads: &mut IndexerParams,
        d_emb: &mut [f64],
    ) {
        let b = self.branching;
        let path = &trace.embedding.chosen_path;
        // ∂L/∂(prefix probability entering the level after the current one)
        let mut d_next_prefix = 0.0;
        for level in (0..self.height).rev() {
            let t = &trace.levels[level];
            let slot = self.height - 1 - level;
            let g = &d_blocks[slot * b..(slot + 1) * b];
            let child = path[level];
            let mut d_probs: Vec<f64> = g.iter().map(|&gi| gi * t.prefix_prob).collect();
            d_probs[child] += d_next_prefix * t.prefix_prob;
            d_next_prefix = dot(g, &t.probs) + d_next_prefix * t.probs[child];

            let d_logits = softmax_backward(&t.probs, &d_probs);
            grads.weights[level].add_outer(&t.activated, &d_logits);
            let d_act = self.weights[level].mul_vec(&d_logits);
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&t.mixed_pre)
                .map(|(&d, &s)| if s > 0.0 { d } else { 0.0 })
                .collect();
            grads.mixers[level].add_outer(&t.input, &d_pre);
            let via_mixer = self.mixers[level].mul_vec(&d_pre);
            let offset = b * level;
            for (k, de) in d_emb.iter_mut().enumerate() {
                *de += d_act[offset + k] + via_mixer[offset + k];
            }
        }
    }

    /// Probability of reaching `leaf`: the product of child probabilities
    /// along its path.
    pub fn leaf_probability(&self, emb: &[f64], leaf: LeafId) -> Result<f64> {
        self.check_emb(emb)?;
        if leaf.0 >= self.num_leaves() {
            return Err(Error::InvalidArgument(format!(
                "leaf {} out of range for {} leaves",
                leaf.0,
                self.num_leaves()
            )));
        }
        let path = leaf.to_path(self.branching, self.height);
        let mut prob = 1.0;
        for level in 0..self.height {
            let dist = self.level_forward(emb, &path[..level]).probs;
            prob *= dist[path[level]];
        }
        Ok(prob)
    }

    /// Flattened tensors with stable names, for optimizers and gradient checks.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.height);
        for (l, w) in self.weights.iter_mut().enumerate() {
            out.push((format!("indexer.W{}", l + 1), w.as_mut_slice()));
        }
        for (l, u) in self.mixers.iter_mut().enumerate() {
            out.push((format!("indexer.U{}", l + 1), u.as_mut_slice()));
        }
        out
    }
}

/// Index of the largest entry, ties toward the lower index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_shape(dim: usize, branching: usize, height: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "embedding dim must be positive".into(),
        ));
    }
    if branching < 2 {
        return Err(Error::InvalidArgument(
            "branching factor must be >= 2".into(),
        ));
    }
    if height == 0 {
        return Err(Error::InvalidArgument("tree height must be >= 1".into()));
    }
    match branching.checked_pow(height as u32) {
        Some(n) if n <= MAX_LEAVES => Ok(()),
        _ => Err(Error::InvalidArgument(format!(
            "{branching}^{height} leaves exceeds the limit of {MAX_LEAVES}"
        ))),
    }
}
