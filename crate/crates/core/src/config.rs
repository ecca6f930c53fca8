//! Training configuration and its plain-text `key = value` form.

use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::Metric;
use crate::error::{Error, Result};
use crate::indexer::MAX_LEAVES;

/// Hyperparameters for joint training. Config-file keys are the field names.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Children per node (B).
    pub branching: usize,
    /// Tree height (H).
    pub height: usize,
    /// Beam used when mining hard negatives.
    pub beam_train: usize,
    /// Triplet margin.
    pub gamma: f64,
    /// Cosine threshold gating the intra-leaf term.
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Epochs between leaf-map refreshes.
    pub refresh: usize,
    pub enc_lr: f64,
    pub idx_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Leaves per indexed document.
    pub d2l: usize,
    /// L2-normalize encoder outputs.
    pub normalize: bool,
    /// Lloyd iterations for the k-means baseline.
    pub kmeans_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            branching: 40,
            height: 1,
            beam_train: 1,
            gamma: 0.3,
            tau: 0.9,
            lambda1: 0.2,
            lambda2: 0.8,
            lambda3: 0.2,
            refresh: 5,
            enc_lr: 4e-4,
            idx_lr: 0.016,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            metric: Metric::Cosine,
            d2l: 1,
            normalize: true,
            kmeans_iters: 25,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn num_leaves(&self) -> usize {
        self.branching.saturating_pow(self.height as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.branching < 2 {
            return fail(format!("branching must be >= 2, got {}", self.branching));
        }
        if self.height == 0 {
            return fail("height must be >= 1".into());
        }
        if self
            .branching
            .checked_pow(self.height as u32)
            .is_none_or(|n| n > MAX_LEAVES)
        {
            return fail(format!(
                "{}^{} leaves is too many",
                self.branching, self.height
            ));
        }
        if self.refresh == 0 {
            return fail("refresh must be >= 1".into());
        }
        if self.beam_train == 0 || self.batch_size == 0 {
            return fail("beam_train and batch_size must be >= 1".into());
        }
        if self.d2l == 0 || self.d2l > self.num_leaves() {
            return fail(format!("d2l must be in [1, {}]", self.num_leaves()));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("gamma", self.gamma),
            ("enc_lr", self.enc_lr),
            ("idx_lr", self.idx_lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.lambda1 + self.lambda2 + self.lambda3 == 0.0 {
            return fail("lambda1..3 must not all be zero".into());
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return fail(format!("tau must be in [-1, 1], got {}", self.tau));
        }
        if self.kmeans_iters == 0 {
            return fail("kmeans_iters must be >= 1".into());
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "branching" => self.branching = parse_num(key, value)?,
            "height" => self.height = parse_num(key, value)?,
            "beam_train" => self.beam_train = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "lambda1" => self.lambda1 = parse_num(key, value)?,
            "lambda2" => self.lambda2 = parse_num(key, value)?,
            "lambda3" => self.lambda3 = parse_num(key, value)?,
            "refresh" => self.refresh = parse_num(key, value)?,
            "enc_lr" => self.enc_lr = parse_num(key, value)?,
            "idx_lr" => self.idx_lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "metric" => self.metric = value.parse()?,
            "d2l" => self.d2l = parse_num(key, value)?,
            "normalize" => self.normalize = parse_num(key, value)?,
            "kmeans_iters" => self.kmeans_iters = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        // `{:?}` prints the shortest representation that round-trips.
        vec![
            ("branching", self.branching.to_string()),
            ("height", self.height.to_string()),
            ("beam_train", self.beam_train.to_string()),
            ("gamma", format!("{:?}", self.gamma)),
            ("tau", format!("{:?}", self.tau)),
            ("lambda1", format!("{:?}", self.lambda1)),
            ("lambda2", format!("{:?}", self.lambda2)),
            ("lambda3", format!("{:?}", self.lambda3)),
            ("refresh", self.refresh.to_string()),
            ("enc_lr", format!("{:?}", self.enc_lr)),
            ("idx_lr", format!("{:?}", self.idx_lr)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("metric", self.metric.to_string()),
            ("d2l", self.d2l.to_string()),
            ("normalize", self.normalize.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.gamma, c.tau, c.refresh), (0.3, 0.9, 5));
        assert_eq!((c.lambda1, c.lambda2, c.lambda3), (0.2, 0.8, 0.2));
        assert_eq!((c.enc_lr, c.idx_lr, c.batch_size), (4e-4, 0.016, 64));
        assert_eq!(c.num_leaves(), 40);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig {
            branching: 7,
            enc_lr: 1.234e-5,
            metric: Metric::Dot,
            normalize: false,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = TrainConfig::parse("# hi\nbranching = 4 # four\n\nheight=2\n").unwrap();
        assert_eq!((c.branching, c.height), (4, 2));
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("branching").is_err());
        assert!(TrainConfig::parse("refresh = 0").is_err());
        assert!(TrainConfig::parse("tau = 1.5").is_err());
        assert!(TrainConfig::parse("lambda1 = 0\nlambda2 = 0\nlambda3 = 0").is_err());
        assert!(TrainConfig::parse("branching = x").is_err());
    }
}
