//! Retrieval metrics, recall-vs-visited-fraction curves, and leaf load.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::hash::Hash;
use std::str::FromStr;

use crate::data::{EmbeddingMatrix, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::index::SearchIndex;
use crate::retriever::LeafMap;

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    Ok(())
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> Result<f64> {
    check_k(k)?;
    if relevant.is_empty() {
        return Err(Error::InvalidArgument("empty relevant set".into()));
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|d| relevant.contains(d))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Reciprocal rank of the first relevant item within the top `k`, else 0.
pub fn mrr_at_k<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(ranked
        .iter()
        .take(k)
        .position(|d| relevant.contains(d))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64))
}

/// Binary-gain nDCG with the `1 / log2(rank + 1)` discount.
pub fn ndcg_at_k<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> Result<f64> {
    check_k(k)?;
    if relevant.is_empty() {
        return Err(Error::InvalidArgument("empty relevant set".into()));
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    Ok(dcg / ideal)
}

/// Which retrieval metric a curve tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricName {
    Recall,
    Mrr,
    Ndcg,
}

impl MetricName {
    pub const ALL: [MetricName; 3] = [MetricName::Recall, MetricName::Mrr, MetricName::Ndcg];
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricName::Recall => "recall",
            MetricName::Mrr => "mrr",
            MetricName::Ndcg => "ndcg",
        })
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recall" => Ok(MetricName::Recall),
            "mrr" => Ok(MetricName::Mrr),
            "ndcg" => Ok(MetricName::Ndcg),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub beam: usize,
    pub mean_visited_fraction: f64,
    pub metric_name: String,
    pub metric_value: f64,
}

/// Mean metrics over the evaluated queries at one beam width.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub beam: usize,
    pub num_queries: usize,
    pub mean_visited_fraction: f64,
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

impl EvalSummary {
    pub fn get(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::Recall => self.recall,
            MetricName::Mrr => self.mrr,
            MetricName::Ndcg => self.ndcg,
        }
    }

    pub fn points(&self) -> Vec<CurvePoint> {
        MetricName::ALL
            .iter()
            .map(|&m| CurvePoint {
                beam: self.beam,
                mean_visited_fraction: self.mean_visited_fraction,
                metric_name: m.to_string(),
                metric_value: self.get(m),
            })
            .collect()
    }
}

/// Queries that have both an embedding and at least one positive, in
/// query-file order.
fn evaluable<'a>(
    queries: &'a EmbeddingMatrix,
    judgments: &'a RelevanceJudgments,
) -> Vec<(usize, HashSet<&'a str>)> {
    (0..queries.count())
        .filter_map(|i| {
            let pos = judgments.positives(queries.id(i))?;
            Some((i, pos.iter().map(String::as_str).collect()))
        })
        .collect()
}

/// Searches every judged query at `beam` and averages the three metrics.
pub fn evaluate(
    index: &SearchIndex,
    queries: &EmbeddingMatrix,
    judgments: &RelevanceJudgments,
    beam: usize,
    k: usize,
) -> Result<EvalSummary> {
    let todo = evaluable(queries, judgments);
    if todo.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let (mut visited, mut recall, mut mrr, mut ndcg) = (0.0, 0.0, 0.0, 0.0);
    for (qi, relevant) in &todo {
        let res = index.search(queries.row(*qi), beam, k)?;
        let ranked: Vec<&str> = res.hits.iter().map(|&(d, _)| index.doc_id(d)).collect();
        visited += res.visited_fraction;
        recall += recall_at_k(&ranked, relevant, k)?;
        mrr += mrr_at_k(&ranked, relevant, k)?;
        ndcg += ndcg_at_k(&ranked, relevant, k)?;
    }
    let n = todo.len() as f64;
    Ok(EvalSummary {
        beam,
        num_queries: todo.len(),
        mean_visited_fraction: visited / n,
        recall: recall / n,
        mrr: mrr / n,
        ndcg: ndcg / n,
    })
}

/// One point per beam width: mean visited fraction and mean `metric`.
pub fn curve(
    index: &SearchIndex,
    queries: &EmbeddingMatrix,
    judgments: &RelevanceJudgments,
    beams: &[usize],
    k: usize,
    metric: MetricName,
) -> Result<Vec<CurvePoint>> {
    beams
        .iter()
        .map(|&beam| {
            let s = evaluate(index, queries, judgments, beam, k)?;
            Ok(CurvePoint {
                beam,
                mean_visited_fraction: s.mean_visited_fraction,
                metric_name: metric.to_string(),
                metric_value: s.get(metric),
            })
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("beam,mean_visited_fraction,metric_name,metric_value\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.beam, p.mean_visited_fraction, p.metric_name, p.metric_value
        );
    }
    out
}

/// `Σ_i p_i c_i` with `p_i = c_i / Σ_j c_j` over leaf sizes `c_i`.
pub fn expected_docs_per_leaf(map: &LeafMap) -> Result<f64> {
    let total = map.total_assignments();
    if total == 0 {
        return Err(Error::Empty);
    }
    let t = total as f64;
    Ok(map
        .leaf_sizes()
        .iter()
        .map(|&c| (c as f64 / t) * c as f64)
        .sum())
}
