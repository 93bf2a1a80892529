//! Ranking metrics, brute-force top-k retrieval, and the two-stage
//! retrieve-then-rerank prediction pipeline.
//!
//! All rankings are deterministic: ties break toward the smaller item index.
//! Test cases have a single target item, so NDCG uses an ideal DCG of 1.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Context, InteractionDataset};
use crate::models::ScorerParams;
use crate::{Error, Result};

/// Which pipeline produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    RetrieverOnly,
    RankerOnly,
    TwoStage,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::RetrieverOnly, EvalMode::RankerOnly, EvalMode::TwoStage];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::RetrieverOnly => "retriever_only",
            EvalMode::RankerOnly => "ranker_only",
            EvalMode::TwoStage => "two_stage",
        }
    }
}

/// Mean metrics over all test cases for one (epoch, mode).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub epoch: usize,
    pub mode: EvalMode,
    pub k: usize,
    pub ndcg: f64,
    pub recall: f64,
    pub mrr: f64,
    pub num_cases: usize,
}

/// Evaluation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Metric cutoff, and the final list length of the two-stage pipeline.
    pub cutoff: usize,
    /// Candidate-list size the retriever hands to the ranker.
    pub retrieve_k: usize,
    /// Drop the user's training items from candidacy.
    pub exclude_interacted: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoff: 20,
            retrieve_k: 500,
            exclude_interacted: true,
        }
    }
}

/// 1-based rank of the target within a dense candidate score vector:
/// one plus the number of strictly greater scores, plus ties at smaller
/// indices.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::TargetMissing {
            target,
            len: scores.len(),
        });
    }
    let t = scores[target];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > t || (s == t && i < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Rank among non-excluded items only. The target itself is always ranked.
fn rank_with_exclusions(scores: &[f64], target: usize, exclude: Option<&[bool]>) -> usize {
    let t = scores[target];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if i == target {
            continue;
        }
        if let Some(mask) = exclude {
            if mask[i] {
                continue;
            }
        }
        if s > t || (s == t && i < target) {
            rank += 1;
        }
    }
    rank
}

/// Single-target metrics at a cutoff: `(ndcg, recall, mrr)`.
/// Inside the cutoff: `(1/log2(rank+1), 1, 1/rank)`; outside: zeros.
pub fn metrics_at_k(rank: usize, k: usize) -> (f64, f64, f64) {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= k {
        let r = rank as f64;
        (1.0 / (r + 1.0).log2(), 1.0, 1.0 / r)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Exact brute-force top-k by score over the catalog minus exclusions,
/// descending, ties toward the smaller index.
pub fn retrieve_topk(
    model: &ScorerParams,
    ctx: &Context,
    k: usize,
    exclude: Option<&[bool]>,
) -> Vec<usize> {
    let scores = model.score_all(ctx);
    top_k_of(&scores, k, exclude)
}

fn top_k_of(scores: &[f64], k: usize, exclude: Option<&[bool]>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| exclude.map_or(true, |m| !m[i]))
        .collect();
    idx.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then_with(|| a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Two-stage prediction: retrieve `retrieve_k` candidates with the
/// retriever, rerank them with the ranker, return the top `final_k`.
pub fn two_stage_predict(
    retriever: &ScorerParams,
    ranker: &ScorerParams,
    ctx: &Context,
    retrieve_k: usize,
    final_k: usize,
    exclude: Option<&[bool]>,
) -> Vec<usize> {
    assert!(retrieve_k >= final_k);
    let candidates = retrieve_topk(retriever, ctx, retrieve_k, exclude);
    let mut reranked = rerank(ranker, ctx, candidates);
    reranked.truncate(final_k);
    reranked
}

fn rerank(ranker: &ScorerParams, ctx: &Context, candidates: Vec<usize>) -> Vec<usize> {
    let scores = ranker.score_many(&candidates, ctx);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then_with(|| candidates[a].cmp(&candidates[b]))
    });
    order.iter().map(|&i| candidates[i]).collect()
}

/// Metrics of a single test case under all three modes.
#[derive(Debug, Clone, Serialize)]
pub struct CaseMetrics {
    pub user: usize,
    pub target: usize,
    /// `(ndcg, recall, mrr)` per mode, in `EvalMode::ALL` order.
    pub per_mode: [(f64, f64, f64); 3],
}

/// Per-case metrics for every test case, in case order.
///
/// Retriever-only and ranker-only rank the target against the full catalog
/// (minus exclusions); two-stage ranks it within the reranked retrieval
/// list, scoring zero when the retriever misses it entirely. Cases run in
/// parallel but are collected in order, so results do not depend on the
/// worker count.
pub fn evaluate_cases(
    ds: &InteractionDataset,
    retriever: &ScorerParams,
    ranker: &ScorerParams,
    cfg: &EvalConfig,
) -> Vec<CaseMetrics> {
    let cases: Vec<(Context, usize)> = ds.test_cases().collect();
    let num_items = ds.num_items();
    cases
        .par_iter()
        .map(|(ctx, target)| {
            let mut mask = None;
            if cfg.exclude_interacted {
                let mut m = vec![false; num_items];
                let seq = ds.sequence(ctx.user);
                for &item in &seq[..seq.len() - 1] {
                    m[item] = true;
                }
                m[*target] = false;
                mask = Some(m);
            }
            let mask_ref = mask.as_deref();

            let retriever_scores = retriever.score_all(ctx);
            let ranker_scores = ranker.score_all(ctx);
            let r_rank = rank_with_exclusions(&retriever_scores, *target, mask_ref);
            let k_rank = rank_with_exclusions(&ranker_scores, *target, mask_ref);

            let candidates = top_k_of(&retriever_scores, cfg.retrieve_k, mask_ref);
            let two_stage = if !candidates.contains(target) {
                // A missed retrieval can never be recovered by the ranker.
                (0.0, 0.0, 0.0)
            } else {
                let t = ranker_scores[*target];
                let mut rank = 1;
                for &c in &candidates {
                    if c == *target {
                        continue;
                    }
                    let s = ranker_scores[c];
                    if s > t || (s == t && c < *target) {
                        rank += 1;
                    }
                }
                metrics_at_k(rank, cfg.cutoff)
            };

            CaseMetrics {
                user: ctx.user,
                target: *target,
                per_mode: [
                    metrics_at_k(r_rank, cfg.cutoff),
                    metrics_at_k(k_rank, cfg.cutoff),
                    two_stage,
                ],
            }
        })
        .collect()
}

/// Mean [`CaseMetrics`] as one report per mode. The means are plain
/// case-order sums over [`evaluate_cases`]; nothing else is folded in.
pub fn aggregate(cases: &[CaseMetrics], cfg: &EvalConfig, epoch: usize) -> Vec<MetricsReport> {
    let mut sums = [(0.0, 0.0, 0.0); 3];
    for case in cases {
        for (i, m) in case.per_mode.iter().enumerate() {
            sums[i].0 += m.0;
            sums[i].1 += m.1;
            sums[i].2 += m.2;
        }
    }
    let n = cases.len();
    let denom = n.max(1) as f64;
    EvalMode::ALL
        .iter()
        .zip(sums)
        .map(|(&mode, s)| MetricsReport {
            epoch,
            mode,
            k: cfg.cutoff,
            ndcg: s.0 / denom,
            recall: s.1 / denom,
            mrr: s.2 / denom,
            num_cases: n,
        })
        .collect()
}

/// Run every test case through all three prediction modes and average.
pub fn evaluate(
    ds: &InteractionDataset,
    retriever: &ScorerParams,
    ranker: &ScorerParams,
    cfg: &EvalConfig,
    epoch: usize,
) -> Vec<MetricsReport> {
    aggregate(&evaluate_cases(ds, retriever, ranker, cfg), cfg, epoch)
}
