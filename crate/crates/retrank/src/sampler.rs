//! Static proposals and the two-step adaptive sampler.
//!
//! Step one draws a pool of `n` i.i.d. candidates from a static categorical
//! proposal `Y` (uniform or smoothed popularity). Step two resamples `L`
//! items from the pool with replacement, weighting each pool slot by
//! `exp(score / T - log Y(item))` under the retriever. As the pool grows the
//! resampled marginal converges to the retriever's full softmax at
//! temperature `T`, so the sampler adapts to the model while staying O(n)
//! per call regardless of catalog size.
//!
//! Retriever scores are recorded into the pool as plain constants: nothing
//! downstream differentiates through the sampler.
//!
//! Duplicates keep separate slots. The recorded per-element `log_q` is the
//! probability of drawing that *item* (its slots aggregated), normalized
//! over the pool, which is exactly the proposal correction the estimators
//! need.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;

use crate::dataset::Context;
use crate::models::ScorerParams;
use crate::numeric::log_sum_exp;
use crate::{Error, Result};

/// Default pool size for step one.
pub const DEFAULT_POOL_SIZE: usize = 100;
/// Default number of resampled items for step two.
pub const DEFAULT_NUM_SAMPLES: usize = 20;
/// Default smoothing exponent for the popularity proposal.
pub const DEFAULT_POPULARITY_EXPONENT: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Uniform,
    Popularity,
}

/// A fixed catalog-wide categorical distribution with O(1)-ish draws and
/// exact per-item log-probabilities.
#[derive(Debug, Clone)]
pub struct StaticProposal {
    kind: ProposalKind,
    log_probs: Vec<f64>,
    // None for uniform (direct index draw); Some for weighted kinds.
    weighted: Option<WeightedIndex<f64>>,
}

impl StaticProposal {
    pub fn uniform(num_items: usize) -> Self {
        assert!(num_items >= 1);
        let lp = -(num_items as f64).ln();
        StaticProposal {
            kind: ProposalKind::Uniform,
            log_probs: vec![lp; num_items],
            weighted: None,
        }
    }

    /// Popularity proposal: counts raised to `exponent`, then normalized.
    /// Items with zero count get probability zero and are never drawn.
    pub fn popularity(counts: &[usize], exponent: f64) -> Result<Self> {
        if counts.is_empty() || counts.iter().all(|&c| c == 0) {
            return Err(Error::Config(
                "popularity proposal needs at least one nonzero count".into(),
            ));
        }
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(exponent)).collect();
        let total: f64 = weights.iter().sum();
        let log_probs = weights.iter().map(|w| (w / total).ln()).collect();
        let weighted = WeightedIndex::new(weights.clone())
            .map_err(|e| Error::Config(format!("popularity proposal: {e}")))?;
        Ok(StaticProposal {
            kind: ProposalKind::Popularity,
            log_probs,
            weighted: Some(weighted),
        })
    }

    /// Build the configured proposal for a catalog.
    pub fn for_catalog(
        kind: ProposalKind,
        num_items: usize,
        popularity: &[usize],
        exponent: f64,
    ) -> Result<Self> {
        match kind {
            ProposalKind::Uniform => Ok(StaticProposal::uniform(num_items)),
            ProposalKind::Popularity => StaticProposal::popularity(popularity, exponent),
        }
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn num_items(&self) -> usize {
        self.log_probs.len()
    }

    /// Normalized log Y(item).
    pub fn log_prob(&self, item: usize) -> f64 {
        self.log_probs[item]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn draw_one<R: Rng>(&self, rng: &mut R) -> usize {
        match &self.weighted {
            None => rng.random_range(0..self.log_probs.len()),
            Some(w) => w.sample(rng),
        }
    }
}

/// The step-one pool: an i.i.d. multiset from the proposal, with per-element
/// proposal log-probabilities and retriever scores recorded as constants.
/// When a positive item is appended it occupies the final slot.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub items: Vec<usize>,
    pub static_log_y: Vec<f64>,
    pub retriever_scores: Vec<f64>,
    pub temperature: f64,
}

/// Per-distinct-item resampling log-probabilities over a pool, ascending by
/// item index. `exp(log_q)` sums to one across entries.
#[derive(Debug, Clone)]
pub struct ResampleWeights {
    pub items: Vec<usize>,
    pub log_q: Vec<f64>,
}

impl ResampleWeights {
    pub fn log_q_of(&self, item: usize) -> Option<f64> {
        self.items
            .binary_search(&item)
            .ok()
            .map(|pos| self.log_q[pos])
    }
}

/// The step-two result: `L` items drawn with replacement from the pool, each
/// carrying its pool-normalized resampling log-probability.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub items: Vec<usize>,
    pub log_q: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A complete two-step draw.
#[derive(Debug, Clone)]
pub struct TwoStepSample {
    pub pool: CandidatePool,
    pub weights: ResampleWeights,
    pub samples: SampleSet,
    /// Pool-normalized log-probability of the appended positive, when one
    /// was provided.
    pub positive_log_q: Option<f64>,
}

/// Step one alone: `n` i.i.d. draws from the proposal, duplicates kept.
pub fn draw_pool<R: Rng>(proposal: &StaticProposal, n: usize, rng: &mut R) -> Vec<usize> {
    assert!(n >= 1, "pool size must be at least 1");
    (0..n).map(|_| proposal.draw_one(rng)).collect()
}

/// Resampling distribution over a pool: softmax of
/// `score / T - log Y(item)` across pool slots, aggregated per distinct item
/// (each duplicate occurrence is its own softmax slot). Computed with
/// max-subtracted log-sum-exp.
pub fn resample_weights(pool: &CandidatePool) -> Result<ResampleWeights> {
    assert!(pool.temperature > 0.0, "temperature must be positive");
    // Group slots by item. Slots of one item share score and log Y, so the
    // aggregate is log(count) + slot logit.
    let mut order: Vec<usize> = (0..pool.items.len()).collect();
    order.sort_unstable_by_key(|&s| pool.items[s]);

    let mut items = Vec::new();
    let mut logits = Vec::new();
    let mut idx = 0;
    while idx < order.len() {
        let slot = order[idx];
        let item = pool.items[slot];
        let score = pool.retriever_scores[slot];
        if !score.is_finite() {
            return Err(Error::NonFinite {
                context: "resample_weights".into(),
                detail: format!("retriever score {score} for item {item}"),
            });
        }
        let slot_logit = score / pool.temperature - pool.static_log_y[slot];
        if !slot_logit.is_finite() {
            return Err(Error::NonFinite {
                context: "resample_weights".into(),
                detail: format!("slot logit {slot_logit} for item {item}"),
            });
        }
        let mut count = 0usize;
        while idx < order.len() && pool.items[order[idx]] == item {
            count += 1;
            idx += 1;
        }
        items.push(item);
        logits.push((count as f64).ln() + slot_logit);
    }
    let norm = log_sum_exp(&logits);
    let log_q = logits.into_iter().map(|l| l - norm).collect();
    Ok(ResampleWeights { items, log_q })
}

/// The full two-step draw. The positive item, when given, is appended to the
/// pool before resampling so that its resampling probability is always
/// defined, and it is drawable like any other slot.
#[allow(clippy::too_many_arguments)]
pub fn two_step_sample<R: Rng>(
    proposal: &StaticProposal,
    retriever: &ScorerParams,
    ctx: &Context,
    positive: Option<usize>,
    pool_size: usize,
    num_samples: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<TwoStepSample> {
    assert!(num_samples >= 1, "need at least one resampled item");
    let mut items = draw_pool(proposal, pool_size, rng);
    if let Some(p) = positive {
        items.push(p);
    }

    // One retriever evaluation per distinct item, replicated across slots.
    let mut distinct = items.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let distinct_scores = retriever.score_many(&distinct, ctx);
    let score_of = |item: usize| {
        let pos = distinct.binary_search(&item).expect("item scored above");
        distinct_scores[pos]
    };

    let static_log_y = items.iter().map(|&i| proposal.log_prob(i)).collect();
    let retriever_scores = items.iter().map(|&i| score_of(i)).collect();
    let pool = CandidatePool {
        items,
        static_log_y,
        retriever_scores,
        temperature,
    };

    let weights = resample_weights(&pool)?;
    let dist = WeightedIndex::new(weights.log_q.iter().map(|lq| lq.exp()))
        .expect("normalized weights are positive");
    let mut sample_items = Vec::with_capacity(num_samples);
    let mut sample_log_q = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let pick = dist.sample(rng);
        sample_items.push(weights.items[pick]);
        sample_log_q.push(weights.log_q[pick]);
    }

    let positive_log_q = positive.map(|p| weights.log_q_of(p).expect("positive is pooled"));
    Ok(TwoStepSample {
        pool,
        weights,
        samples: SampleSet {
            items: sample_items,
            log_q: sample_log_q,
        },
        positive_log_q,
    })
}

/// Direct draws from the static proposal itself: `L` i.i.d. items with their
/// catalog-normalized log-probabilities. This is the non-adaptive baseline
/// sampler (no pool, no retriever inference).
pub fn static_sample<R: Rng>(
    proposal: &StaticProposal,
    num_samples: usize,
    rng: &mut R,
) -> SampleSet {
    let items: Vec<usize> = (0..num_samples).map(|_| proposal.draw_one(rng)).collect();
    let log_q = items.iter().map(|&i| proposal.log_prob(i)).collect();
    SampleSet { items, log_q }
}
