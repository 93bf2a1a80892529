//! Alternative negative-selection and distillation-item strategies for
//! ablation runs.
//!
//! The negative strategies pick the items the ranker's sampled log-softmax
//! treats as negatives; all of them restrict to items the user has not
//! interacted with and so can never emit the current positive. The
//! top-k-based variants carry no sampling probabilities, so their outputs
//! are used with a plain log-softmax (zero proposal correction).
//!
//! The distillation-item strategies pick the items the KL term compares the
//! two models on. They intentionally do *not* exclude interacted items, and
//! only the uniform variant carries a (constant) proposal correction.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::dataset::Context;
use crate::evaluation::retrieve_topk;
use crate::models::ScorerParams;
use crate::sampler::SampleSet;

/// How the ranker's negatives are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeStrategy {
    /// Two-step adaptive resampling from the retriever (the default).
    Resample,
    /// Uniform draw out of the retriever's global top items.
    GTop,
    /// Half from the global top items, half uniform over uninteracted items.
    GTopRand,
    /// Top-scored items of a uniformly sampled local pool.
    LTop,
    /// Top half of the local pool plus a uniform half.
    LTopRand,
}

/// Which items the distillation KL is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlItemStrategy {
    /// The two-step sample set shared with the losses (the default).
    Resample,
    /// I.i.d. uniform items, with the uniform proposal correction.
    Rand,
    /// The retriever's top items, uncorrected.
    Top,
    /// Top half plus i.i.d. uniform half, uncorrected.
    TopRand,
}

/// Sizes used by the non-default strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategySpec {
    /// Global top-list size (GTop / GTopRand).
    pub global_top: usize,
    /// Uniformly drawn local pool size (LTop / LTopRand).
    pub local_pool: usize,
    /// Top half of the 50/50 split variants.
    pub top_half: usize,
    /// Random half of the 50/50 split variants.
    pub rand_half: usize,
    /// Items handed to the loss.
    pub selected: usize,
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec {
            global_top: 500,
            local_pool: 100,
            top_half: 10,
            rand_half: 10,
            selected: 20,
        }
    }
}

fn uninteracted(num_items: usize, interacted: &[bool]) -> Vec<usize> {
    (0..num_items).filter(|&i| !interacted[i]).collect()
}

/// `count` distinct uniform picks out of `pool` (all of `pool` when it is
/// not larger than `count`), in drawn order.
fn sample_distinct<R: Rng>(pool: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() <= count {
        return pool.to_vec();
    }
    sample_indices(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Top `k` of `candidates` by retriever score, descending, ties toward the
/// smaller item index.
fn top_of_candidates(
    retriever: &ScorerParams,
    ctx: &Context,
    candidates: &[usize],
    k: usize,
) -> Vec<usize> {
    let scores = retriever.score_many(candidates, ctx);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then_with(|| candidates[a].cmp(&candidates[b]))
    });
    order.truncate(k);
    order.into_iter().map(|i| candidates[i]).collect()
}

/// Select ranker negatives with one of the top-k-based strategies.
/// `interacted` is a catalog-length mask of the user's training items.
/// Panics if called with [`NegativeStrategy::Resample`]; that path is the
/// sampler's job.
pub fn select_negatives<R: Rng>(
    strategy: NegativeStrategy,
    spec: &StrategySpec,
    retriever: &ScorerParams,
    ctx: &Context,
    interacted: &[bool],
    rng: &mut R,
) -> Vec<usize> {
    let num_items = retriever.num_items();
    match strategy {
        NegativeStrategy::Resample => {
            panic!("resample negatives come from sampler::two_step_sample")
        }
        NegativeStrategy::GTop => {
            let mask = Some(interacted);
            let top = retrieve_topk(retriever, ctx, spec.global_top, mask);
            sample_distinct(&top, spec.selected, rng)
        }
        NegativeStrategy::GTopRand => {
            let mask = Some(interacted);
            let top = retrieve_topk(retriever, ctx, spec.global_top, mask);
            let mut picked = sample_distinct(&top, spec.top_half, rng);
            let pool = uninteracted(num_items, interacted);
            picked.extend(sample_distinct(&pool, spec.rand_half, rng));
            picked
        }
        NegativeStrategy::LTop => {
            let pool = uninteracted(num_items, interacted);
            let local = sample_distinct(&pool, spec.local_pool, rng);
            top_of_candidates(retriever, ctx, &local, spec.selected)
        }
        NegativeStrategy::LTopRand => {
            let pool = uninteracted(num_items, interacted);
            let local = sample_distinct(&pool, spec.local_pool, rng);
            let mut picked = top_of_candidates(retriever, ctx, &local, spec.top_half);
            picked.extend(sample_distinct(&pool, spec.rand_half, rng));
            picked
        }
    }
}

/// Select the distillation items. Returns a [`SampleSet`] whose `log_q`
/// carries the uniform correction for `Rand` and zeros for the
/// top-based variants (they provide no sampling probabilities).
/// Panics if called with [`KlItemStrategy::Resample`].
pub fn select_kl_items<R: Rng>(
    strategy: KlItemStrategy,
    spec: &StrategySpec,
    retriever: &ScorerParams,
    ctx: &Context,
    rng: &mut R,
) -> SampleSet {
    let num_items = retriever.num_items();
    let uniform_log_q = -(num_items as f64).ln();
    match strategy {
        KlItemStrategy::Resample => {
            panic!("resample distillation items come from sampler::two_step_sample")
        }
        KlItemStrategy::Rand => {
            let items: Vec<usize> = (0..spec.selected)
                .map(|_| rng.random_range(0..num_items))
                .collect();
            let log_q = vec![uniform_log_q; items.len()];
            SampleSet { items, log_q }
        }
        KlItemStrategy::Top => {
            let items = retrieve_topk(retriever, ctx, spec.selected, None);
            let log_q = vec![0.0; items.len()];
            SampleSet { items, log_q }
        }
        KlItemStrategy::TopRand => {
            let mut items = retrieve_topk(retriever, ctx, spec.top_half, None);
            items.extend((0..spec.rand_half).map(|_| rng.random_range(0..num_items)));
            let log_q = vec![0.0; items.len()];
            SampleSet { items, log_q }
        }
    }
}
