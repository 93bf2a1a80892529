//! Sampled losses and divergences over proposal-corrected logits.
//!
//! Every estimator here works on *corrected* logits: a model's raw score
//! minus the log-probability under which the item was sampled. Correcting in
//! log domain keeps the self-normalized importance-sampling estimates
//! consistent and lets proposals be unnormalized. All softmax-style
//! computations use max-subtracted log-sum-exp, so adding a huge constant to
//! every raw score leaves results unchanged to well below 1e-6.
//!
//! Sign convention: functions return the objective values as defined. The
//! sampled log-softmax is to be *maximized*, the KL divergence *minimized*.
//! The trainer negates the log-softmax internally.
//!
//! Stop-gradient boundaries live here by construction: gradient routines
//! treat every `log_q` and every teacher score as a constant, and only ever
//! touch the parameters of the model they are given.

use crate::dataset::Context;
use crate::models::{GradMap, ScorerParams};
use crate::numeric::{log_sum_exp, softplus};
use crate::sampler::SampleSet;
use crate::{Error, Result};

/// Raw scores paired with their sampling log-probabilities and the resulting
/// corrected logits (`raw - log_proposal`).
#[derive(Debug, Clone)]
pub struct CorrectedLogits {
    pub raw: Vec<f64>,
    pub log_proposal: Vec<f64>,
    pub corrected: Vec<f64>,
}

impl CorrectedLogits {
    pub fn new(raw: Vec<f64>, log_proposal: Vec<f64>) -> Result<Self> {
        if raw.len() != log_proposal.len() {
            return Err(Error::LengthMismatch {
                context: "corrected logits".into(),
                left: raw.len(),
                right: log_proposal.len(),
            });
        }
        let corrected: Vec<f64> = raw
            .iter()
            .zip(&log_proposal)
            .map(|(r, q)| r - q)
            .collect();
        for (i, c) in corrected.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    context: "corrected logits".into(),
                    detail: format!(
                        "slot {i}: raw {} - log_proposal {} = {c}",
                        raw[i], log_proposal[i]
                    ),
                });
            }
        }
        Ok(CorrectedLogits {
            raw,
            log_proposal,
            corrected,
        })
    }
}

/// Sampled log-softmax of the positive over the sample multiset plus the
/// positive itself: `pos - logsumexp(samples ∪ {pos})`.
///
/// The positive contributes exactly one extra denominator slot even if it
/// was also drawn into the samples, which is what guarantees the result is
/// never positive. With no samples the value is exactly zero.
pub fn sampled_log_softmax(positive_corrected: f64, sample_corrected: &[f64]) -> f64 {
    let mut all = Vec::with_capacity(sample_corrected.len() + 1);
    all.extend_from_slice(sample_corrected);
    all.push(positive_corrected);
    let v = positive_corrected - log_sum_exp(&all);
    v.min(0.0)
}

/// Softmax weights over `samples ∪ {positive}` of the corrected logits; these
/// are the coefficients of the gradient estimate.
pub fn sampled_softmax_weights(
    positive_corrected: f64,
    sample_corrected: &[f64],
) -> (f64, Vec<f64>) {
    let mut all = Vec::with_capacity(sample_corrected.len() + 1);
    all.extend_from_slice(sample_corrected);
    all.push(positive_corrected);
    let norm = log_sum_exp(&all);
    let w_pos = (positive_corrected - norm).exp();
    let w_samples = sample_corrected.iter().map(|c| (c - norm).exp()).collect();
    (w_pos, w_samples)
}

/// Gradient of the sampled log-softmax with respect to the scorer's
/// parameters: `(1 - w_pos) * grad(pos) - sum_i w_i * grad(sample_i)`.
/// Sampling log-probabilities are constants; no gradient flows through the
/// sampler.
pub fn sampled_log_softmax_grad(
    params: &ScorerParams,
    ctx: &Context,
    positive: usize,
    positive_log_q: f64,
    samples: &SampleSet,
) -> Result<GradMap> {
    let raw = params.score_many(&samples.items, ctx);
    let corrected = CorrectedLogits::new(raw, samples.log_q.clone())?;
    let pos_corrected = params.score(positive, ctx) - positive_log_q;
    if !pos_corrected.is_finite() {
        return Err(Error::NonFinite {
            context: "sampled_log_softmax_grad".into(),
            detail: format!("positive corrected logit {pos_corrected}"),
        });
    }
    let (w_pos, w_samples) = sampled_softmax_weights(pos_corrected, &corrected.corrected);
    let mut grad = GradMap::new(params.param_len());
    params.accumulate_score_grad(positive, ctx, 1.0 - w_pos, &mut grad);
    for (i, &item) in samples.items.iter().enumerate() {
        params.accumulate_score_grad(item, ctx, -w_samples[i], &mut grad);
    }
    Ok(grad)
}

/// Sampled KL divergence between the teacher (ranker) and student
/// (retriever) softmax distributions over one shared sample multiset:
/// `sum_j P(j) * log(P(j) / Q(j))` with `P = softmax(ranker_corrected)` and
/// `Q = softmax(retriever_corrected)`. Both vectors must come from the same
/// samples under the same proposal. Always nonnegative; rounding noise down
/// to -1e-12 is clamped to zero.
pub fn sampled_kl(ranker_corrected: &[f64], retriever_corrected: &[f64]) -> Result<f64> {
    if ranker_corrected.len() != retriever_corrected.len() {
        return Err(Error::LengthMismatch {
            context: "sampled_kl".into(),
            left: ranker_corrected.len(),
            right: retriever_corrected.len(),
        });
    }
    assert!(!ranker_corrected.is_empty(), "need at least one sample");
    let norm_p = log_sum_exp(ranker_corrected);
    let norm_q = log_sum_exp(retriever_corrected);
    let mut kl = 0.0;
    for (rp, rq) in ranker_corrected.iter().zip(retriever_corrected) {
        let log_p = rp - norm_p;
        let log_q = rq - norm_q;
        kl += log_p.exp() * (log_p - log_q);
    }
    if kl < 0.0 && kl > -1e-12 {
        kl = 0.0;
    }
    Ok(kl)
}

/// Gradient of [`sampled_kl`] with respect to the *retriever* parameters
/// only: `sum_j (Q(j) - P(j)) * grad M(j, c)`. The ranker scores are
/// constants (the teacher is detached), so this can never move ranker
/// parameters.
pub fn sampled_kl_grad_retriever(
    retriever: &ScorerParams,
    ctx: &Context,
    samples: &SampleSet,
    ranker_scores: &[f64],
) -> Result<GradMap> {
    if ranker_scores.len() != samples.items.len() {
        return Err(Error::LengthMismatch {
            context: "sampled_kl_grad_retriever".into(),
            left: ranker_scores.len(),
            right: samples.items.len(),
        });
    }
    let retriever_raw = retriever.score_many(&samples.items, ctx);
    let q = CorrectedLogits::new(retriever_raw, samples.log_q.clone())?;
    let p = CorrectedLogits::new(ranker_scores.to_vec(), samples.log_q.clone())?;
    let norm_q = log_sum_exp(&q.corrected);
    let norm_p = log_sum_exp(&p.corrected);
    let mut grad = GradMap::new(retriever.param_len());
    for (j, &item) in samples.items.iter().enumerate() {
        let q_j = (q.corrected[j] - norm_q).exp();
        let p_j = (p.corrected[j] - norm_p).exp();
        retriever.accumulate_score_grad(item, ctx, q_j - p_j, &mut grad);
    }
    Ok(grad)
}

/// Entropy form of the sampled KL divergence for samples drawn exactly from
/// the retriever's softmax: `log L - H(softmax(score_diffs))`, where
/// `score_diffs` are per-sample ranker-minus-retriever raw scores. The value
/// lies in `[0, log L]`.
pub fn entropy_form_kl(score_diffs: &[f64]) -> f64 {
    assert!(!score_diffs.is_empty(), "need at least one sample");
    let n = score_diffs.len() as f64;
    let norm = log_sum_exp(score_diffs);
    // H = -sum_i p_i log p_i over the centered logits; centering first keeps
    // the sum O(1) regardless of the raw scale.
    let entropy: f64 = score_diffs
        .iter()
        .map(|&x| {
            let log_p = x - norm;
            -log_p.exp() * log_p
        })
        .sum();
    (n.ln() - entropy).clamp(0.0, n.ln())
}

/// Binary cross-entropy over one positive and a set of negatives:
/// `-log sigmoid(pos) - sum_j log(1 - sigmoid(neg_j))`, computed via
/// softplus.
pub fn bce_loss(positive_score: f64, negative_scores: &[f64]) -> f64 {
    softplus(-positive_score) + negative_scores.iter().map(|&s| softplus(s)).sum::<f64>()
}

/// Evaluate the sampled log-softmax with the sample set equal to the full
/// catalog (each item exactly once) under the exact uniform proposal.
///
/// Because the positive is counted once more on top of its catalog slot,
/// the result is `score[k] - log(Z + exp(score[k]))` rather than the exact
/// log-softmax `score[k] - log Z`: a documented finite-sample bias of
/// `log(1 + softmax(scores)[k])`, which vanishes as the catalog grows. On m
/// equal scores it returns `-log(m + 1)` against the exact `-log m`.
pub fn exactness_bridge(scores: &[f64], positive: usize) -> f64 {
    assert!(positive < scores.len());
    let m = scores.len() as f64;
    let log_uniform = -(m.ln());
    let corrected: Vec<f64> = scores.iter().map(|s| s - log_uniform).collect();
    sampled_log_softmax(corrected[positive], &corrected)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn finite_logit() -> impl Strategy<Value = f64> {
        -50.0..50.0f64
    }

    proptest! {
        /// The extra positive slot keeps the objective nonpositive.
        #[test]
        fn sampled_log_softmax_is_never_positive(
            pos in finite_logit(),
            samples in proptest::collection::vec(finite_logit(), 0..40),
        ) {
            prop_assert!(sampled_log_softmax(pos, &samples) <= 0.0);
        }

        /// Gibbs inequality holds for the sampled KL.
        #[test]
        fn sampled_kl_is_nonnegative(
            pair in proptest::collection::vec((finite_logit(), finite_logit()), 1..30),
        ) {
            let p: Vec<f64> = pair.iter().map(|(a, _)| *a).collect();
            let q: Vec<f64> = pair.iter().map(|(_, b)| *b).collect();
            prop_assert!(sampled_kl(&p, &q).unwrap() >= 0.0);
        }

        /// The entropy form stays inside [0, log L].
        #[test]
        fn entropy_form_is_bounded(
            diffs in proptest::collection::vec(finite_logit(), 1..30),
        ) {
            let v = entropy_form_kl(&diffs);
            prop_assert!(v >= 0.0);
            prop_assert!(v <= (diffs.len() as f64).ln() + 1e-12);
        }

        /// Shifting all raw inputs by a common constant moves nothing.
        #[test]
        fn estimators_are_shift_invariant(
            pos in finite_logit(),
            samples in proptest::collection::vec(finite_logit(), 1..20),
            shift in -1e6..1e6f64,
        ) {
            let shifted: Vec<f64> = samples.iter().map(|s| s + shift).collect();
            let a = sampled_log_softmax(pos, &samples);
            let b = sampled_log_softmax(pos + shift, &shifted);
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
