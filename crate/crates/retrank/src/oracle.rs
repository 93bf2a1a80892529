//! Exact brute-force references for the samplers and estimators.
//!
//! Everything here recomputes results from first principles, in O(catalog)
//! per call, for use by tests and acceptance runs only. The implementations
//! are deliberately self-contained: they do not call into `numeric`,
//! `sampler`, or `estimators`, so an oracle check can never pass because the
//! code under test and the reference share a bug. Keep it that way when
//! editing (see the development notes in the README).
//!
//! Calls are asserted to catalogs of at most 10_000 items; the oracles are
//! not meant for production-sized use.

/// Largest catalog the oracles accept.
pub const MAX_ORACLE_ITEMS: usize = 10_000;

fn check_size(n: usize) {
    assert!(n >= 1, "oracle needs at least one item");
    assert!(
        n <= MAX_ORACLE_ITEMS,
        "oracle restricted to catalogs of at most {MAX_ORACLE_ITEMS} items"
    );
}

/// Full softmax of `scores / temperature`, stabilized by subtracting the
/// maximum before exponentiation.
pub fn exact_softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    check_size(scores.len());
    assert!(temperature > 0.0);
    let mut max = f64::NEG_INFINITY;
    for &s in scores {
        let t = s / temperature;
        if t > max {
            max = t;
        }
    }
    let mut exps: Vec<f64> = scores.iter().map(|&s| (s / temperature - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= total;
    }
    exps
}

/// Full-catalog KL divergence between the softmax distributions of two score
/// vectors: `sum_i softmax(p)[i] * log(softmax(p)[i] / softmax(q)[i])`.
pub fn exact_kl(p_scores: &[f64], q_scores: &[f64]) -> f64 {
    assert_eq!(p_scores.len(), q_scores.len(), "score vectors must align");
    let p = exact_softmax(p_scores, 1.0);
    let q = exact_softmax(q_scores, 1.0);
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        if *pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
    }
    kl
}

/// Full-catalog log-softmax of the positive item.
pub fn exact_log_softmax(scores: &[f64], positive: usize) -> f64 {
    check_size(scores.len());
    assert!(positive < scores.len());
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    (scores[positive] - max) - total.ln()
}

/// Normalized empirical frequencies of a sample stream over a catalog.
pub fn empirical_marginal(samples: &[usize], num_items: usize) -> Vec<f64> {
    check_size(num_items);
    assert!(!samples.is_empty(), "empty sample stream");
    let mut counts = vec![0usize; num_items];
    for &s in samples {
        counts[s] += 1;
    }
    let total = samples.len() as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

/// Total-variation distance between two distributions over the same support:
/// half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share support");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
