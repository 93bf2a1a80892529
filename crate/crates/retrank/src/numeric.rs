//! Shared numerically-stable scalar helpers.
//!
//! These are the implementation-side routines used by the sampler, the
//! estimators, and the models. The [`crate::oracle`] module intentionally
//! does not use them; it carries its own independent implementations so that
//! oracle checks never share a code path with the code under test.

/// `log(sum(exp(xs)))` with max subtraction. Empty input yields `-inf`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf (empty or degenerate): the sum is 0, its log -inf.
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Logistic function 1 / (1 + exp(-x)), evaluated without overflow.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_on_small_inputs() {
        let xs = [0.3, -1.2, 2.5, 0.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_offsets() {
        let xs = [1e6 + 1.0, 1e6 + 2.0];
        let expected = 1e6 + log_sum_exp(&[1.0, 2.0]);
        assert!((log_sum_exp(&xs) - expected).abs() < 1e-6);
    }

    #[test]
    fn logistic_endpoints() {
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
        assert!(logistic(800.0) <= 1.0);
        assert!(logistic(-800.0) >= 0.0);
        assert!((logistic(800.0) - 1.0).abs() < 1e-12);
        assert!(logistic(-800.0) < 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0) < 1e-12);
    }
}
