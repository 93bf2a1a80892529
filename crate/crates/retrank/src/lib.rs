//! Cooperative training for cascaded retrieve-then-rank recommenders.
//!
//! The crate trains a fast embedding-similarity retriever and a slower
//! nonlinear ranker as a single workflow: the ranker learns to separate the
//! positive item from hard negatives resampled out of the retriever, while
//! the retriever learns from the data and, via a sampled KL-divergence
//! distillation term, from the ranker. Everything is built on three numeric
//! primitives with exact brute-force counterparts in [`oracle`]:
//!
//! * a two-step adaptive sampler ([`sampler`]): draw a pool from a static
//!   proposal, then resample with weights `exp(score/T - log Y)`;
//! * a sampled log-softmax objective ([`estimators`]) over
//!   proposal-corrected logits;
//! * an asymptotically unbiased sampled KL-divergence estimator for
//!   distillation ([`estimators`]).
//!
//! [`trainer`] runs the cooperative loop, [`strategies`] provides the
//! alternative negative/distillation item selectors for ablations, and
//! [`evaluation`] scores checkpoints with NDCG/Recall/MRR in retriever-only,
//! ranker-only, and two-stage modes. The `retrank` binary drives experiments
//! from flat key=value config files.

pub mod config;
pub mod dataset;
pub mod estimators;
pub mod evaluation;
pub mod experiment;
pub mod models;
mod numeric;
pub mod oracle;
pub mod plot;
pub mod sampler;
pub mod strategies;
pub mod trainer;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) mod rng {
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// splitmix64 finalizer; decorrelates derived stream seeds.
    pub fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Derive an independent seeded generator from a base seed and a stream tag.
    pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(seed ^ mix(tag)))
    }
}
