//! The cooperative training loop.
//!
//! Per training pair: draw a candidate pool from the static proposal, score
//! it with the retriever, resample the working set, then update both models
//! simultaneously from pre-update scores:
//!
//! * retriever: gradient of `-(sampled log-softmax) + kl_weight * sampled
//!   KL(ranker ‖ retriever)` with the ranker detached,
//! * ranker: gradient of `-(sampled log-softmax)` over its negatives with
//!   the sampler detached.
//!
//! Updates are plain SGD with L2 weight decay folded into the step, batched
//! by averaging per-pair gradients. Every pair draws from its own generator
//! derived from (seed, epoch, pair index), so results are bit-reproducible
//! and independent of any worker layout.

use rand::seq::SliceRandom;

use crate::dataset::{Context, InteractionDataset};
use crate::estimators::{
    sampled_kl, sampled_kl_grad_retriever, sampled_log_softmax, sampled_log_softmax_grad,
    CorrectedLogits,
};
use crate::evaluation::{evaluate, EvalConfig, MetricsReport};
use crate::models::{GradMap, ScorerParams};
use crate::sampler::{static_sample, two_step_sample, SampleSet, StaticProposal};
use crate::strategies::{
    select_kl_items, select_negatives, KlItemStrategy, NegativeStrategy, StrategySpec,
};
use crate::{Error, Result};

/// All knobs of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Embedding dimension of both models.
    pub dim: usize,
    /// Ranker hidden width; 0 means the default of 2 * dim.
    pub hidden: usize,
    /// Step-one pool size (n).
    pub pool_size: usize,
    /// Resampled working-set size (L).
    pub num_samples: usize,
    pub temperature: f64,
    pub proposal: crate::sampler::ProposalKind,
    pub popularity_exponent: f64,
    /// Weight of the distillation term in the retriever objective.
    pub kl_weight: f64,
    pub negative_strategy: NegativeStrategy,
    pub kl_strategy: KlItemStrategy,
    pub strategy_spec: StrategySpec,
    /// Two-step adaptive resampling when true; direct draws from the static
    /// proposal when false (the independent-baseline sampler).
    pub adaptive_sampling: bool,
    /// Drive the retriever with its data loss. Off plus `kl_weight = 0`
    /// leaves the retriever untouched.
    pub retriever_supervision: bool,
    /// Drive the ranker with its data loss. Off leaves the ranker untouched:
    /// the distillation term never moves the teacher.
    pub ranker_supervision: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.1,
            weight_decay: 1e-6,
            dim: 16,
            hidden: 0,
            pool_size: crate::sampler::DEFAULT_POOL_SIZE,
            num_samples: crate::sampler::DEFAULT_NUM_SAMPLES,
            temperature: 1.0,
            proposal: crate::sampler::ProposalKind::Uniform,
            popularity_exponent: crate::sampler::DEFAULT_POPULARITY_EXPONENT,
            kl_weight: 1.0,
            negative_strategy: NegativeStrategy::Resample,
            kl_strategy: KlItemStrategy::Resample,
            strategy_spec: StrategySpec::default(),
            adaptive_sampling: true,
            retriever_supervision: true,
            ranker_supervision: true,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            2 * self.dim
        } else {
            self.hidden
        }
    }

    /// Strict validation for externally supplied configs.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.num_samples < 1 {
            return fail("num_samples must be >= 1".into());
        }
        if self.pool_size < self.num_samples {
            return fail(format!(
                "pool_size ({}) must be >= num_samples ({})",
                self.pool_size, self.num_samples
            ));
        }
        if self.dim < 1 {
            return fail("dim must be >= 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.kl_weight < 0.0 || !self.kl_weight.is_finite() {
            return fail(format!("kl_weight must be >= 0, got {}", self.kl_weight));
        }
        Ok(())
    }
}

/// Which models an independent (non-cooperative) run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Retriever,
    Ranker,
    Both,
}

/// Mutable state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub retriever: ScorerParams,
    pub ranker: ScorerParams,
    pub epoch: usize,
    /// Pairs consumed in the current epoch; seeds the per-pair generators.
    pub pair_cursor: usize,
    proposal: StaticProposal,
    seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, ds: &InteractionDataset) -> Result<Self> {
        let proposal = StaticProposal::for_catalog(
            cfg.proposal,
            ds.num_items(),
            ds.popularity(),
            cfg.popularity_exponent,
        )?;
        let retriever = ScorerParams::new_retriever(
            ds.num_items(),
            cfg.dim,
            crate::rng::mix(cfg.seed ^ 0x52455452), // "RETR"
        );
        let ranker = ScorerParams::new_ranker(
            ds.num_items(),
            cfg.dim,
            cfg.hidden_width(),
            crate::rng::mix(cfg.seed ^ 0x52414e4b), // "RANK"
        );
        Ok(TrainState {
            retriever,
            ranker,
            epoch: 0,
            pair_cursor: 0,
            proposal,
            seed: cfg.seed,
        })
    }

    pub fn proposal(&self) -> &StaticProposal {
        &self.proposal
    }
}

/// Loss sums over one batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub pairs: usize,
    /// Sum of the retriever's negated sampled log-softmax.
    pub retriever_loss: f64,
    /// Sum of the ranker's negated sampled log-softmax.
    pub ranker_loss: f64,
    /// Sum of the sampled KL divergence.
    pub kl: f64,
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub retriever_loss: f64,
    pub ranker_loss: f64,
    pub kl: f64,
}

/// Everything a run returns.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub retriever: ScorerParams,
    pub ranker: ScorerParams,
    /// Three reports (one per mode) per epoch.
    pub reports: Vec<MetricsReport>,
    pub losses: Vec<EpochLoss>,
}

/// One training example as the step consumes it: the context, the positive
/// item, and the user's full training sequence (what "uninteracted" is
/// measured against in the strategy variants).
#[derive(Debug, Clone, Copy)]
pub struct TrainPair<'a> {
    pub ctx: Context<'a>,
    pub positive: usize,
    pub interacted: &'a [usize],
}

struct PairDraw {
    /// Working set for the losses that carry proposal corrections.
    main: SampleSet,
    main_positive_log_q: f64,
    /// Ranker negatives plus the matching positive correction.
    ranker_set: SampleSet,
    ranker_positive_log_q: f64,
    /// Items the distillation KL is evaluated on.
    kl_set: SampleSet,
}

/// Process one batch: accumulate per-pair gradients of both objectives at
/// the current (pre-update) parameters, then apply a single averaged SGD
/// step to each trained model.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch: &[TrainPair],
) -> Result<StepStats> {
    let mut stats = StepStats::default();
    let mut retriever_grad = GradMap::new(state.retriever.param_len());
    let mut ranker_grad = GradMap::new(state.ranker.param_len());
    let retriever_active = cfg.retriever_supervision || cfg.kl_weight > 0.0;

    for (offset, pair) in batch.iter().enumerate() {
        let (ctx, positive) = (&pair.ctx, &pair.positive);
        let pair_idx = state.pair_cursor + offset;
        let mut rng = crate::rng::stream(
            state.seed,
            0x50414952 ^ crate::rng::mix(state.epoch as u64) ^ (pair_idx as u64),
        );

        let draw = draw_for_pair(state, cfg, pair, &mut rng)?;

        // Retriever: data loss plus distillation, teacher detached.
        if cfg.retriever_supervision {
            let raw = state.retriever.score_many(&draw.main.items, ctx);
            let corrected = CorrectedLogits::new(raw, draw.main.log_q.clone())?;
            let pos_corrected =
                state.retriever.score(*positive, ctx) - draw.main_positive_log_q;
            let objective = sampled_log_softmax(pos_corrected, &corrected.corrected);
            check_finite(state, cfg, ctx, *positive, "retriever log-softmax", objective)?;
            stats.retriever_loss += -objective;
            let g = sampled_log_softmax_grad(
                &state.retriever,
                ctx,
                *positive,
                draw.main_positive_log_q,
                &draw.main,
            )?;
            retriever_grad.add_scaled(&g, -1.0);
        }
        if cfg.kl_weight > 0.0 {
            let ranker_scores = state.ranker.score_many(&draw.kl_set.items, ctx);
            let retriever_scores = state.retriever.score_many(&draw.kl_set.items, ctx);
            let p = CorrectedLogits::new(ranker_scores.clone(), draw.kl_set.log_q.clone())?;
            let q = CorrectedLogits::new(retriever_scores, draw.kl_set.log_q.clone())?;
            let kl = sampled_kl(&p.corrected, &q.corrected)?;
            check_finite(state, cfg, ctx, *positive, "sampled KL", kl)?;
            stats.kl += kl;
            let g =
                sampled_kl_grad_retriever(&state.retriever, ctx, &draw.kl_set, &ranker_scores)?;
            retriever_grad.add_scaled(&g, cfg.kl_weight);
        }

        // Ranker: data loss over its negatives, sampler detached.
        if cfg.ranker_supervision {
            let raw = state.ranker.score_many(&draw.ranker_set.items, ctx);
            let corrected = CorrectedLogits::new(raw, draw.ranker_set.log_q.clone())?;
            let pos_corrected =
                state.ranker.score(*positive, ctx) - draw.ranker_positive_log_q;
            let objective = sampled_log_softmax(pos_corrected, &corrected.corrected);
            check_finite(state, cfg, ctx, *positive, "ranker log-softmax", objective)?;
            stats.ranker_loss += -objective;
            let g = sampled_log_softmax_grad(
                &state.ranker,
                ctx,
                *positive,
                draw.ranker_positive_log_q,
                &draw.ranker_set,
            )?;
            ranker_grad.add_scaled(&g, -1.0);
        }

        stats.pairs += 1;
    }

    let scale = 1.0 / batch.len().max(1) as f64;
    if retriever_active {
        apply_sgd(&mut state.retriever, &retriever_grad, cfg, scale);
    }
    if cfg.ranker_supervision {
        apply_sgd(&mut state.ranker, &ranker_grad, cfg, scale);
    }
    state.pair_cursor += batch.len();
    Ok(stats)
}

fn draw_for_pair<R: rand::Rng>(
    state: &TrainState,
    cfg: &TrainConfig,
    pair: &TrainPair,
    rng: &mut R,
) -> Result<PairDraw> {
    let ctx = &pair.ctx;
    // Draw order is fixed: main set, then negative strategy, then KL
    // strategy. Each pair owns its generator, so skipped draws in one
    // configuration never shift another pair's stream.
    let (main, main_positive_log_q) = if cfg.adaptive_sampling {
        let ts = two_step_sample(
            &state.proposal,
            &state.retriever,
            ctx,
            Some(pair.positive),
            cfg.pool_size,
            cfg.num_samples,
            cfg.temperature,
            rng,
        )?;
        let lq = ts.positive_log_q.expect("positive was supplied");
        (ts.samples, lq)
    } else {
        let set = static_sample(&state.proposal, cfg.num_samples, rng);
        let lq = state.proposal.log_prob(pair.positive);
        (set, lq)
    };

    let (ranker_set, ranker_positive_log_q) = match cfg.negative_strategy {
        NegativeStrategy::Resample => (main.clone(), main_positive_log_q),
        other => {
            let mut interacted = vec![false; state.retriever.num_items()];
            for &item in pair.interacted {
                interacted[item] = true;
            }
            let items = select_negatives(
                other,
                &cfg.strategy_spec,
                &state.retriever,
                ctx,
                &interacted,
                rng,
            );
            let log_q = vec![0.0; items.len()];
            (SampleSet { items, log_q }, 0.0)
        }
    };

    let kl_set = if cfg.kl_weight > 0.0 {
        match cfg.kl_strategy {
            KlItemStrategy::Resample => main.clone(),
            other => select_kl_items(other, &cfg.strategy_spec, &state.retriever, ctx, rng),
        }
    } else {
        SampleSet {
            items: Vec::new(),
            log_q: Vec::new(),
        }
    };

    Ok(PairDraw {
        main,
        main_positive_log_q,
        ranker_set,
        ranker_positive_log_q,
        kl_set,
    })
}

fn check_finite(
    state: &TrainState,
    cfg: &TrainConfig,
    ctx: &Context,
    positive: usize,
    what: &str,
    value: f64,
) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    let dump = format!(
        "{what} = {value}\nepoch: {}\npair cursor: {}\nuser: {}\npositive: {positive}\nhistory: {:?}\nretriever score(pos): {}\nranker score(pos): {}\nconfig: {cfg:?}",
        state.epoch,
        state.pair_cursor,
        ctx.user,
        ctx.history,
        state.retriever.score(positive, ctx),
        state.ranker.score(positive, ctx),
    );
    Err(Error::NumericAbort {
        epoch: state.epoch,
        step: state.pair_cursor,
        dump,
    })
}

/// One SGD step with L2 decay folded in: `p -= lr * (mean_grad + wd * p)`.
/// With a zero learning rate nothing moves, decay included.
fn apply_sgd(params: &mut ScorerParams, grad: &GradMap, cfg: &TrainConfig, scale: f64) {
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    if wd != 0.0 {
        let shrink = 1.0 - lr * wd;
        for v in params.values_mut() {
            *v *= shrink;
        }
    }
    let step = lr * scale;
    let values = params.values_mut();
    for (idx, g) in grad.entries() {
        values[idx] -= step * g;
    }
}

/// Run the full cooperative loop: seeded shuffles, batched steps, and one
/// evaluation per epoch.
pub fn train(
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    ds: &InteractionDataset,
) -> Result<TrainOutput> {
    let mut state = TrainState::new(cfg, ds)?;
    let mut reports = Vec::new();
    let mut losses = Vec::new();
    let mut pairs = ds.training_pair_refs();

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        state.pair_cursor = 0;
        let mut shuffle_rng = crate::rng::stream(cfg.seed, 0x53485546 ^ epoch as u64); // "SHUF"
        pairs.shuffle(&mut shuffle_rng);

        let mut epoch_stats = StepStats::default();
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch: Vec<TrainPair> = chunk
                .iter()
                .map(|&r| {
                    let (ctx, positive) = ds.pair(r);
                    let seq = ds.sequence(r.user);
                    TrainPair {
                        ctx,
                        positive,
                        // Training items only; the held-out last item is not
                        // "interacted" for negative selection.
                        interacted: &seq[..seq.len() - 1],
                    }
                })
                .collect();
            let stats = train_step(&mut state, cfg, &batch)?;
            epoch_stats.pairs += stats.pairs;
            epoch_stats.retriever_loss += stats.retriever_loss;
            epoch_stats.ranker_loss += stats.ranker_loss;
            epoch_stats.kl += stats.kl;
        }

        let n = epoch_stats.pairs.max(1) as f64;
        losses.push(EpochLoss {
            epoch,
            retriever_loss: epoch_stats.retriever_loss / n,
            ranker_loss: epoch_stats.ranker_loss / n,
            kl: epoch_stats.kl / n,
        });
        reports.extend(evaluate(ds, &state.retriever, &state.ranker, eval_cfg, epoch));
    }

    Ok(TrainOutput {
        retriever: state.retriever,
        ranker: state.ranker,
        reports,
        losses,
    })
}

/// Train one or both models in isolation: uniform static proposal, direct
/// sampling, no distillation. This is the independent baseline that the
/// cooperative run is compared against.
pub fn train_independent(
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    ds: &InteractionDataset,
    which: TrainTarget,
) -> Result<TrainOutput> {
    let mut independent = cfg.clone();
    independent.kl_weight = 0.0;
    independent.adaptive_sampling = false;
    independent.proposal = crate::sampler::ProposalKind::Uniform;
    independent.negative_strategy = NegativeStrategy::Resample;
    independent.retriever_supervision = matches!(which, TrainTarget::Retriever | TrainTarget::Both);
    independent.ranker_supervision = matches!(which, TrainTarget::Ranker | TrainTarget::Both);
    train(&independent, eval_cfg, ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SyntheticConfig};
    use crate::models::GradMap;
    use rand::Rng;

    fn tiny_dataset(seed: u64) -> InteractionDataset {
        synthesize(&SyntheticConfig {
            num_users: 50,
            num_items: 30,
            latent_dim: 4,
            seq_len: 6,
            temperature: 0.7,
            curvature: 0.0,
            seed,
            min_interactions: 2,
            max_seq_len: 20,
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 1e-5,
            dim: 4,
            pool_size: 20,
            num_samples: 5,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_eval() -> EvalConfig {
        EvalConfig {
            cutoff: 5,
            retrieve_k: 10,
            exclude_interacted: true,
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = tiny_dataset(1);
        let cfg = tiny_config();
        let a = train(&cfg, &tiny_eval(), &ds).unwrap();
        let b = train(&cfg, &tiny_eval(), &ds).unwrap();
        assert_eq!(a.retriever.to_bytes(), b.retriever.to_bytes());
        assert_eq!(a.ranker.to_bytes(), b.ranker.to_bytes());
        assert_eq!(
            serde_json::to_string(&a.reports).unwrap(),
            serde_json::to_string(&b.reports).unwrap()
        );
        let c = train(&TrainConfig { seed: 8, ..cfg }, &tiny_eval(), &ds).unwrap();
        assert_ne!(a.retriever.to_bytes(), c.retriever.to_bytes());
    }

    #[test]
    fn zero_epochs_returns_initial_parameters_and_no_reports() {
        let ds = tiny_dataset(2);
        let cfg = TrainConfig { epochs: 0, ..tiny_config() };
        let out = train(&cfg, &tiny_eval(), &ds).unwrap();
        assert!(out.reports.is_empty());
        assert!(out.losses.is_empty());
        let fresh = TrainState::new(&cfg, &ds).unwrap();
        assert_eq!(out.retriever.to_bytes(), fresh.retriever.to_bytes());
        assert_eq!(out.ranker.to_bytes(), fresh.ranker.to_bytes());
    }

    #[test]
    fn retriever_only_run_equals_the_flag_spelled_configuration() {
        let ds = tiny_dataset(3);
        let cfg = tiny_config();
        let a = train_independent(&cfg, &tiny_eval(), &ds, TrainTarget::Retriever).unwrap();
        let spelled = TrainConfig {
            kl_weight: 0.0,
            adaptive_sampling: false,
            proposal: crate::sampler::ProposalKind::Uniform,
            negative_strategy: NegativeStrategy::Resample,
            retriever_supervision: true,
            ranker_supervision: false,
            ..cfg
        };
        let b = train(&spelled, &tiny_eval(), &ds).unwrap();
        assert_eq!(a.retriever.to_bytes(), b.retriever.to_bytes());
        assert_eq!(a.ranker.to_bytes(), b.ranker.to_bytes());
    }

    #[test]
    fn frozen_counterpart_never_changes() {
        let ds = tiny_dataset(4);
        let cfg = tiny_config();
        let init = TrainState::new(&cfg, &ds).unwrap();
        let ret_only = train_independent(&cfg, &tiny_eval(), &ds, TrainTarget::Retriever).unwrap();
        assert_eq!(ret_only.ranker.to_bytes(), init.ranker.to_bytes());
        assert_ne!(ret_only.retriever.to_bytes(), init.retriever.to_bytes());
        let rank_only = train_independent(&cfg, &tiny_eval(), &ds, TrainTarget::Ranker).unwrap();
        assert_eq!(rank_only.retriever.to_bytes(), init.retriever.to_bytes());
        assert_ne!(rank_only.ranker.to_bytes(), init.ranker.to_bytes());
    }

    #[test]
    fn distillation_never_moves_the_ranker() {
        // The KL term is live (kl_weight > 0) but the ranker's own loss is
        // off: the teacher must stay bit-identical.
        let ds = tiny_dataset(5);
        let cfg = TrainConfig {
            ranker_supervision: false,
            kl_weight: 1.0,
            ..tiny_config()
        };
        let init = TrainState::new(&cfg, &ds).unwrap();
        let out = train(&cfg, &tiny_eval(), &ds).unwrap();
        assert_eq!(out.ranker.to_bytes(), init.ranker.to_bytes());
        assert_ne!(out.retriever.to_bytes(), init.retriever.to_bytes());
    }

    #[test]
    fn ranker_loss_never_moves_the_retriever() {
        let ds = tiny_dataset(6);
        let cfg = TrainConfig {
            retriever_supervision: false,
            kl_weight: 0.0,
            ..tiny_config()
        };
        let init = TrainState::new(&cfg, &ds).unwrap();
        let out = train(&cfg, &tiny_eval(), &ds).unwrap();
        assert_eq!(out.retriever.to_bytes(), init.retriever.to_bytes());
        assert_ne!(out.ranker.to_bytes(), init.ranker.to_bytes());
    }

    #[test]
    fn zero_learning_rate_changes_nothing_even_with_decay() {
        let ds = tiny_dataset(7);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.5,
            epochs: 1,
            ..tiny_config()
        };
        let init = TrainState::new(&cfg, &ds).unwrap();
        let out = train(&cfg, &tiny_eval(), &ds).unwrap();
        assert_eq!(out.retriever.to_bytes(), init.retriever.to_bytes());
        assert_eq!(out.ranker.to_bytes(), init.ranker.to_bytes());
    }

    #[test]
    fn weight_decay_shrinks_parameters_as_part_of_the_step() {
        let ds = tiny_dataset(8);
        let base = TrainConfig { weight_decay: 0.0, epochs: 1, ..tiny_config() };
        let decayed_cfg = TrainConfig { weight_decay: 0.1, ..base.clone() };
        let a = train(&base, &tiny_eval(), &ds).unwrap();
        let b = train(&decayed_cfg, &tiny_eval(), &ds).unwrap();
        assert_ne!(a.retriever.to_bytes(), b.retriever.to_bytes());
    }

    #[test]
    fn combined_retriever_objective_matches_finite_differences() {
        let ds = tiny_dataset(9);
        let cfg = tiny_config();
        let state = TrainState::new(&cfg, &ds).unwrap();
        let pairs = ds.training_pair_refs();
        let mut rng = crate::rng::stream(70, 0);

        for trial in 0..40 {
            let r = pairs[rng.random_range(0..pairs.len())];
            let (ctx, positive) = ds.pair(r);
            let mut pair_rng = crate::rng::stream(1000 + trial, 0);
            let ts = two_step_sample(
                state.proposal(),
                &state.retriever,
                &ctx,
                Some(positive),
                cfg.pool_size,
                cfg.num_samples,
                cfg.temperature,
                &mut pair_rng,
            )
            .unwrap();
            let samples = ts.samples;
            let pos_lq = ts.positive_log_q.unwrap();
            let ranker_scores = state.ranker.score_many(&samples.items, &ctx);
            let kl_weight = cfg.kl_weight;

            // Gradient assembled the way train_step does it.
            let mut grad = GradMap::new(state.retriever.param_len());
            let g_data = crate::estimators::sampled_log_softmax_grad(
                &state.retriever,
                &ctx,
                positive,
                pos_lq,
                &samples,
            )
            .unwrap();
            grad.add_scaled(&g_data, -1.0);
            let g_kl = crate::estimators::sampled_kl_grad_retriever(
                &state.retriever,
                &ctx,
                &samples,
                &ranker_scores,
            )
            .unwrap();
            grad.add_scaled(&g_kl, kl_weight);

            // Frozen-draw loss: -(log-softmax) + w * KL with constants for
            // every sampling probability and teacher score.
            let loss = |p: &crate::models::ScorerParams| {
                let raw = p.score_many(&samples.items, &ctx);
                let corrected: Vec<f64> =
                    raw.iter().zip(&samples.log_q).map(|(r, q)| r - q).collect();
                let data =
                    sampled_log_softmax(p.score(positive, &ctx) - pos_lq, &corrected);
                let teacher: Vec<f64> = ranker_scores
                    .iter()
                    .zip(&samples.log_q)
                    .map(|(r, q)| r - q)
                    .collect();
                let kl = sampled_kl(&teacher, &corrected).unwrap();
                -data + kl_weight * kl
            };

            let h = 1e-5;
            for (idx, analytic) in grad.entries() {
                let mut plus = state.retriever.clone();
                plus.values_mut()[idx] += h;
                let mut minus = state.retriever.clone();
                minus.values_mut()[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                if (analytic - numeric).abs() < 1e-8 {
                    continue;
                }
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
                assert!(
                    rel < 1e-4,
                    "trial {trial} coordinate {idx}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn one_step_is_reproducible_in_isolation() {
        let ds = tiny_dataset(10);
        let cfg = tiny_config();
        let run = || {
            let mut state = TrainState::new(&cfg, &ds).unwrap();
            let refs = ds.training_pair_refs();
            let batch: Vec<TrainPair> = refs[..8]
                .iter()
                .map(|&r| {
                    let (ctx, positive) = ds.pair(r);
                    let seq = ds.sequence(r.user);
                    TrainPair { ctx, positive, interacted: &seq[..seq.len() - 1] }
                })
                .collect();
            train_step(&mut state, &cfg, &batch).unwrap();
            (state.retriever.to_bytes(), state.ranker.to_bytes())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_parameters_abort_with_a_dump() {
        let ds = tiny_dataset(11);
        let cfg = tiny_config();
        let mut state = TrainState::new(&cfg, &ds).unwrap();
        state.retriever.values_mut()[0] = f64::NAN;
        let refs = ds.training_pair_refs();
        let batch: Vec<TrainPair> = refs[..4]
            .iter()
            .map(|&r| {
                let (ctx, positive) = ds.pair(r);
                let seq = ds.sequence(r.user);
                TrainPair { ctx, positive, interacted: &seq[..seq.len() - 1] }
            })
            .collect();
        match train_step(&mut state, &cfg, &batch) {
            Err(crate::Error::NumericAbort { dump, .. }) => {
                assert!(dump.contains("epoch"));
            }
            Err(crate::Error::NonFinite { .. }) => {}
            other => panic!("expected a numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn strategy_variants_train_end_to_end() {
        let ds = tiny_dataset(12);
        for negative_strategy in [
            NegativeStrategy::GTop,
            NegativeStrategy::GTopRand,
            NegativeStrategy::LTop,
            NegativeStrategy::LTopRand,
        ] {
            let cfg = TrainConfig {
                epochs: 1,
                negative_strategy,
                strategy_spec: StrategySpec {
                    global_top: 15,
                    local_pool: 10,
                    top_half: 3,
                    rand_half: 3,
                    selected: 6,
                    },
                ..tiny_config()
            };
            let out = train(&cfg, &tiny_eval(), &ds).unwrap();
            assert_eq!(out.reports.len(), 3);
        }
        for kl_strategy in [KlItemStrategy::Rand, KlItemStrategy::Top, KlItemStrategy::TopRand] {
            let cfg = TrainConfig {
                epochs: 1,
                kl_strategy,
                strategy_spec: StrategySpec {
                    global_top: 15,
                    local_pool: 10,
                    top_half: 3,
                    rand_half: 3,
                    selected: 6,
                },
                ..tiny_config()
            };
            let out = train(&cfg, &tiny_eval(), &ds).unwrap();
            assert_eq!(out.reports.len(), 3);
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { num_samples: 0, ..ok.clone() }.validate().is_err());
        assert!(
            TrainConfig { pool_size: 3, num_samples: 5, ..ok.clone() }
                .validate()
                .is_err()
        );
        assert!(TrainConfig { temperature: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { kl_weight: -0.1, ..ok }.validate().is_err());
    }
}
