//! Flat key=value experiment configuration.
//!
//! Experiments are described by a plain text file of `key = value` lines
//! (`#` comments allowed) plus `--set key=value` command-line overrides, so
//! a run's provenance is a single diff-able file. Unknown keys are errors.
//!
//! The resolved spec is written back into the output directory as
//! `config.txt` in canonical key order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::SyntheticConfig;
use crate::evaluation::EvalConfig;
use crate::sampler::ProposalKind;
use crate::strategies::{KlItemStrategy, NegativeStrategy, StrategySpec};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RETRANK_OUTPUT_DIR";

/// Where the interactions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticConfig),
}

/// Which training workflow a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// The full cooperative loop.
    Cooperative,
    /// Retriever and ranker trained independently (the Two-Stage baseline).
    IndependentBoth,
    IndependentRetriever,
    IndependentRanker,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Cooperative => "cooperative",
            RunMode::IndependentBoth => "independent_both",
            RunMode::IndependentRetriever => "independent_retriever",
            RunMode::IndependentRanker => "independent_ranker",
        }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub min_interactions: usize,
    pub max_seq_len: usize,
    pub mode: RunMode,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub emit_plots: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be non-empty".into()));
        }
        self.train.validate()
    }

    /// Canonical flat rendering, suitable for re-parsing.
    pub fn to_flat(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        match &self.data {
            DataSource::File(p) => {
                kv.insert("data.source", "file".into());
                kv.insert("data.path", p.display().to_string());
            }
            DataSource::Synthetic(s) => {
                kv.insert("data.source", "synthetic".into());
                kv.insert("synth.users", s.num_users.to_string());
                kv.insert("synth.items", s.num_items.to_string());
                kv.insert("synth.latent_dim", s.latent_dim.to_string());
                kv.insert("synth.seq_len", s.seq_len.to_string());
                kv.insert("synth.temperature", s.temperature.to_string());
                kv.insert("synth.curvature", s.curvature.to_string());
                kv.insert("synth.seed", s.seed.to_string());
            }
        }
        kv.insert("data.min_interactions", self.min_interactions.to_string());
        kv.insert("data.max_seq_len", self.max_seq_len.to_string());
        kv.insert("trainer.mode", self.mode.as_str().into());
        kv.insert("trainer.epochs", self.train.epochs.to_string());
        kv.insert("trainer.batch_size", self.train.batch_size.to_string());
        kv.insert("trainer.learning_rate", self.train.learning_rate.to_string());
        kv.insert("trainer.weight_decay", self.train.weight_decay.to_string());
        kv.insert("trainer.dim", self.train.dim.to_string());
        kv.insert("trainer.hidden", self.train.hidden.to_string());
        kv.insert("trainer.kl_weight", self.train.kl_weight.to_string());
        kv.insert(
            "trainer.ranker_negative_strategy",
            negative_strategy_name(self.train.negative_strategy).into(),
        );
        kv.insert(
            "trainer.kl_item_strategy",
            kl_strategy_name(self.train.kl_strategy).into(),
        );
        kv.insert(
            "trainer.adaptive_sampling",
            self.train.adaptive_sampling.to_string(),
        );
        kv.insert("sampler.pool_size", self.train.pool_size.to_string());
        kv.insert("sampler.num_samples", self.train.num_samples.to_string());
        kv.insert("sampler.temperature", self.train.temperature.to_string());
        kv.insert(
            "sampler.proposal",
            match self.train.proposal {
                ProposalKind::Uniform => "uniform".into(),
                ProposalKind::Popularity => "popularity".into(),
            },
        );
        kv.insert(
            "sampler.popularity_exponent",
            self.train.popularity_exponent.to_string(),
        );
        kv.insert(
            "strategy.global_top",
            self.train.strategy_spec.global_top.to_string(),
        );
        kv.insert(
            "strategy.local_pool",
            self.train.strategy_spec.local_pool.to_string(),
        );
        kv.insert(
            "strategy.top_half",
            self.train.strategy_spec.top_half.to_string(),
        );
        kv.insert(
            "strategy.rand_half",
            self.train.strategy_spec.rand_half.to_string(),
        );
        kv.insert(
            "strategy.selected",
            self.train.strategy_spec.selected.to_string(),
        );
        kv.insert("eval.cutoff", self.eval.cutoff.to_string());
        kv.insert("eval.retrieve_k", self.eval.retrieve_k.to_string());
        kv.insert(
            "eval.exclude_interacted",
            self.eval.exclude_interacted.to_string(),
        );
        kv.insert(
            "seeds",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("output.dir", self.out_dir.display().to_string());
        kv.insert("emit_plots", self.emit_plots.to_string());

        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

pub fn negative_strategy_name(s: NegativeStrategy) -> &'static str {
    match s {
        NegativeStrategy::Resample => "resample",
        NegativeStrategy::GTop => "gtop",
        NegativeStrategy::GTopRand => "gtoprand",
        NegativeStrategy::LTop => "ltop",
        NegativeStrategy::LTopRand => "ltoprand",
    }
}

pub fn kl_strategy_name(s: KlItemStrategy) -> &'static str {
    match s {
        KlItemStrategy::Resample => "resample",
        KlItemStrategy::Rand => "rand",
        KlItemStrategy::Top => "top",
        KlItemStrategy::TopRand => "toprand",
    }
}

/// Parsed but untyped key=value pairs.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut kv = KvConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{trimmed}'",
                    path.display(),
                    idx + 1
                ))
            })?;
            kv.entries
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(kv)
    }

    /// Apply a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{assignment}' is not of the form key=value"))
        })?;
        self.entries
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{raw}'"))),
        }
    }

    /// Build the experiment spec, consuming every key; leftovers are errors.
    pub fn into_spec(mut self) -> Result<ExperimentSpec> {
        let source = self.take("data.source").unwrap_or_else(|| "synthetic".into());
        let min_interactions = self.take_parsed("data.min_interactions", 5usize)?;
        let max_seq_len = self.take_parsed("data.max_seq_len", 20usize)?;

        let data = match source.as_str() {
            "file" => {
                let path = self.take("data.path").ok_or_else(|| {
                    Error::Config("data.source = file requires data.path".into())
                })?;
                DataSource::File(PathBuf::from(path))
            }
            "synthetic" => DataSource::Synthetic(SyntheticConfig {
                num_users: self.take_parsed("synth.users", 2000usize)?,
                num_items: self.take_parsed("synth.items", 500usize)?,
                latent_dim: self.take_parsed("synth.latent_dim", 8usize)?,
                seq_len: self.take_parsed("synth.seq_len", 12usize)?,
                temperature: self.take_parsed("synth.temperature", 0.6f64)?,
                curvature: self.take_parsed("synth.curvature", 0.0f64)?,
                seed: self.take_parsed("synth.seed", 7u64)?,
                min_interactions,
                max_seq_len,
            }),
            other => {
                return Err(Error::Config(format!(
                    "data.source must be 'file' or 'synthetic', got '{other}'"
                )))
            }
        };

        let mode = match self
            .take("trainer.mode")
            .unwrap_or_else(|| "cooperative".into())
            .as_str()
        {
            "cooperative" => RunMode::Cooperative,
            "independent_both" => RunMode::IndependentBoth,
            "independent_retriever" => RunMode::IndependentRetriever,
            "independent_ranker" => RunMode::IndependentRanker,
            other => {
                return Err(Error::Config(format!("unknown trainer.mode '{other}'")))
            }
        };

        let defaults = TrainConfig::default();
        let negative_strategy = match self
            .take("trainer.ranker_negative_strategy")
            .unwrap_or_else(|| "resample".into())
            .as_str()
        {
            "resample" => NegativeStrategy::Resample,
            "gtop" => NegativeStrategy::GTop,
            "gtoprand" => NegativeStrategy::GTopRand,
            "ltop" => NegativeStrategy::LTop,
            "ltoprand" => NegativeStrategy::LTopRand,
            other => {
                return Err(Error::Config(format!(
                    "unknown trainer.ranker_negative_strategy '{other}'"
                )))
            }
        };
        let kl_strategy = match self
            .take("trainer.kl_item_strategy")
            .unwrap_or_else(|| "resample".into())
            .as_str()
        {
            "resample" => KlItemStrategy::Resample,
            "rand" => KlItemStrategy::Rand,
            "top" => KlItemStrategy::Top,
            "toprand" => KlItemStrategy::TopRand,
            other => {
                return Err(Error::Config(format!(
                    "unknown trainer.kl_item_strategy '{other}'"
                )))
            }
        };
        let proposal = match self
            .take("sampler.proposal")
            .unwrap_or_else(|| "uniform".into())
            .as_str()
        {
            "uniform" => ProposalKind::Uniform,
            "popularity" => ProposalKind::Popularity,
            other => {
                return Err(Error::Config(format!("unknown sampler.proposal '{other}'")))
            }
        };

        let train = TrainConfig {
            epochs: self.take_parsed("trainer.epochs", defaults.epochs)?,
            batch_size: self.take_parsed("trainer.batch_size", defaults.batch_size)?,
            learning_rate: self.take_parsed("trainer.learning_rate", defaults.learning_rate)?,
            weight_decay: self.take_parsed("trainer.weight_decay", defaults.weight_decay)?,
            dim: self.take_parsed("trainer.dim", defaults.dim)?,
            hidden: self.take_parsed("trainer.hidden", defaults.hidden)?,
            pool_size: self.take_parsed("sampler.pool_size", defaults.pool_size)?,
            num_samples: self.take_parsed("sampler.num_samples", defaults.num_samples)?,
            temperature: self.take_parsed("sampler.temperature", defaults.temperature)?,
            proposal,
            popularity_exponent: self
                .take_parsed("sampler.popularity_exponent", defaults.popularity_exponent)?,
            kl_weight: self.take_parsed("trainer.kl_weight", defaults.kl_weight)?,
            negative_strategy,
            kl_strategy,
            strategy_spec: StrategySpec {
                global_top: self.take_parsed("strategy.global_top", 500usize)?,
                local_pool: self.take_parsed("strategy.local_pool", 100usize)?,
                top_half: self.take_parsed("strategy.top_half", 10usize)?,
                rand_half: self.take_parsed("strategy.rand_half", 10usize)?,
                selected: self.take_parsed("strategy.selected", 20usize)?,
            },
            adaptive_sampling: self.take_parsed("trainer.adaptive_sampling", true)?,
            retriever_supervision: true,
            ranker_supervision: true,
            // Per-run seeds come from the seed list; this one is replaced.
            seed: 0,
        };

        let eval = EvalConfig {
            cutoff: self.take_parsed("eval.cutoff", 20usize)?,
            retrieve_k: self.take_parsed("eval.retrieve_k", 500usize)?,
            exclude_interacted: self.take_parsed("eval.exclude_interacted", true)?,
        };

        let seeds: Vec<u64> = match self.take("seeds") {
            None => vec![1],
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad seed '{s}' in seed list")))
                })
                .collect::<Result<_>>()?,
        };

        let out_dir = match self.take("output.dir") {
            Some(d) => PathBuf::from(d),
            None => std::env::var(OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|_| PathBuf::from("runs")),
        };
        let emit_plots = self.take_parsed("emit_plots", false)?;

        if let Some((key, _)) = self.entries.iter().next() {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }

        let spec = ExperimentSpec {
            data,
            min_interactions,
            max_seq_len,
            mode,
            train,
            eval,
            seeds,
            out_dir,
            emit_plots,
        };
        spec.validate()?;
        Ok(spec)
    }
}
