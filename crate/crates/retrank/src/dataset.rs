//! Interaction logs: ingestion, filtering, chronological splits, and a
//! seeded synthetic generator for desk-scale runs.
//!
//! Input format is one interaction per line, `user<TAB>item<TAB>timestamp`,
//! with `#`-prefixed lines ignored. Users and items with fewer than
//! `min_interactions` occurrences are removed by iterated filtering until a
//! fixed point is reached, then dense indices are assigned in order of first
//! appearance so that re-ingesting the same file is bit-identical.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

/// Default history truncation length.
pub const DEFAULT_MAX_SEQ_LEN: usize = 20;

/// One parsed input line, before index assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// A prediction context: the user and the history prefix the models see.
/// The history is never empty and is already truncated to the most recent
/// `max_seq_len` items.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub user: usize,
    pub history: &'a [usize],
}

/// Filtered, densely indexed interaction data. Read-only after construction;
/// safe to share across parallel evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    sequences: Vec<Vec<usize>>,
    max_seq_len: usize,
    popularity: Vec<usize>,
}

impl InteractionDataset {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// Interaction count per item across all retained sequences.
    pub fn popularity(&self) -> &[usize] {
        &self.popularity
    }

    pub fn sequence(&self, user: usize) -> &[usize] {
        &self.sequences[user]
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Build a dataset directly from per-user chronological sequences.
    /// Applies the same fixed-point filter and first-appearance reindexing
    /// as file ingestion.
    pub fn from_sequences(
        sequences: Vec<Vec<usize>>,
        min_interactions: usize,
        max_seq_len: usize,
    ) -> Result<Self> {
        let filtered = filter_to_fixed_point(sequences, min_interactions)?;
        Ok(reindex(filtered, max_seq_len, min_interactions)?)
    }

    /// Training pairs: for each sequence of length n, one pair per prefix
    /// length 1..n-2 with the next item as target. The last item of a
    /// sequence never appears as a training target.
    pub fn training_pairs(&self) -> impl Iterator<Item = (Context<'_>, usize)> + '_ {
        self.sequences.iter().enumerate().flat_map(move |(user, seq)| {
            let upper = seq.len().saturating_sub(2);
            (1..=upper).map(move |prefix| {
                let start = prefix.saturating_sub(self.max_seq_len);
                (
                    Context {
                        user,
                        history: &seq[start..prefix],
                    },
                    seq[prefix],
                )
            })
        })
    }

    /// Compact handles for training pairs; useful for shuffling without
    /// borrowing contexts. `prefix` is the history length before truncation.
    pub fn training_pair_refs(&self) -> Vec<PairRef> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(user, seq)| {
                (1..=seq.len().saturating_sub(2)).map(move |prefix| PairRef { user, prefix })
            })
            .collect()
    }

    /// Materialize one training pair from its handle.
    pub fn pair(&self, r: PairRef) -> (Context<'_>, usize) {
        let seq = &self.sequences[r.user];
        let start = r.prefix.saturating_sub(self.max_seq_len);
        (
            Context {
                user: r.user,
                history: &seq[start..r.prefix],
            },
            seq[r.prefix],
        )
    }

    /// Test cases: one per user, history = first n-1 items (truncated to the
    /// most recent `max_seq_len`), target = the last item. Sequences shorter
    /// than 2 yield no case.
    pub fn test_cases(&self) -> impl Iterator<Item = (Context<'_>, usize)> + '_ {
        self.sequences
            .iter()
            .enumerate()
            .filter(|(_, seq)| seq.len() >= 2)
            .map(move |(user, seq)| {
                let end = seq.len() - 1;
                let start = end.saturating_sub(self.max_seq_len);
                (
                    Context {
                        user,
                        history: &seq[start..end],
                    },
                    seq[end],
                )
            })
    }

    /// Write the dataset back out in the ingestable text format, with dense
    /// indices as ids and positions as timestamps.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (user, seq) in self.sequences.iter().enumerate() {
            for (t, item) in seq.iter().enumerate() {
                out.push_str(&format!("u{user}\ti{item}\t{t}\n"));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Handle to one training pair: user index and prefix length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub user: usize,
    pub prefix: usize,
}

/// Parse and filter an interaction log with the default history length.
pub fn ingest(path: &Path, min_interactions: usize) -> Result<InteractionDataset> {
    ingest_with(path, min_interactions, DEFAULT_MAX_SEQ_LEN)
}

/// Parse and filter an interaction log.
pub fn ingest_with(
    path: &Path,
    min_interactions: usize,
    max_seq_len: usize,
) -> Result<InteractionDataset> {
    let raw = parse_file(path)?;
    from_raw(raw, min_interactions, max_seq_len)
}

/// Build a dataset from already-parsed interactions.
pub fn from_raw(
    raw: Vec<RawInteraction>,
    min_interactions: usize,
    max_seq_len: usize,
) -> Result<InteractionDataset> {
    // Group per user in file order, then stable-sort by timestamp so that
    // equal timestamps keep file order.
    let mut user_order: Vec<String> = Vec::new();
    let mut per_user: HashMap<String, Vec<(i64, String)>> = HashMap::new();
    for r in raw {
        per_user
            .entry(r.user_id.clone())
            .or_insert_with(|| {
                user_order.push(r.user_id.clone());
                Vec::new()
            })
            .push((r.timestamp, r.item_id));
    }

    // Provisional item ids by first appearance in (user first-appearance,
    // chronological) order; re-assigned densely after filtering.
    let mut sequences: Vec<Vec<usize>> = Vec::with_capacity(user_order.len());
    let mut item_ids: HashMap<String, usize> = HashMap::new();
    for user in &user_order {
        let mut events = per_user.remove(user).expect("grouped above");
        events.sort_by_key(|(t, _)| *t);
        let seq = events
            .into_iter()
            .map(|(_, item)| {
                let next = item_ids.len();
                *item_ids.entry(item).or_insert(next)
            })
            .collect();
        sequences.push(seq);
    }

    let filtered = filter_to_fixed_point(sequences, min_interactions)?;
    reindex(filtered, max_seq_len, min_interactions)
}

fn parse_file(path: &Path) -> Result<Vec<RawInteraction>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (user, item, ts) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), Some(t)) => (u, i, t),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "expected user<TAB>item<TAB>timestamp".into(),
                })
            }
        };
        let timestamp: i64 = ts.trim().parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad timestamp '{ts}': {e}"),
        })?;
        out.push(RawInteraction {
            user_id: user.to_string(),
            item_id: item.to_string(),
            timestamp,
        });
    }
    Ok(out)
}

/// Remove users and items with fewer than `min_interactions` occurrences,
/// repeating until no removal changes anything. Removing a user decrements
/// its items' counts before items are re-checked, and vice versa.
fn filter_to_fixed_point(
    mut sequences: Vec<Vec<usize>>,
    min_interactions: usize,
) -> Result<Vec<Vec<usize>>> {
    loop {
        let mut changed = false;

        // Users below threshold.
        let before = sequences.len();
        sequences.retain(|seq| seq.len() >= min_interactions);
        changed |= sequences.len() != before;

        // Item counts over the retained sequences.
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for seq in &sequences {
            for &item in seq {
                *counts.entry(item).or_insert(0) += 1;
            }
        }
        for seq in &mut sequences {
            let before = seq.len();
            seq.retain(|item| counts.get(item).copied().unwrap_or(0) >= min_interactions);
            changed |= seq.len() != before;
        }

        if !changed {
            return Ok(sequences);
        }
    }
}

/// Assign dense contiguous indices in order of first appearance and compute
/// popularity counts.
fn reindex(
    sequences: Vec<Vec<usize>>,
    max_seq_len: usize,
    min_interactions: usize,
) -> Result<InteractionDataset> {
    if sequences.is_empty() {
        return Err(Error::EmptyDataset { min_interactions });
    }
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut dense: Vec<Vec<usize>> = Vec::with_capacity(sequences.len());
    for seq in sequences {
        dense.push(
            seq.into_iter()
                .map(|item| {
                    let next = remap.len();
                    *remap.entry(item).or_insert(next)
                })
                .collect(),
        );
    }
    let num_items = remap.len();
    if num_items == 0 {
        return Err(Error::EmptyDataset { min_interactions });
    }
    let mut popularity = vec![0usize; num_items];
    for seq in &dense {
        for &item in seq {
            popularity[item] += 1;
        }
    }
    Ok(InteractionDataset {
        num_users: dense.len(),
        num_items,
        sequences: dense,
        max_seq_len,
        popularity,
    })
}

/// Parameters of the latent-factor synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    /// Interactions drawn per user.
    pub seq_len: usize,
    /// Sharpness of the per-user preference softmax; lower is peakier.
    pub temperature: f64,
    /// Quadratic term of the preference link, `sim + curvature * sim^2`.
    /// Zero keeps preferences monotone in the latent similarity; positive
    /// values make them non-monotone, which similarity-only scorers cannot
    /// rank perfectly while joint scorers can.
    pub curvature: f64,
    pub seed: u64,
    pub min_interactions: usize,
    pub max_seq_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 2000,
            num_items: 500,
            latent_dim: 8,
            seq_len: 12,
            temperature: 0.6,
            curvature: 0.0,
            seed: 7,
            min_interactions: 5,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

/// Draw a dataset from a latent-factor model: user and item vectors are
/// sampled once, then each user's sequence is drawn i.i.d. from the softmax
/// of scaled vector similarities. The usual fixed-point filter runs on the
/// result, so low-traffic items may be dropped.
pub fn synthesize(cfg: &SyntheticConfig) -> Result<InteractionDataset> {
    if cfg.num_users == 0 || cfg.num_items == 0 || cfg.latent_dim == 0 || cfg.seq_len == 0 {
        return Err(Error::Config(
            "synthetic generator needs users, items, latent_dim, seq_len >= 1".into(),
        ));
    }
    if !(cfg.temperature.is_finite() && cfg.temperature > 0.0) {
        return Err(Error::Config("synthetic temperature must be positive".into()));
    }
    let mut rng = crate::rng::stream(cfg.seed, 0x53594e54); // "SYNT"
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        // Box-Muller; two uniforms per normal keeps the stream simple.
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };

    let items: Vec<Vec<f64>> = (0..cfg.num_items)
        .map(|_| (0..cfg.latent_dim).map(|_| gauss(&mut rng) * scale).collect())
        .collect();

    let mut sequences = Vec::with_capacity(cfg.num_users);
    let mut probs = vec![0.0f64; cfg.num_items];
    for _ in 0..cfg.num_users {
        let user: Vec<f64> = (0..cfg.latent_dim).map(|_| gauss(&mut rng)).collect();
        let mut max = f64::NEG_INFINITY;
        for (j, v) in items.iter().enumerate() {
            let dot: f64 = user.iter().zip(v).map(|(a, b)| a * b).sum();
            probs[j] = (dot + cfg.curvature * dot * dot) / cfg.temperature;
            max = max.max(probs[j]);
        }
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        let mut seq = Vec::with_capacity(cfg.seq_len);
        for _ in 0..cfg.seq_len {
            let mut u = rng.random::<f64>() * total;
            let mut pick = cfg.num_items - 1;
            for (j, &p) in probs.iter().enumerate() {
                if u < p {
                    pick = j;
                    break;
                }
                u -= p;
            }
            seq.push(pick);
        }
        sequences.push(seq);
    }

    InteractionDataset::from_sequences(sequences, cfg.min_interactions, cfg.max_seq_len)
}
