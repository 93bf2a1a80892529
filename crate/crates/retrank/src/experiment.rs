//! End-to-end experiment execution: load or synthesize data, train per seed,
//! evaluate, and write artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.txt             resolved flat config (canonical key order)
//! seed_<s>/metrics.jsonl one object per (epoch, mode)
//! seed_<s>/losses.jsonl  one object per epoch
//! seed_<s>/retriever.ckpt, ranker.ckpt
//! summary.json           per-mode mean ± std over seeds (final epoch)
//! summary.txt            the same as an aligned table
//! plots/*.svg            optional line charts
//! ```
//!
//! Every number in the summary is recomputable from the per-epoch JSON
//! lines; there is no hidden aggregation.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::{kl_strategy_name, negative_strategy_name, DataSource, ExperimentSpec, RunMode};
use crate::dataset::{synthesize, InteractionDataset};
use crate::evaluation::{evaluate, EvalMode, MetricsReport};
use crate::strategies::{KlItemStrategy, NegativeStrategy};
use crate::trainer::{train, train_independent, TrainOutput, TrainTarget};
use crate::{plot, Result};

/// Mean and standard deviation of one metric over seeds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

/// Final-epoch aggregate for one prediction mode.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub mode: EvalMode,
    pub k: usize,
    pub ndcg: MeanStd,
    pub recall: MeanStd,
    pub mrr: MeanStd,
    pub num_seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub mode: String,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
}

/// Load or synthesize the dataset named by the spec.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<InteractionDataset> {
    match &spec.data {
        DataSource::File(path) => {
            crate::dataset::ingest_with(path, spec.min_interactions, spec.max_seq_len)
        }
        DataSource::Synthetic(cfg) => synthesize(cfg),
    }
}

fn run_one_seed(
    spec: &ExperimentSpec,
    ds: &InteractionDataset,
    seed: u64,
) -> Result<TrainOutput> {
    let mut cfg = spec.train.clone();
    cfg.seed = seed;
    let mut out = match spec.mode {
        RunMode::Cooperative => train(&cfg, &spec.eval, ds)?,
        RunMode::IndependentBoth => train_independent(&cfg, &spec.eval, ds, TrainTarget::Both)?,
        RunMode::IndependentRetriever => {
            train_independent(&cfg, &spec.eval, ds, TrainTarget::Retriever)?
        }
        RunMode::IndependentRanker => {
            train_independent(&cfg, &spec.eval, ds, TrainTarget::Ranker)?
        }
    };
    if out.reports.is_empty() {
        // Zero-epoch run: still report the untrained models.
        out.reports = evaluate(ds, &out.retriever, &out.ranker, &spec.eval, 0);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("serializable"));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Final-epoch reports, one per mode, in `EvalMode::ALL` order.
fn final_reports(reports: &[MetricsReport]) -> Vec<&MetricsReport> {
    let last_epoch = reports.iter().map(|r| r.epoch).max().unwrap_or(0);
    EvalMode::ALL
        .iter()
        .filter_map(|mode| {
            reports
                .iter()
                .find(|r| r.epoch == last_epoch && r.mode == *mode)
        })
        .collect()
}

fn summarize(spec: &ExperimentSpec, per_seed: &[TrainOutput]) -> ExperimentSummary {
    let mut rows = Vec::new();
    for (i, &mode) in EvalMode::ALL.iter().enumerate() {
        let ndcg: Vec<f64> = per_seed
            .iter()
            .map(|o| final_reports(&o.reports)[i].ndcg)
            .collect();
        let recall: Vec<f64> = per_seed
            .iter()
            .map(|o| final_reports(&o.reports)[i].recall)
            .collect();
        let mrr: Vec<f64> = per_seed
            .iter()
            .map(|o| final_reports(&o.reports)[i].mrr)
            .collect();
        rows.push(SummaryRow {
            mode,
            k: spec.eval.cutoff,
            ndcg: mean_std(&ndcg),
            recall: mean_std(&recall),
            mrr: mean_std(&mrr),
            num_seeds: per_seed.len(),
        });
    }
    ExperimentSummary {
        mode: spec.mode.as_str().to_string(),
        epochs: spec.train.epochs,
        seeds: spec.seeds.clone(),
        rows,
    }
}

fn render_summary_table(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "mode: {}  epochs: {}  seeds: {:?}\n",
        summary.mode, summary.epochs, summary.seeds
    ));
    out.push_str(&format!(
        "{:<16} {:>18} {:>18} {:>18}\n",
        "pipeline", "ndcg", "recall", "mrr"
    ));
    for row in &summary.rows {
        out.push_str(&format!(
            "{:<16} {:>10.5} ±{:.5} {:>10.5} ±{:.5} {:>10.5} ±{:.5}\n",
            format!("{}@{}", row.mode.as_str(), row.k),
            row.ndcg.mean,
            row.ndcg.std,
            row.recall.mean,
            row.recall.std,
            row.mrr.mean,
            row.mrr.std,
        ));
    }
    out
}

/// Run the spec across all its seeds and write artifacts.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    spec.validate()?;
    let ds = load_dataset(spec)?;
    run_experiment_on(spec, &ds)
}

/// Like [`run_experiment`] but with the dataset already in hand (sweeps and
/// ablations reuse one dataset across many runs).
pub fn run_experiment_on(
    spec: &ExperimentSpec,
    ds: &InteractionDataset,
) -> Result<ExperimentSummary> {
    fs::create_dir_all(&spec.out_dir)?;
    fs::write(spec.out_dir.join("config.txt"), spec.to_flat())?;

    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let out = run_one_seed(spec, ds, seed)?;
        let dir = spec.out_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        write_jsonl(&dir.join("metrics.jsonl"), &out.reports)?;
        write_jsonl(&dir.join("losses.jsonl"), &out.losses)?;
        out.retriever.save(&dir.join("retriever.ckpt"))?;
        out.ranker.save(&dir.join("ranker.ckpt"))?;
        per_seed.push(out);
    }

    let summary = summarize(spec, &per_seed);
    fs::write(
        spec.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    fs::write(spec.out_dir.join("summary.txt"), render_summary_table(&summary))?;

    if spec.emit_plots {
        let plot_dir = spec.out_dir.join("plots");
        fs::create_dir_all(&plot_dir)?;
        for metric in ["ndcg", "recall", "mrr"] {
            let svg = plot::metric_over_epochs(metric, &per_seed[0].reports);
            fs::write(plot_dir.join(format!("{metric}_vs_epoch.svg")), svg)?;
        }
    }
    Ok(summary)
}

/// Which strategy family an ablation run varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    /// The ranker's negative selection (five variants).
    Negatives,
    /// The distillation item selection (four variants).
    KlItems,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub strategy: String,
    pub ndcg: MeanStd,
    pub recall: MeanStd,
    pub mrr: MeanStd,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub kind: String,
    pub k: usize,
    /// Two-stage final-epoch metrics per strategy.
    pub rows: Vec<AblationRow>,
}

fn two_stage_row(summary: &ExperimentSummary) -> (MeanStd, MeanStd, MeanStd) {
    let row = summary
        .rows
        .iter()
        .find(|r| r.mode == EvalMode::TwoStage)
        .expect("two-stage row always present");
    (row.ndcg, row.recall, row.mrr)
}

/// Run every strategy variant of one family on the same dataset and emit a
/// comparison table of the final two-stage metrics.
pub fn run_ablation(spec: &ExperimentSpec, kind: AblationKind) -> Result<AblationReport> {
    spec.validate()?;
    let ds = load_dataset(spec)?;
    fs::create_dir_all(&spec.out_dir)?;

    let mut rows = Vec::new();
    match kind {
        AblationKind::Negatives => {
            for strategy in [
                NegativeStrategy::GTop,
                NegativeStrategy::GTopRand,
                NegativeStrategy::LTop,
                NegativeStrategy::LTopRand,
                NegativeStrategy::Resample,
            ] {
                let name = negative_strategy_name(strategy);
                let mut sub = spec.clone();
                sub.train.negative_strategy = strategy;
                sub.out_dir = spec.out_dir.join(format!("negatives_{name}"));
                let summary = run_experiment_on(&sub, &ds)?;
                let (ndcg, recall, mrr) = two_stage_row(&summary);
                rows.push(AblationRow {
                    strategy: name.to_string(),
                    ndcg,
                    recall,
                    mrr,
                });
            }
        }
        AblationKind::KlItems => {
            for strategy in [
                KlItemStrategy::Rand,
                KlItemStrategy::Top,
                KlItemStrategy::TopRand,
                KlItemStrategy::Resample,
            ] {
                let name = kl_strategy_name(strategy);
                let mut sub = spec.clone();
                sub.train.kl_strategy = strategy;
                sub.out_dir = spec.out_dir.join(format!("kl_{name}"));
                let summary = run_experiment_on(&sub, &ds)?;
                let (ndcg, recall, mrr) = two_stage_row(&summary);
                rows.push(AblationRow {
                    strategy: name.to_string(),
                    ndcg,
                    recall,
                    mrr,
                });
            }
        }
    }

    let report = AblationReport {
        kind: match kind {
            AblationKind::Negatives => "negatives".into(),
            AblationKind::KlItems => "kl_items".into(),
        },
        k: spec.eval.cutoff,
        rows,
    };
    let stem = format!("ablation_{}", report.kind);
    fs::write(
        spec.out_dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&report).expect("serializable") + "\n",
    )?;
    fs::write(
        spec.out_dir.join(format!("{stem}.txt")),
        render_ablation_table(&report),
    )?;
    Ok(report)
}

fn render_ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("strategy family: {}\n", report.kind));
    out.push_str(&format!(
        "{:<10} {:>10} {:>10} {:>10}\n",
        "strategy",
        format!("ndcg@{}", report.k),
        format!("recall@{}", report.k),
        format!("mrr@{}", report.k)
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<10} {:>10.5} {:>10.5} {:>10.5}\n",
            row.strategy, row.ndcg.mean, row.recall.mean, row.mrr.mean
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub knob: String,
    pub rows: Vec<SweepRow>,
}

/// One full run per pool-size value; final-epoch metrics per value.
pub fn run_pool_size_sweep(spec: &ExperimentSpec, values: &[usize]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(crate::Error::Config("sweep needs at least one value".into()));
    }
    spec.validate()?;
    let ds = load_dataset(spec)?;
    fs::create_dir_all(&spec.out_dir)?;

    let mut rows = Vec::new();
    for &value in values {
        let mut sub = spec.clone();
        sub.train.pool_size = value;
        sub.out_dir = spec.out_dir.join(format!("pool_{value}"));
        let summary = run_experiment_on(&sub, &ds)?;
        rows.push(SweepRow {
            value,
            rows: summary.rows,
        });
    }

    let report = SweepReport {
        knob: "pool_size".into(),
        rows,
    };
    fs::write(
        spec.out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&report).expect("serializable") + "\n",
    )?;
    fs::write(spec.out_dir.join("sweep.txt"), render_sweep_table(&report))?;
    if spec.emit_plots {
        let plot_dir = spec.out_dir.join("plots");
        fs::create_dir_all(&plot_dir)?;
        fs::write(
            plot_dir.join("ndcg_vs_pool_size.svg"),
            plot::metric_over_sweep(&report),
        )?;
    }
    Ok(report)
}

fn render_sweep_table(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("sweep over {}\n", report.knob));
    out.push_str(&format!(
        "{:>10} {:<16} {:>10} {:>10} {:>10}\n",
        report.knob.as_str(),
        "pipeline",
        "ndcg",
        "recall",
        "mrr"
    ));
    for sr in &report.rows {
        for row in &sr.rows {
            out.push_str(&format!(
                "{:>10} {:<16} {:>10.5} {:>10.5} {:>10.5}\n",
                sr.value,
                row.mode.as_str(),
                row.ndcg.mean,
                row.recall.mean,
                row.mrr.mean
            ));
        }
    }
    out
}
