//! Experiment runner: ingest or synthesize data, train any strategy
//! combination, evaluate checkpoints, and emit reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! abort during training.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retrank::config::{ExperimentSpec, KvConfig};
use retrank::dataset::{self, SyntheticConfig};
use retrank::evaluation::evaluate;
use retrank::experiment::{
    run_ablation, run_experiment, run_pool_size_sweep, AblationKind,
};
use retrank::models::ScorerParams;
use retrank::Error;

#[derive(Parser)]
#[command(name = "retrank", about = "cooperative retriever/ranker training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides, e.g. --set trainer.epochs=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (shorthand for --set output.dir=...).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write SVG charts next to the reports.
    #[arg(long)]
    emit_plots: bool,
}

impl SpecArgs {
    fn build(&self) -> retrank::Result<ExperimentSpec> {
        let mut kv = match &self.config {
            Some(path) => KvConfig::from_file(path)?,
            None => KvConfig::default(),
        };
        for assignment in &self.overrides {
            kv.set(assignment)?;
        }
        if let Some(out) = &self.out {
            kv.set(&format!("output.dir={}", out.display()))?;
        }
        if self.emit_plots {
            kv.set("emit_plots=true")?;
        }
        kv.into_spec()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, and report on an interaction log.
    Ingest {
        /// Input file: user<TAB>item<TAB>timestamp per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_interactions: usize,
        #[arg(long, default_value_t = 20)]
        max_seq_len: usize,
        /// Write the filtered dataset back out with dense ids.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic latent-factor interaction log.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 500)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        latent_dim: usize,
        #[arg(long, default_value_t = 12)]
        seq_len: usize,
        #[arg(long, default_value_t = 0.6)]
        temperature: f64,
        /// Quadratic term of the preference link (0 = plain similarity).
        #[arg(long, default_value_t = 0.0)]
        curvature: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        min_interactions: usize,
    },
    /// Train per the config (all seeds) and write metrics + checkpoints.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Evaluate saved checkpoints on the config's dataset.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        retriever: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
    },
    /// Run every variant of one strategy family and emit a comparison table.
    Ablate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Strategy family: "negatives" or "kl".
        #[arg(long)]
        which: String,
    },
    /// One full run per value of a knob.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Swept knob; only "pool_size" is defined.
        #[arg(long, default_value = "pool_size")]
        knob: String,
        /// Comma-separated values, e.g. 50,100,150,200,250,300.
        #[arg(long)]
        values: String,
    },
}

fn run(cli: Cli) -> retrank::Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            min_interactions,
            max_seq_len,
            output,
        } => {
            let ds = dataset::ingest_with(&input, min_interactions, max_seq_len)?;
            println!(
                "users: {}\nitems: {}\ninteractions: {}\ntraining pairs: {}",
                ds.num_users(),
                ds.num_items(),
                ds.num_interactions(),
                ds.training_pair_refs().len(),
            );
            if let Some(out) = output {
                ds.write_tsv(&out)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Synth {
            output,
            users,
            items,
            latent_dim,
            seq_len,
            temperature,
            curvature,
            seed,
            min_interactions,
        } => {
            let ds = dataset::synthesize(&SyntheticConfig {
                num_users: users,
                num_items: items,
                latent_dim,
                seq_len,
                temperature,
                curvature,
                seed,
                min_interactions,
                max_seq_len: dataset::DEFAULT_MAX_SEQ_LEN,
            })?;
            ds.write_tsv(&output)?;
            println!(
                "wrote {} ({} users, {} items, {} interactions)",
                output.display(),
                ds.num_users(),
                ds.num_items(),
                ds.num_interactions()
            );
        }
        Command::Train { spec } => {
            let spec = spec.build()?;
            let summary = run_experiment(&spec)?;
            print!("{}", std::fs::read_to_string(spec.out_dir.join("summary.txt"))?);
            let _ = summary;
        }
        Command::Evaluate {
            spec,
            retriever,
            ranker,
        } => {
            let spec = spec.build()?;
            let ds = retrank::experiment::load_dataset(&spec)?;
            let retriever = ScorerParams::load(&retriever)?;
            let ranker = ScorerParams::load(&ranker)?;
            for report in evaluate(&ds, &retriever, &ranker, &spec.eval, 0) {
                println!("{}", serde_json::to_string(&report).expect("serializable"));
            }
        }
        Command::Ablate { spec, which } => {
            let spec = spec.build()?;
            let kind = match which.as_str() {
                "negatives" => AblationKind::Negatives,
                "kl" | "kl_items" => AblationKind::KlItems,
                other => {
                    return Err(Error::Config(format!(
                        "--which must be 'negatives' or 'kl', got '{other}'"
                    )))
                }
            };
            let report = run_ablation(&spec, kind)?;
            let stem = format!("ablation_{}.txt", report.kind);
            print!("{}", std::fs::read_to_string(spec.out_dir.join(stem))?);
        }
        Command::Sweep { spec, knob, values } => {
            let spec = spec.build()?;
            if knob != "pool_size" {
                return Err(Error::Config(format!("unknown sweep knob '{knob}'")));
            }
            let parsed: Vec<usize> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad sweep value '{v}'")))
                })
                .collect::<retrank::Result<_>>()?;
            run_pool_size_sweep(&spec, &parsed)?;
            print!("{}", std::fs::read_to_string(spec.out_dir.join("sweep.txt"))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
