use std::time::Instant;

use retrank::dataset::{synthesize, SyntheticConfig};
use retrank::evaluation::{EvalConfig, EvalMode};
use retrank::trainer::{train, train_independent, TrainConfig, TrainTarget};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let kl_w: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let retrieve_k: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(50);
    let synth_temp: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let curvature: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let seq_len: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(12);
    let seeds: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(5);

    let t0 = Instant::now();
    let ds = synthesize(&SyntheticConfig {
        num_users: 2000,
        num_items: 500,
        latent_dim: 8,
        seq_len,
        temperature: synth_temp,
        curvature,
        seed: 7,
        min_interactions: 5,
        max_seq_len: 20,
    })
    .unwrap();
    println!(
        "dataset: {} users, {} items, {} interactions, {} pairs ({:.1?})",
        ds.num_users(),
        ds.num_items(),
        ds.num_interactions(),
        ds.training_pair_refs().len(),
        t0.elapsed()
    );

    let eval = EvalConfig { cutoff: 20, retrieve_k, exclude_interacted: true };
    let mut coop_ndcg = Vec::new();
    let mut indep_ndcg = Vec::new();
    let mut coop_all = Vec::new();
    let mut indep_all = Vec::new();

    for seed in 1..=seeds {
        let cfg = TrainConfig {
            epochs,
            learning_rate: lr,
            kl_weight: kl_w,
            dim: 16,
            seed,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let coop = train(&cfg, &eval, &ds).unwrap();
        let t_coop = t.elapsed();
        let t = Instant::now();
        let indep = train_independent(&cfg, &eval, &ds, TrainTarget::Both).unwrap();
        let t_ind = t.elapsed();

        let last = |out: &retrank::trainer::TrainOutput, mode: EvalMode| {
            out.reports
                .iter()
                .filter(|r| r.mode == mode)
                .last()
                .map(|r| r.ndcg)
                .unwrap_or(0.0)
        };
        let c2 = last(&coop, EvalMode::TwoStage);
        let i2 = last(&indep, EvalMode::TwoStage);
        coop_ndcg.push(c2);
        indep_ndcg.push(i2);
        coop_all.push((
            last(&coop, EvalMode::RetrieverOnly),
            last(&coop, EvalMode::RankerOnly),
            c2,
        ));
        indep_all.push((
            last(&indep, EvalMode::RetrieverOnly),
            last(&indep, EvalMode::RankerOnly),
            i2,
        ));
        println!(
            "seed {seed}: coop 2s={c2:.4} (ret={:.4} rank={:.4}, {t_coop:.1?}) | indep 2s={i2:.4} (ret={:.4} rank={:.4}, {t_ind:.1?})",
            coop_all.last().unwrap().0,
            coop_all.last().unwrap().1,
            indep_all.last().unwrap().0,
            indep_all.last().unwrap().1,
        );
        println!(
            "  coop losses: {:?}",
            coop.losses
                .iter()
                .map(|l| (l.ranker_loss * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "\nepochs={epochs} lr={lr} kl={kl_w} retrieve_k={retrieve_k} temp={synth_temp} seq_len={seq_len}\ncurv={curvature} mean two-stage NDCG@20: coop {:.4} vs indep {:.4} | total {:.1?}",
        mean(&coop_ndcg),
        mean(&indep_ndcg),
        t0.elapsed()
    );
}
