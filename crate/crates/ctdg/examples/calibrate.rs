use std::time::Instant;

use ctdg::config::RunConfig;
use ctdg::graph::{chronological_split, generate_synthetic, SynthConfig};
use ctdg::model::{AblationFlags, DyGFormerHyper};
use ctdg::pipeline::{evaluate_link_prediction, train_link_prediction, EvalSplit};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let d: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let max_len: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let events: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20_000);

    let t0 = Instant::now();
    let g = generate_synthetic(
        &SynthConfig {
            num_nodes: 100,
            num_events: events,
            recurrence_bias: 0.8,
            d_e: 0,
            d_n: 0,
            seed: 0,
        },
        0,
    )
    .unwrap();
    println!("synth: {:?}", t0.elapsed());
    let split = chronological_split(&g, (0.7, 0.15, 0.15)).unwrap();

    let mut cfg = RunConfig::default();
    cfg.hyper = DyGFormerHyper {
        d_n: 0,
        d_e: 0,
        d_t: 8,
        d_c: 8,
        d,
        d_out: 32,
        heads: 2,
        layers: 2,
        max_len,
        patch_size: 1,
        dropout: 0.0,
        flags: AblationFlags::default(),
    };
    cfg.lr = 1e-4;
    cfg.batch_size = 200;
    cfg.epochs = epochs;
    cfg.patience = epochs;
    cfg.shard_size = 16;

    let t0 = Instant::now();
    let out = train_link_prediction(&g, &split, &cfg, 0).unwrap();
    println!("train {} epochs: {:?}", out.epoch_train_losses.len(), t0.elapsed());
    for l in &out.log {
        println!("  {l}");
    }
    let t0 = Instant::now();
    let tensors = out.params.tensors();
    let test = evaluate_link_prediction(
        &out.params,
        &tensors,
        &g,
        &split,
        EvalSplit::Test,
        ctdg::eval::NegativeStrategy::Random,
        &cfg,
        0,
    )
    .unwrap();
    println!(
        "test eval: {:?}  AP {:.4} AUC {:.4}",
        t0.elapsed(),
        test.report.ap,
        test.report.auc_roc
    );
}
