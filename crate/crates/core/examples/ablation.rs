//! Compares the full model with its ablations on inactive users.
//!
//! Small and quick by default; pass `--large` for the 800-user dataset.

use lsir::ablation::run_ablation;
use lsir::config::{Ablation, TrainConfig};
use lsir::data::{generate_synthetic, SynthConfig};

fn main() -> lsir::Result<()> {
    let large = std::env::args().any(|a| a == "--large");
    let synth = if large {
        SynthConfig::ablation_default()
    } else {
        SynthConfig::default()
    };
    let ds = generate_synthetic(&synth, 7)?;
    let base = TrainConfig {
        epochs: if large { 30 } else { 15 },
        lr: 0.01,
        iterations: 1,
        ..TrainConfig::default()
    };
    let report = run_ablation(&ds.graph, &ds.social, &base, &Ablation::ALL, &[0, 1, 2], &[10, 20], 1000, 0)?;
    for v in &report.variants {
        println!(
            "{:9} inactive ndcg@10 {:.4} ± {:.4}",
            v.variant.to_string(),
            v.mean["ndcg@10"],
            v.std["ndcg@10"]
        );
    }
    Ok(())
}
