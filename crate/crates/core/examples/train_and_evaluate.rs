//! Trains the full model on synthetic data, saves a checkpoint, and reports
//! top-K metrics per activity cohort.

use lsir::config::TrainConfig;
use lsir::data::{generate_synthetic, SynthConfig};
use lsir::evaluation::{evaluate, DEFAULT_NEGATIVES};
use lsir::training::{train, PreparedData, TrainedModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_synthetic(&SynthConfig::default(), 0)?;
    let cfg = TrainConfig {
        epochs: 20,
        lr: 0.01,
        ..TrainConfig::default()
    };
    let data = PreparedData::new(&ds.graph, ds.social.clone(), &cfg)?;
    let model = train(&cfg, &data)?;
    for (k, l) in model.loss_curve.iter().enumerate().step_by(5) {
        println!("epoch {:>2}: ranking {:9.3}  mimic {:9.3}", k + 1, l.bpr, l.mimic);
    }

    let path = std::env::temp_dir().join("lsir-example-model.json");
    model.save(&path)?;
    let model = TrainedModel::load(&path)?;

    let report = evaluate(&model, &data, &[10, 20], DEFAULT_NEGATIVES, 0)?.report;
    for cohort in ["inactive", "active", "overall"] {
        println!(
            "{cohort:9} ndcg@10 {:.4}  hr@10 {:.4}  precision@10 {:.4}",
            report.get(cohort, "ndcg@10").unwrap_or(f64::NAN),
            report.get(cohort, "hr@10").unwrap_or(f64::NAN),
            report.get(cohort, "precision@10").unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
