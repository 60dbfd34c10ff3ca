//! Repeated training of model variants and aggregation of inactive-user
//! metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, TrainConfig};
use crate::data::{InteractionGraph, SocialGraph};
use crate::error::Result;
use crate::evaluation::{evaluate, MetricsReport};
use crate::training::{train, PreparedData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    /// Full report, absent when the run failed.
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Ablation,
    pub runs: Vec<RunOutcome>,
    /// Mean and sample standard deviation over successful runs of the
    /// inactive cohort's metrics.
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub k_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn variant(&self, v: Ablation) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

/// Trains and evaluates `base` once per variant and seed. Run failures are
/// recorded and skipped. The evaluation candidates use `eval_seed` so every
/// run is scored on the same candidate sets for a given split seed.
pub fn run_ablation(
    graph: &InteractionGraph,
    social: &SocialGraph,
    base: &TrainConfig,
    variants: &[Ablation],
    seeds: &[u64],
    ks: &[usize],
    negatives: usize,
    eval_seed: u64,
) -> Result<AblationReport> {
    base.validate()?;
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ablation: variant,
                ..base.clone()
            };
            let outcome = run_one(graph, social, &cfg, ks, negatives, eval_seed);
            match outcome {
                Ok(report) => runs.push(RunOutcome {
                    seed,
                    report: Some(report),
                    error: None,
                }),
                Err(e) => {
                    log::warn!("{variant} with seed {seed} failed: {e}");
                    runs.push(RunOutcome {
                        seed,
                        report: None,
                        error: Some(e),
                    });
                }
            }
        }
        out.push(summarise(variant, runs));
    }
    Ok(AblationReport {
        k_list: ks.to_vec(),
        seeds: seeds.to_vec(),
        variants: out,
    })
}

fn run_one(
    graph: &InteractionGraph,
    social: &SocialGraph,
    cfg: &TrainConfig,
    ks: &[usize],
    negatives: usize,
    eval_seed: u64,
) -> std::result::Result<MetricsReport, String> {
    let data = PreparedData::new(graph, social.clone(), cfg).map_err(|e| e.to_string())?;
    let model = train(cfg, &data).map_err(|a| a.to_string())?;
    log::info!(
        "{} seed {}: final loss {:.4}",
        cfg.ablation,
        cfg.seed,
        model.loss_curve.last().map_or(f64::NAN, |l| l.total)
    );
    evaluate(&model, &data, ks, negatives, eval_seed)
        .map(|e| e.report)
        .map_err(|e| e.to_string())
}

fn summarise(variant: Ablation, runs: Vec<RunOutcome>) -> VariantSummary {
    let ok: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    if let Some(first) = ok.first() {
        for key in first.inactive.metrics.keys() {
            let vals: Vec<f64> = ok.iter().filter_map(|r| r.inactive.metrics.get(key).copied()).collect();
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean.insert(key.clone(), mu);
            std.insert(key.clone(), var.sqrt());
        }
    }
    VariantSummary {
        variant,
        failed: runs.len() - ok.len(),
        runs,
        mean,
        std,
    }
}
