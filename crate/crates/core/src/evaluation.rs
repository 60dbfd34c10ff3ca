//! Sampled top-K evaluation per activity cohort.
//!
//! Every user with held-out items is ranked against a fixed set of sampled
//! negatives. Candidate sets depend only on the split and the seed, so
//! different models evaluated with the same seed see the same candidates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ActivityLabels, DatasetSplit};
use crate::error::{LsirError, Result};
use crate::model::{embed, Embeddings};
use crate::training::{PreparedData, TrainedModel};

pub const DEFAULT_NEGATIVES: usize = 1000;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Test items followed by sampled negatives for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub user: usize,
    pub relevant: Vec<usize>,
    pub items: Vec<usize>,
}

/// Draws up to `negatives` items the user has neither trained on nor held
/// out, from a random stream keyed by the user id.
pub fn build_candidates(split: &DatasetSplit, negatives: usize, seed: u64) -> Vec<Candidates> {
    let n = split.train.num_items();
    let mut short = 0;
    let out = split
        .users_with_test()
        .map(|u| {
            let mut relevant = split.test[u].clone();
            relevant.sort_unstable();
            let mut pool: Vec<usize> = (0..n)
                .filter(|&i| !split.train.contains(u, i) && relevant.binary_search(&i).is_err())
                .collect();
            if pool.len() < negatives {
                short += 1;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u as u64);
            let take = negatives.min(pool.len());
            let (chosen, _) = pool.partial_shuffle(&mut rng, take);
            let mut items = relevant.clone();
            items.extend_from_slice(chosen);
            Candidates { user: u, relevant, items }
        })
        .collect();
    if short > 0 {
        log::warn!("{short} users have fewer than {negatives} possible negatives and use all of them");
    }
    out
}

/// Top `k` ids by descending score, ties to the lower id.
pub fn rank_topk(scored: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order = scored.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(k).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub ndcg: f64,
    /// Share of the relevant items found in the top `k`.
    pub hr: f64,
    /// Share of the top `k` that is relevant.
    pub precision: f64,
}

/// Metrics of a ranked list against a sorted relevant set.
pub fn metrics_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> RankMetrics {
    if relevant.is_empty() || k == 0 {
        return RankMetrics {
            ndcg: 0.0,
            hr: 0.0,
            precision: 0.0,
        };
    }
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut hits = 0;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += gain(pos + 1);
        }
    }
    let idcg: f64 = (1..=relevant.len().min(k)).map(gain).sum();
    RankMetrics {
        ndcg: dcg / idcg,
        hr: hits as f64 / relevant.len() as f64,
        precision: hits as f64 / k as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub inactive: bool,
    /// One entry per cutoff, in the order of the report's `k_list`.
    pub at: Vec<RankMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMetrics {
    pub users: usize,
    /// Keys such as `ndcg@10`; empty when the cohort has no users.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub seed: u64,
    pub negatives: usize,
    pub k_list: Vec<usize>,
    pub inactive: CohortMetrics,
    pub active: CohortMetrics,
    pub overall: CohortMetrics,
}

impl MetricsReport {
    pub fn get(&self, cohort: &str, key: &str) -> Option<f64> {
        let c = match cohort {
            "inactive" => &self.inactive,
            "active" => &self.active,
            "overall" => &self.overall,
            _ => return None,
        };
        c.metrics.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub per_user: Vec<UserMetrics>,
}

fn cohort(users: &[&UserMetrics], ks: &[usize]) -> CohortMetrics {
    let mut metrics = BTreeMap::new();
    if !users.is_empty() {
        let n = users.len() as f64;
        for (j, k) in ks.iter().enumerate() {
            let mean = |f: fn(&RankMetrics) -> f64| users.iter().map(|u| f(&u.at[j])).sum::<f64>() / n;
            metrics.insert(format!("ndcg@{k}"), mean(|m| m.ndcg));
            metrics.insert(format!("hr@{k}"), mean(|m| m.hr));
            metrics.insert(format!("precision@{k}"), mean(|m| m.precision));
        }
    }
    CohortMetrics {
        users: users.len(),
        metrics,
    }
}

/// Scores candidates with the given embeddings and averages per cohort.
pub fn evaluate_embeddings(
    emb: &Embeddings,
    split: &DatasetSplit,
    labels: &ActivityLabels,
    ks: &[usize],
    negatives: usize,
    seed: u64,
) -> Result<Evaluation> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(LsirError::Config("cutoffs must be positive".into()));
    }
    let kmax = *ks.iter().max().expect("non-empty");
    let per_user: Vec<UserMetrics> = build_candidates(split, negatives, seed)
        .into_iter()
        .map(|c| {
            let scored: Vec<(usize, f64)> = c.items.iter().map(|&i| (i, emb.score(c.user, i))).collect();
            let ranked = rank_topk(&scored, kmax);
            UserMetrics {
                user: c.user,
                inactive: labels.is_inactive(c.user),
                at: ks.iter().map(|&k| metrics_at_k(&ranked, &c.relevant, k)).collect(),
            }
        })
        .collect();
    let inactive: Vec<&UserMetrics> = per_user.iter().filter(|u| u.inactive).collect();
    let active: Vec<&UserMetrics> = per_user.iter().filter(|u| !u.inactive).collect();
    let all: Vec<&UserMetrics> = per_user.iter().collect();
    for (name, c) in [("inactive", &inactive), ("active", &active)] {
        if c.is_empty() {
            log::warn!("no {name} users with held-out items");
        }
    }
    let report = MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        negatives,
        k_list: ks.to_vec(),
        inactive: cohort(&inactive, ks),
        active: cohort(&active, ks),
        overall: cohort(&all, ks),
    };
    Ok(Evaluation { report, per_user })
}

/// Evaluates a trained model on the data it was trained on.
pub fn evaluate(
    model: &TrainedModel,
    data: &PreparedData,
    ks: &[usize],
    negatives: usize,
    seed: u64,
) -> Result<Evaluation> {
    model.check_data(data)?;
    let md = model.model_data(data)?;
    let emb = embed(&model.config, &model.params, &md)?;
    evaluate_embeddings(&emb, &data.split, &data.labels, ks, negatives, seed)
}
