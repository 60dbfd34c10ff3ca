//! Synthetic datasets with planted topic communities.
//!
//! Every user belongs to one home topic and draws most of its items from
//! that topic. Item features are the topic centroid plus Gaussian noise. A
//! configurable fraction of social edges joins users of the same topic; the
//! rest join uniformly random users, so "same topic" is the ground truth for
//! a useful relation. Same-topic friends also pick up some of each other's
//! items.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActivityLabels, ActivityPolicy, Features, InteractionGraph, SocialGraph};
use crate::data::label_activity;
use crate::error::{LsirError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topics: usize,
    pub users_per_topic: usize,
    pub items_per_topic: usize,
    /// Fraction of users generated as inactive.
    pub inactive_fraction: f64,
    /// Inclusive interaction-count range of active users.
    pub active_interactions: (usize, usize),
    /// Inclusive interaction-count range of inactive users.
    pub inactive_interactions: (usize, usize),
    /// Probability that an interaction is drawn from the home topic.
    pub home_topic_prob: f64,
    /// Within a topic, the item of popularity rank `r` is drawn with weight
    /// `(r + 1)^-s`; zero gives uniform draws.
    pub popularity_exponent: f64,
    /// Mean social degree.
    pub avg_social_degree: f64,
    /// Fraction of social edges whose endpoints share a topic.
    pub social_quality: f64,
    /// Relative chance of an inactive user being picked as an edge endpoint.
    pub inactive_edge_weight: f64,
    /// Chance that an item no same-topic friend holds is swapped for one a
    /// same-topic friend holds. Cross-topic links never carry influence.
    pub social_influence: f64,
    pub feature_dim: usize,
    /// Standard deviation of topic centroids.
    pub centroid_scale: f64,
    /// Standard deviation of per-item feature noise.
    pub feature_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 4,
            users_per_topic: 50,
            items_per_topic: 100,
            inactive_fraction: 0.3,
            active_interactions: (12, 40),
            inactive_interactions: (4, 8),
            home_topic_prob: 0.85,
            popularity_exponent: 0.8,
            avg_social_degree: 10.0,
            social_quality: 0.6,
            inactive_edge_weight: 0.2,
            social_influence: 0.3,
            feature_dim: 16,
            centroid_scale: 1.0,
            feature_noise: 0.5,
        }
    }
}

impl SynthConfig {
    /// The ≈800-user, 1600-item configuration used for ablation runs.
    pub fn ablation_default() -> Self {
        SynthConfig {
            users_per_topic: 200,
            items_per_topic: 400,
            ..SynthConfig::default()
        }
    }

    pub fn num_users(&self) -> usize {
        self.topics * self.users_per_topic
    }

    pub fn num_items(&self) -> usize {
        self.topics * self.items_per_topic
    }

    /// Interaction counts below this value are generated only for inactive
    /// users.
    pub fn inactive_threshold(&self) -> usize {
        self.inactive_interactions.1 + 1
    }

    pub fn num_social_edges(&self) -> usize {
        (self.avg_social_degree * self.num_users() as f64 / 2.0).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LsirError::Config(m));
        if self.topics == 0 || self.users_per_topic < 2 || self.items_per_topic == 0 {
            return err("need at least one topic, two users and one item per topic".into());
        }
        if !(0.0..=1.0).contains(&self.inactive_fraction)
            || !(0.0..=1.0).contains(&self.home_topic_prob)
            || !(0.0..=1.0).contains(&self.social_quality)
            || !(0.0..=1.0).contains(&self.social_influence)
        {
            return err("fractions and probabilities must lie in [0, 1]".into());
        }
        let (ilo, ihi) = self.inactive_interactions;
        let (alo, ahi) = self.active_interactions;
        if ilo == 0 || ilo > ihi || alo > ahi {
            return err("interaction ranges must be non-empty and start at 1 or more".into());
        }
        if alo <= ihi {
            return err(format!(
                "active range {alo}..={ahi} overlaps inactive range {ilo}..={ihi}"
            ));
        }
        if ahi > self.num_items() {
            return err(format!(
                "{ahi} interactions requested but only {} items exist",
                self.num_items()
            ));
        }
        if self.inactive_edge_weight <= 0.0 || self.avg_social_degree < 0.0 {
            return err("edge weights and degree must be positive".into());
        }
        if !(self.popularity_exponent >= 0.0) {
            return err("popularity exponent must be non-negative".into());
        }
        if self.feature_noise < 0.0 || self.centroid_scale < 0.0 {
            return err("feature scales must be non-negative".into());
        }
        let within = (self.social_quality * self.num_social_edges() as f64).round() as usize;
        let within_pairs = self.topics * self.users_per_topic * (self.users_per_topic - 1) / 2;
        if within > within_pairs {
            return err(format!(
                "{within} within-topic edges requested but only {within_pairs} such pairs exist"
            ));
        }
        let m = self.num_users();
        if self.num_social_edges() > m * (m - 1) / 2 {
            return err("more social edges requested than user pairs exist".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub graph: InteractionGraph,
    pub social: SocialGraph,
    /// Labels as generated (threshold policy on the full interaction set).
    pub labels: ActivityLabels,
    pub user_topic: Vec<usize>,
    pub item_topic: Vec<usize>,
}

/// Two snapshots of the same population: new social edges appear between
/// them and interactions grow.
#[derive(Debug, Clone)]
pub struct SnapshotPair {
    pub first: SyntheticDataset,
    pub second: InteractionGraph,
    pub new_edges: Vec<(usize, usize)>,
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    user_topic: Vec<usize>,
    topic_users: Vec<Vec<usize>>,
    inactive: Vec<bool>,
    /// Items of each topic, most popular first.
    item_order: Vec<Vec<usize>>,
    popularity: WeightedIndex<f64>,
}

impl Sampler<'_> {
    fn draw_item(&mut self, home: usize) -> usize {
        let topic = if self.rng.random::<f64>() < self.cfg.home_topic_prob {
            home
        } else {
            self.rng.random_range(0..self.cfg.topics)
        };
        let rank = self.popularity.sample(&mut self.rng);
        self.item_order[topic][rank]
    }

    fn draw_items(&mut self, u: usize, count: usize, existing: &HashSet<usize>) -> Vec<usize> {
        let home = self.user_topic[u];
        let mut chosen: HashSet<usize> = HashSet::new();
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count && attempts < 1000 * count.max(1) {
            attempts += 1;
            let i = self.draw_item(home);
            if !existing.contains(&i) && chosen.insert(i) {
                out.push(i);
            }
        }
        out
    }

    fn endpoint_weight(&self, u: usize) -> f64 {
        if self.inactive[u] {
            self.cfg.inactive_edge_weight
        } else {
            1.0
        }
    }

    fn weighted_user(&mut self, pool: &[usize]) -> usize {
        let max_w = 1.0f64.max(self.cfg.inactive_edge_weight);
        loop {
            let u = *pool.choose(&mut self.rng).unwrap();
            if self.rng.random::<f64>() * max_w < self.endpoint_weight(u) {
                return u;
            }
        }
    }

    fn draw_edges(
        &mut self,
        count: usize,
        existing: &HashSet<(usize, usize)>,
    ) -> Vec<(usize, usize)> {
        let all: Vec<usize> = (0..self.user_topic.len()).collect();
        let within = (self.cfg.social_quality * count as f64).round() as usize;
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count && attempts < 1000 * count.max(1) {
            attempts += 1;
            let u = self.weighted_user(&all);
            let v = if out.len() < within {
                let pool = self.topic_users[self.user_topic[u]].clone();
                self.weighted_user(&pool)
            } else {
                self.weighted_user(&all)
            };
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if existing.contains(&key) || !seen.insert(key) {
                continue;
            }
            out.push(key);
        }
        out
    }
}

fn new_sampler(cfg: &SynthConfig, seed: u64) -> Sampler<'_> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.num_users();
    let mut user_topic: Vec<usize> = (0..m).map(|u| u % cfg.topics).collect();
    user_topic.shuffle(&mut rng);
    let mut topic_users = vec![Vec::new(); cfg.topics];
    for (u, &t) in user_topic.iter().enumerate() {
        topic_users[t].push(u);
    }
    let num_inactive = (cfg.inactive_fraction * m as f64).round() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut inactive = vec![false; m];
    for &u in &order[..num_inactive] {
        inactive[u] = true;
    }
    let item_order = (0..cfg.topics)
        .map(|t| {
            let mut items: Vec<usize> = (t * cfg.items_per_topic..(t + 1) * cfg.items_per_topic).collect();
            items.shuffle(&mut rng);
            items
        })
        .collect();
    let weights = (0..cfg.items_per_topic).map(|r| ((r + 1) as f64).powf(-cfg.popularity_exponent));
    Sampler {
        cfg,
        rng,
        user_topic,
        topic_users,
        inactive,
        item_order,
        popularity: WeightedIndex::new(weights).expect("positive weights"),
    }
}

/// Generates a dataset. The same config and seed always give the same data.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    Ok(generate_with(cfg, seed)?.0)
}

fn generate_with(cfg: &SynthConfig, seed: u64) -> Result<(SyntheticDataset, Sampler<'_>)> {
    cfg.validate()?;
    let mut s = new_sampler(cfg, seed);
    let m = cfg.num_users();
    let n = cfg.num_items();

    let centroid = Normal::new(0.0, cfg.centroid_scale.max(f64::MIN_POSITIVE)).unwrap();
    let noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE)).unwrap();
    let centroids = Array2::from_shape_fn((cfg.topics, cfg.feature_dim), |_| {
        if cfg.centroid_scale == 0.0 {
            0.0
        } else {
            centroid.sample(&mut s.rng)
        }
    });
    let item_topic: Vec<usize> = (0..n).map(|i| i / cfg.items_per_topic).collect();
    let mut x = Array2::zeros((n, cfg.feature_dim));
    for i in 0..n {
        for j in 0..cfg.feature_dim {
            let eps = if cfg.feature_noise == 0.0 {
                0.0
            } else {
                noise.sample(&mut s.rng)
            };
            x[[i, j]] = centroids[[item_topic[i], j]] + eps;
        }
    }

    let edges = s.draw_edges(cfg.num_social_edges(), &HashSet::new());
    let social = SocialGraph::from_edges(m, edges, true)?;

    let own: Vec<Vec<usize>> = (0..m)
        .map(|u| {
            let (lo, hi) = if s.inactive[u] {
                cfg.inactive_interactions
            } else {
                cfg.active_interactions
            };
            let count = s.rng.random_range(lo..=hi);
            s.draw_items(u, count, &HashSet::new())
        })
        .collect();
    // Users are settled in index order, so a copy from a lower-indexed friend
    // comes from that friend's final items.
    let mut settled: Vec<Vec<usize>> = own.clone();
    for u in 0..m {
        let friends: Vec<usize> = social
            .neighbors(u)
            .iter()
            .copied()
            .filter(|&v| s.user_topic[v] == s.user_topic[u])
            .collect();
        let mut chosen = HashSet::new();
        for &i in &own[u] {
            let mut item = i;
            let shared = friends.iter().any(|&v| settled[v].contains(&i));
            if !shared && !friends.is_empty() && s.rng.random::<f64>() < cfg.social_influence {
                let v = friends[s.rng.random_range(0..friends.len())];
                let fresh: Vec<usize> = settled[v]
                    .iter()
                    .copied()
                    .filter(|j| !chosen.contains(j) && !own[u].contains(j))
                    .collect();
                if let Some(&j) = fresh.choose(&mut s.rng) {
                    item = j;
                }
            }
            chosen.insert(item);
        }
        if chosen.len() < own[u].len() {
            let extra = s.draw_items(u, own[u].len() - chosen.len(), &chosen);
            chosen.extend(extra);
        }
        let mut items: Vec<usize> = chosen.into_iter().collect();
        items.sort_unstable();
        settled[u] = items;
    }
    let pairs: Vec<(usize, usize)> = settled
        .iter()
        .enumerate()
        .flat_map(|(u, set)| set.iter().map(move |&i| (u, i)))
        .collect();
    let (graph, _) =
        InteractionGraph::from_pairs(m, n, pairs, Features::Identity(m), Features::Dense(x))?;
    let labels = label_activity(&graph, ActivityPolicy::Threshold(cfg.inactive_threshold()))?;

    let ds = SyntheticDataset {
        graph,
        social,
        labels,
        user_topic: s.user_topic.clone(),
        item_topic,
    };
    Ok((ds, s))
}

/// Generates a first snapshot and a later one. Between the snapshots
/// `new_edges` fresh social edges appear and every user gains
/// `growth` home-topic items; each endpoint of a new edge also adopts one of
/// its partner's items, with probability `active_adoption` when the partner
/// is active and `inactive_adoption` otherwise.
pub fn generate_snapshots(
    cfg: &SynthConfig,
    new_edges: usize,
    growth: usize,
    active_adoption: f64,
    inactive_adoption: f64,
    seed: u64,
) -> Result<SnapshotPair> {
    let (first, mut s) = generate_with(cfg, seed)?;
    let existing: HashSet<(usize, usize)> = first.social.edges().into_iter().collect();
    let added = s.draw_edges(new_edges, &existing);

    let m = first.graph.num_users();
    let mut items: Vec<HashSet<usize>> = (0..m)
        .map(|u| first.graph.items_of(u).iter().copied().collect())
        .collect();
    for (u, own) in items.iter_mut().enumerate() {
        let extra = s.draw_items(u, growth, own);
        own.extend(extra);
    }
    for &(u, v) in &added {
        for (a, b) in [(u, v), (v, u)] {
            let p = if first.labels.is_inactive(b) {
                inactive_adoption
            } else {
                active_adoption
            };
            if s.rng.random::<f64>() < p {
                let mut candidates: Vec<usize> = first
                    .graph
                    .items_of(b)
                    .iter()
                    .copied()
                    .filter(|i| !items[a].contains(i))
                    .collect();
                candidates.sort_unstable();
                if let Some(&i) = candidates.choose(&mut s.rng) {
                    items[a].insert(i);
                }
            }
        }
    }
    let second = first.graph.with_pairs(
        items
            .iter()
            .enumerate()
            .flat_map(|(u, set)| set.iter().map(move |&i| (u, i))),
    )?;
    Ok(SnapshotPair {
        first,
        second,
        new_edges: added,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_satisfies_invariants() {
        let cfg = SynthConfig::default();
        let ds = generate_synthetic(&cfg, 3).unwrap();
        assert_eq!(ds.graph.num_users(), 200);
        assert_eq!(ds.graph.num_items(), 400);
        assert!(ds.graph.reverse_index_consistent());
        for u in 0..200 {
            assert!(!ds.social.has_edge(u, u));
            for &v in ds.social.neighbors(u) {
                assert!(ds.social.has_edge(v, u));
            }
        }
        let frac = ds.labels.inactive_users().len() as f64 / 200.0;
        assert!((frac - cfg.inactive_fraction).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn full_quality_means_same_topic_edges() {
        let cfg = SynthConfig {
            topics: 2,
            social_quality: 1.0,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, 11).unwrap();
        assert!(ds.social.num_edges() > 0);
        for (u, v) in ds.social.edges() {
            assert_eq!(ds.user_topic[u], ds.user_topic[v]);
        }
    }

    #[test]
    fn influence_adds_overlap_only_within_topics() {
        let overlap = |influence: f64| {
            let cfg = SynthConfig {
                social_influence: influence,
                ..SynthConfig::default()
            };
            let ds = generate_synthetic(&cfg, 4).unwrap();
            let (mut same, mut cross) = ((0.0, 0), (0.0, 0));
            for (u, v) in ds.social.edges() {
                let j = crate::analysis::jaccard(ds.graph.items_of(u), ds.graph.items_of(v));
                let acc = if ds.user_topic[u] == ds.user_topic[v] { &mut same } else { &mut cross };
                acc.0 += j;
                acc.1 += 1;
            }
            (same.0 / same.1 as f64, cross.0 / cross.1 as f64)
        };
        let (same0, cross0) = overlap(0.0);
        let (same1, cross1) = overlap(0.5);
        assert!(same1 - same0 > 0.03, "{same0} -> {same1}");
        assert!(cross1 - cross0 < 0.25 * (same1 - same0), "{cross0} -> {cross1}");
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg, 9).unwrap();
        let b = generate_synthetic(&cfg, 9).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.social, b.social);
        let c = generate_synthetic(&cfg, 10).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn infeasible_within_topic_edges() {
        let cfg = SynthConfig {
            topics: 4,
            users_per_topic: 3,
            avg_social_degree: 4.0,
            social_quality: 1.0,
            active_interactions: (10, 12),
            ..SynthConfig::default()
        };
        // 24 edges wanted, only 4 * 3 = 12 same-topic pairs
        assert!(matches!(generate_synthetic(&cfg, 0), Err(LsirError::Config(_))));
    }

    #[test]
    fn snapshots_grow_and_add_fresh_edges() {
        let cfg = SynthConfig::default();
        let snap = generate_snapshots(&cfg, 100, 2, 0.8, 0.2, 4).unwrap();
        assert!(!snap.new_edges.is_empty());
        for &(u, v) in &snap.new_edges {
            assert!(!snap.first.social.has_edge(u, v));
        }
        for u in 0..cfg.num_users() {
            for &i in snap.first.graph.items_of(u) {
                assert!(snap.second.contains(u, i));
            }
        }
        assert!(snap.second.num_interactions() > snap.first.graph.num_interactions());
    }
}
