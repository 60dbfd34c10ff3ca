//! Interaction and social graphs, activity labels and train/test splitting.

mod io;
mod synth;

pub use io::{
    dataset_hash, load_dataset, read_id_map, write_dataset, write_id_map, DatasetPaths, IdMap,
    LoadStats, LoadedDataset, ID_MAP_FILE, INTERACTIONS_FILE, ITEM_FEATURES_FILE, SOCIAL_FILE,
    USER_FEATURES_FILE,
};
pub(crate) use io::write_atomic;
pub use synth::{generate_snapshots, generate_synthetic, SnapshotPair, SynthConfig, SyntheticDataset};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LsirError, Result};

/// Raw node features. `Identity(n)` stands for an n×n one-hot matrix and is
/// never materialised.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Identity(usize),
    Dense(Array2<f64>),
}

impl Features {
    pub fn rows(&self) -> usize {
        match self {
            Features::Identity(n) => *n,
            Features::Dense(x) => x.nrows(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Features::Identity(n) => *n,
            Features::Dense(x) => x.ncols(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Features::Identity(n) => Array2::eye(*n),
            Features::Dense(x) => x.clone(),
        }
    }
}

/// Bipartite user-item graph with both adjacency directions kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
    pub user_features: Features,
    pub item_features: Features,
}

impl InteractionGraph {
    /// Builds the graph from `(user, item)` pairs. Duplicate pairs are
    /// dropped; the number dropped is returned alongside the graph.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        user_features: Features,
        item_features: Features,
    ) -> Result<(Self, usize)> {
        if user_features.rows() != num_users {
            return Err(LsirError::Shape(format!(
                "user features have {} rows, expected {num_users}",
                user_features.rows()
            )));
        }
        if item_features.rows() != num_items {
            return Err(LsirError::Shape(format!(
                "item features have {} rows, expected {num_items}",
                item_features.rows()
            )));
        }
        let mut user_items = vec![Vec::new(); num_users];
        let mut total = 0usize;
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(LsirError::Input(format!(
                    "interaction ({u}, {i}) out of range for {num_users} users / {num_items} items"
                )));
            }
            user_items[u].push(i);
            total += 1;
        }
        let mut kept = 0usize;
        for items in &mut user_items {
            items.sort_unstable();
            items.dedup();
            kept += items.len();
        }
        let item_users = reverse_index(&user_items, num_items);
        Ok((
            InteractionGraph {
                num_users,
                num_items,
                user_items,
                item_users,
                user_features,
                item_features,
            },
            total - kept,
        ))
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_interactions(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    /// Sorted item ids of user `u`.
    pub fn items_of(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }

    /// Sorted user ids of item `i`.
    pub fn users_of(&self, i: usize) -> &[usize] {
        &self.item_users[i]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_items[u].len()
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_users[i].len()
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items[u].binary_search(&i).is_ok()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
    }

    /// Same users, items and features with a different edge set.
    pub fn with_pairs(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::from_pairs(
            self.num_users,
            self.num_items,
            pairs,
            self.user_features.clone(),
            self.item_features.clone(),
        )
        .map(|(g, _)| g)
    }

    /// True when `item_users` is exactly the transpose of `user_items`.
    pub fn reverse_index_consistent(&self) -> bool {
        reverse_index(&self.user_items, self.num_items) == self.item_users
    }
}

fn reverse_index(user_items: &[Vec<usize>], num_items: usize) -> Vec<Vec<usize>> {
    let mut item_users = vec![Vec::new(); num_items];
    for (u, items) in user_items.iter().enumerate() {
        for &i in items {
            item_users[i].push(u);
        }
    }
    item_users
}

/// User-user adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    neighbors: Vec<Vec<usize>>,
    symmetric: bool,
}

impl SocialGraph {
    pub fn empty(num_users: usize) -> Self {
        SocialGraph {
            neighbors: vec![Vec::new(); num_users],
            symmetric: true,
        }
    }

    /// Builds an adjacency from an edge list. Self-loops and duplicates are
    /// dropped; with `symmetric` each edge is inserted in both directions.
    pub fn from_edges(
        num_users: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        symmetric: bool,
    ) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); num_users];
        for (u, v) in edges {
            if u >= num_users || v >= num_users {
                return Err(LsirError::Input(format!(
                    "social edge ({u}, {v}) out of range for {num_users} users"
                )));
            }
            if u == v {
                continue;
            }
            neighbors[u].push(v);
            if symmetric {
                neighbors[v].push(u);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Ok(SocialGraph {
            neighbors,
            symmetric,
        })
    }

    pub fn num_users(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Edge list; for symmetric graphs each undirected edge appears once as
    /// `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, ns) in self.neighbors.iter().enumerate() {
            for &v in ns {
                if !self.symmetric || u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Active,
    Inactive,
}

/// How users are split into active and inactive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityPolicy {
    /// Inactive iff the interaction count is strictly below the threshold.
    Threshold(usize),
    /// The given fraction of users with the fewest interactions is inactive.
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityLabels {
    labels: Vec<Activity>,
    pub policy: ActivityPolicy,
}

impl ActivityLabels {
    pub fn from_vec(labels: Vec<Activity>, policy: ActivityPolicy) -> Self {
        ActivityLabels { labels, policy }
    }

    pub fn get(&self, u: usize) -> Activity {
        self.labels[u]
    }

    pub fn is_inactive(&self, u: usize) -> bool {
        self.labels[u] == Activity::Inactive
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[Activity] {
        &self.labels
    }

    pub fn active_users(&self) -> Vec<usize> {
        self.users_with(Activity::Active)
    }

    pub fn inactive_users(&self) -> Vec<usize> {
        self.users_with(Activity::Inactive)
    }

    fn users_with(&self, a: Activity) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&u| self.labels[u] == a)
            .collect()
    }
}

/// Labels every user active or inactive from its interaction count in `graph`
/// (which should be the training split).
pub fn label_activity(graph: &InteractionGraph, policy: ActivityPolicy) -> Result<ActivityLabels> {
    let m = graph.num_users();
    let labels = match policy {
        ActivityPolicy::Threshold(eps) => {
            if eps < 1 {
                return Err(LsirError::Config(
                    "activity threshold must be at least 1".into(),
                ));
            }
            (0..m)
                .map(|u| {
                    if graph.user_degree(u) < eps {
                        Activity::Inactive
                    } else {
                        Activity::Active
                    }
                })
                .collect()
        }
        ActivityPolicy::Percentile(p) => {
            if !(p > 0.0 && p < 1.0) {
                return Err(LsirError::Config(format!(
                    "inactive percentile must lie in (0, 1), got {p}"
                )));
            }
            let count = (p * m as f64).floor() as usize;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by_key(|&u| (graph.user_degree(u), u));
            let mut labels = vec![Activity::Active; m];
            for &u in &order[..count] {
                labels[u] = Activity::Inactive;
            }
            labels
        }
    };
    Ok(ActivityLabels { labels, policy })
}

/// Training graph plus held-out items per user.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: InteractionGraph,
    pub test: Vec<Vec<usize>>,
}

impl DatasetSplit {
    pub fn users_with_test(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.test.len()).filter(|&u| !self.test[u].is_empty())
    }
}

/// Holds out `floor(fraction * |I(u)|)` items of every user, uniformly at
/// random under `seed`.
pub fn split_train_test(
    graph: &InteractionGraph,
    holdout_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(LsirError::Config(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_pairs = Vec::with_capacity(graph.num_interactions());
    let mut test = vec![Vec::new(); graph.num_users()];
    for u in 0..graph.num_users() {
        let mut items = graph.items_of(u).to_vec();
        let held = (holdout_fraction * items.len() as f64).floor() as usize;
        items.shuffle(&mut rng);
        let mut held_items = items[..held].to_vec();
        held_items.sort_unstable();
        train_pairs.extend(items[held..].iter().map(|&i| (u, i)));
        test[u] = held_items;
    }
    let train = graph.with_pairs(train_pairs)?;
    Ok(DatasetSplit { train, test })
}
