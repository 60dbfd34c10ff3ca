//! Relation-quality measurements on a social graph: how often related users
//! share items, how social degree differs between activity classes, and how
//! the item overlap of newly related users changes over time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Activity, ActivityLabels, InteractionGraph, SocialGraph};
use crate::error::{LsirError, Result};

/// Jaccard index of two sorted id sets; 0 when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationClass {
    InacInac,
    InacAc,
    AcAc,
    Rand,
}

impl RelationClass {
    pub fn of(labels: &ActivityLabels, u: usize, v: usize) -> Self {
        match (labels.get(u), labels.get(v)) {
            (Activity::Inactive, Activity::Inactive) => RelationClass::InacInac,
            (Activity::Active, Activity::Active) => RelationClass::AcAc,
            _ => RelationClass::InacAc,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub pairs: usize,
    /// A rate for non-zero-overlap reports, a mean for delta reports.
    pub value: f64,
    /// First quartile, median and third quartile, for delta reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quartiles: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationClassReport {
    pub inac_inac: ClassStat,
    pub inac_ac: ClassStat,
    pub ac_ac: ClassStat,
    pub rand: ClassStat,
}

impl RelationClassReport {
    pub fn get(&self, class: RelationClass) -> &ClassStat {
        match class {
            RelationClass::InacInac => &self.inac_inac,
            RelationClass::InacAc => &self.inac_ac,
            RelationClass::AcAc => &self.ac_ac,
            RelationClass::Rand => &self.rand,
        }
    }

    fn get_mut(&mut self, class: RelationClass) -> &mut ClassStat {
        match class {
            RelationClass::InacInac => &mut self.inac_inac,
            RelationClass::InacAc => &mut self.inac_ac,
            RelationClass::AcAc => &mut self.ac_ac,
            RelationClass::Rand => &mut self.rand,
        }
    }
}

/// Uniform user pairs with replacement, self-pairs rejected.
fn random_pairs(num_users: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if num_users < 2 {
        return out;
    }
    while out.len() < count {
        let u = rng.random_range(0..num_users);
        let v = rng.random_range(0..num_users);
        if u != v {
            out.push((u, v));
        }
    }
    out
}

/// Fraction of related user pairs with at least one common item, per
/// relation class. The `Rand` class uses as many random pairs as there are
/// social edges.
pub fn nonzero_jaccard_rate(
    social: &SocialGraph,
    interactions: &InteractionGraph,
    labels: &ActivityLabels,
    seed: u64,
) -> RelationClassReport {
    let mut hits = [0usize; 4];
    let mut report = RelationClassReport::default();
    let idx = |c: RelationClass| c as usize;
    let overlaps =
        |u: usize, v: usize| jaccard(interactions.items_of(u), interactions.items_of(v)) > 0.0;

    let edges = social.edges();
    for &(u, v) in &edges {
        let class = RelationClass::of(labels, u, v);
        report.get_mut(class).pairs += 1;
        hits[idx(class)] += overlaps(u, v) as usize;
    }
    for (u, v) in random_pairs(social.num_users(), edges.len(), seed) {
        report.rand.pairs += 1;
        hits[idx(RelationClass::Rand)] += overlaps(u, v) as usize;
    }
    for class in [
        RelationClass::InacInac,
        RelationClass::InacAc,
        RelationClass::AcAc,
        RelationClass::Rand,
    ] {
        let stat = report.get_mut(class);
        stat.value = if stat.pairs == 0 {
            0.0
        } else {
            hits[idx(class)] as f64 / stat.pairs as f64
        };
    }
    report
}

/// Per-activity-class share of users in each social-degree bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeHistogram {
    /// Bucket names: `0`, `(0, b0]`, `(b0, b1]`, ..., `(bk, inf)`.
    pub buckets: Vec<String>,
    pub active: Vec<f64>,
    pub inactive: Vec<f64>,
    pub active_users: usize,
    pub inactive_users: usize,
}

/// `upper_bounds` are the strictly increasing, positive upper edges of the
/// closed-above buckets; a degree-0 bucket and an open last bucket are
/// always added. A class without users gets all-zero fractions.
pub fn degree_distribution(
    social: &SocialGraph,
    labels: &ActivityLabels,
    upper_bounds: &[usize],
) -> Result<DegreeHistogram> {
    if upper_bounds.first() == Some(&0) || upper_bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LsirError::Config(format!(
            "bucket bounds must be positive and strictly increasing, got {upper_bounds:?}"
        )));
    }
    let mut buckets = vec!["0".to_string()];
    let mut lo = 0;
    for &b in upper_bounds {
        buckets.push(format!("({lo}, {b}]"));
        lo = b;
    }
    buckets.push(format!("({lo}, inf)"));

    let bucket_of = |deg: usize| {
        if deg == 0 {
            0
        } else {
            1 + upper_bounds.iter().take_while(|&&b| deg > b).count()
        }
    };
    let mut counts = [vec![0usize; buckets.len()], vec![0usize; buckets.len()]];
    for u in 0..social.num_users() {
        let class = labels.is_inactive(u) as usize;
        counts[class][bucket_of(social.degree(u))] += 1;
    }
    let normalize = |c: &[usize]| {
        let total: usize = c.iter().sum();
        c.iter()
            .map(|&x| if total == 0 { 0.0 } else { x as f64 / total as f64 })
            .collect::<Vec<_>>()
    };
    Ok(DegreeHistogram {
        active: normalize(&counts[0]),
        inactive: normalize(&counts[1]),
        active_users: counts[0].iter().sum(),
        inactive_users: counts[1].iter().sum(),
        buckets,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(deltas: &mut [f64]) -> ClassStat {
    if deltas.is_empty() {
        return ClassStat::default();
    }
    deltas.sort_by(f64::total_cmp);
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    ClassStat {
        pairs: deltas.len(),
        value: mean,
        quartiles: Some([
            quantile(deltas, 0.25),
            quantile(deltas, 0.5),
            quantile(deltas, 0.75),
        ]),
    }
}

/// Distribution of `J_second(u, v) - J_first(u, v)` over pairs that became
/// related between two snapshots, per relation class. The `Rand` class uses
/// as many random pairs.
pub fn jaccard_delta(
    new_edges: &[(usize, usize)],
    social_first: &SocialGraph,
    first: &InteractionGraph,
    second: &InteractionGraph,
    labels: &ActivityLabels,
    seed: u64,
) -> Result<RelationClassReport> {
    if first.num_users() != second.num_users() {
        return Err(LsirError::Input(
            "snapshots cover different user populations".into(),
        ));
    }
    let delta = |u: usize, v: usize| {
        jaccard(second.items_of(u), second.items_of(v))
            - jaccard(first.items_of(u), first.items_of(v))
    };
    let mut per_class: [Vec<f64>; 4] = Default::default();
    for &(u, v) in new_edges {
        if social_first.has_edge(u, v) {
            return Err(LsirError::Input(format!(
                "edge ({u}, {v}) already exists in the first snapshot"
            )));
        }
        per_class[RelationClass::of(labels, u, v) as usize].push(delta(u, v));
    }
    for (u, v) in random_pairs(first.num_users(), new_edges.len(), seed) {
        per_class[RelationClass::Rand as usize].push(delta(u, v));
    }
    let [mut ii, mut ia, mut aa, mut rr] = per_class;
    Ok(RelationClassReport {
        inac_inac: summarize(&mut ii),
        inac_ac: summarize(&mut ia),
        ac_ac: summarize(&mut aa),
        rand: summarize(&mut rr),
    })
}
