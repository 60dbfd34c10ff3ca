//! Graph structure learning for the social graph.
//!
//! Each refinement iteration scores every social edge with a multi-head
//! cosine similarity, keeps the most similar neighbours (fewer for users with
//! many interactions), links each user to the most similar cluster anchors
//! (more for users with few interactions), fuses the weighted messages with
//! the user's own embedding and combines the result with the projected
//! features through a learned linear map.
//!
//! Selections are hard top-k choices. They are read off the current
//! similarity values and treated as constants by the gradient; only the
//! weights of the selected links carry gradient.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ActivityLabels, InteractionGraph, SocialGraph};
use crate::encoder::glorot;
use crate::error::{LsirError, Result};
use crate::tape::{Mat, Tape, Var};

pub const KMEANS_MAX_ROUNDS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

/// `tanh(c / r1)`: the share of social neighbours to drop.
pub fn deletion_ratio(interactions: usize, r1: f64) -> Result<f64> {
    if !(r1 > 0.0) {
        return Err(LsirError::Config(format!("r1 must be positive, got {r1}")));
    }
    Ok((interactions as f64 / r1).tanh())
}

/// `1 / (1 + exp(c / r2))`: the share of cluster anchors to link.
pub fn addition_ratio(interactions: usize, r2: f64) -> Result<f64> {
    if !(r2 > 0.0) {
        return Err(LsirError::Config(format!("r2 must be positive, got {r2}")));
    }
    Ok(1.0 / (1.0 + (interactions as f64 / r2).exp()))
}

/// Neighbours kept out of `neighbors`: at least one whenever there is one.
pub fn retained_count(neighbors: usize, p_del: f64) -> usize {
    if neighbors == 0 {
        return 0;
    }
    let keep = ((1.0 - p_del) * neighbors as f64).ceil() as usize;
    keep.max(1).min(neighbors)
}

pub fn anchor_count(clusters: usize, p_add: f64) -> usize {
    ((p_add * clusters as f64).ceil() as usize).min(clusters)
}

fn top_by_score(mut scored: Vec<(usize, f64)>, count: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(count);
    scored
}

/// Keeps the `retained_count` highest-scoring `(neighbour, similarity)`
/// pairs, ties to the lower id, in descending score order.
pub fn retain_top(scored: Vec<(usize, f64)>, p_del: f64) -> Vec<(usize, f64)> {
    let count = retained_count(scored.len(), p_del);
    top_by_score(scored, count)
}

/// Picks anchors for `user` given one similarity per cluster. Clusters whose
/// anchor is `user` itself are skipped. Returns `(cluster, similarity)`.
pub fn pick_anchors(user: usize, anchors: &[usize], sims: &[f64], p_add: f64) -> Vec<(usize, f64)> {
    let count = anchor_count(anchors.len(), p_add);
    let eligible = (0..anchors.len())
        .filter(|&k| anchors[k] != user)
        .map(|k| (k, sims[k]))
        .collect();
    top_by_score(eligible, count)
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Mean over heads of `cos(a · A_q, b · B_q)`. A head whose projection of
/// either side vanishes contributes zero.
pub fn multihead_cosine(a: ArrayView1<f64>, b: ArrayView1<f64>, proj_a: &[Mat], proj_b: &[Mat]) -> f64 {
    let total: f64 = proj_a
        .iter()
        .zip(proj_b)
        .map(|(wa, wb)| cosine(&a.dot(wa), &b.dot(wb)))
        .sum();
    total / proj_a.len() as f64
}

/// `alpha * (sum_j s_j e_j + sum_k s_k a_k) + (1 - alpha) * e_u`.
pub fn fuse_social(
    user: usize,
    embeddings: &Mat,
    neighbors: &[(usize, f64)],
    anchors: &[(usize, f64)],
    anchor_embeddings: &Mat,
    alpha: f64,
) -> Array1<f64> {
    let mut msg = Array1::zeros(embeddings.ncols());
    for &(v, s) in neighbors {
        msg.scaled_add(s, &embeddings.row(v));
    }
    for &(k, s) in anchors {
        msg.scaled_add(s, &anchor_embeddings.row(k));
    }
    msg * alpha + &embeddings.row(user) * (1.0 - alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Mat,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub rounds: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: ArrayView1<f64>, centroids: &Mat) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(data: &Mat, k: usize, rng: &mut ChaCha8Rng) -> Mat {
    let n = data.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|r| sq_dist(data.row(r), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (r, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = r;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            let rest: Vec<usize> = (0..n).filter(|r| !chosen.contains(r)).collect();
            rest[rng.random_range(0..rest.len())]
        };
        chosen.push(next);
        for r in 0..n {
            dist[r] = dist[r].min(sq_dist(data.row(r), data.row(next)));
        }
    }
    let mut centroids = Mat::zeros((k, data.ncols()));
    for (c, &r) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&data.row(r));
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops after
/// [`KMEANS_MAX_ROUNDS`] rounds or once the relative change in inertia drops
/// to [`KMEANS_TOLERANCE`]. An emptied cluster keeps its previous centroid.
pub fn kmeans(data: &Mat, k: usize, seed: u64) -> Result<KMeans> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(LsirError::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(data, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut prev = f64::INFINITY;
    let mut rounds = 0;
    let mut inertia;
    loop {
        rounds += 1;
        inertia = 0.0;
        for r in 0..n {
            let (c, d) = nearest(data.row(r), &centroids);
            assignments[r] = c;
            inertia += d;
        }
        let converged = prev.is_finite() && (prev - inertia).abs() <= KMEANS_TOLERANCE * prev;
        if converged || inertia == 0.0 || rounds >= KMEANS_MAX_ROUNDS {
            break;
        }
        prev = inertia;
        let mut sums = Mat::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for r in 0..n {
            sums.row_mut(assignments[r]).scaled_add(1.0, &data.row(r));
            counts[assignments[r]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
        rounds,
    })
}

/// Item clusters with their representative active users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub item_cluster: Vec<usize>,
    /// Sorted item ids per cluster.
    pub clusters: Vec<Vec<usize>>,
    /// Best-matching cluster of each active user, `None` for inactive users.
    pub user_cluster: Vec<Option<usize>>,
    /// Anchor user of each cluster.
    pub anchors: Vec<usize>,
    pub anchor_jaccard: Vec<f64>,
    /// Whether the anchor had to be taken from outside the cluster's users.
    pub fallback: Vec<bool>,
}

impl ClusterModel {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

fn cluster_jaccard(items: &[usize], item_cluster: &[usize], sizes: &[usize]) -> Vec<f64> {
    let mut inter = vec![0usize; sizes.len()];
    for &i in items {
        inter[item_cluster[i]] += 1;
    }
    inter
        .iter()
        .zip(sizes)
        .map(|(&x, &s)| {
            let union = items.len() + s - x;
            if union == 0 {
                0.0
            } else {
                x as f64 / union as f64
            }
        })
        .collect()
}

fn argmax_first(values: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Derives user clusters and anchors from a fixed item partition.
pub fn assign_clusters(
    train: &InteractionGraph,
    labels: &ActivityLabels,
    item_cluster: Vec<usize>,
    l: usize,
) -> Result<ClusterModel> {
    if item_cluster.len() != train.num_items() || item_cluster.iter().any(|&c| c >= l) {
        return Err(LsirError::Shape("item cluster assignment does not fit".into()));
    }
    let active = labels.active_users();
    if active.is_empty() {
        return Err(LsirError::Input("cluster anchors need at least one active user".into()));
    }
    let mut clusters = vec![Vec::new(); l];
    for (i, &c) in item_cluster.iter().enumerate() {
        clusters[c].push(i);
    }
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let scores: Vec<Vec<f64>> = active
        .iter()
        .map(|&u| cluster_jaccard(train.items_of(u), &item_cluster, &sizes))
        .collect();
    let mut user_cluster = vec![None; train.num_users()];
    for (a, &u) in active.iter().enumerate() {
        user_cluster[u] = argmax_first(scores[a].iter().copied().enumerate()).map(|b| b.0);
    }
    let mut anchors = Vec::with_capacity(l);
    let mut anchor_jaccard = Vec::with_capacity(l);
    let mut fallback = Vec::with_capacity(l);
    for c in 0..l {
        let members = argmax_first(
            (0..active.len())
                .filter(|&a| user_cluster[active[a]] == Some(c))
                .map(|a| (a, scores[a][c])),
        );
        let (pick, used_fallback) = match members {
            Some(best) => (best, false),
            None => {
                let best = argmax_first((0..active.len()).map(|a| (a, scores[a][c])));
                log::warn!("cluster {c} has no matching active user, using the best overall match");
                (best.expect("active users exist"), true)
            }
        };
        anchors.push(active[pick.0]);
        anchor_jaccard.push(pick.1);
        fallback.push(used_fallback);
    }
    Ok(ClusterModel {
        item_cluster,
        clusters,
        user_cluster,
        anchors,
        anchor_jaccard,
        fallback,
    })
}

/// Clusters the items by their raw features and picks one anchor per cluster.
pub fn mine_clusters(
    train: &InteractionGraph,
    labels: &ActivityLabels,
    l: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if l < 2 || l > train.num_items() {
        return Err(LsirError::Config(format!(
            "cluster count must lie in [2, {}], got {l}",
            train.num_items()
        )));
    }
    let km = kmeans(&train.item_features.to_dense(), l, seed)?;
    assign_clusters(train, labels, km.assignments, l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHeads {
    /// `Q` matrices `d × d` applied to both ends of a social edge.
    pub neighbor: Vec<Mat>,
    /// `Q` matrices `d × d` applied to anchor embeddings.
    pub anchor: Vec<Mat>,
}

impl SimilarityHeads {
    pub fn glorot(heads: usize, dim: usize, rng: &mut impl Rng) -> Self {
        SimilarityHeads {
            neighbor: (0..heads).map(|_| glorot(dim, dim, rng)).collect(),
            anchor: (0..heads).map(|_| glorot(dim, dim, rng)).collect(),
        }
    }

    pub(crate) fn on_tape(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            neighbor: self.neighbor.iter().map(|w| tape.param(w.clone())).collect(),
            anchor: self.anchor.iter().map(|w| tape.param(w.clone())).collect(),
        }
    }
}

pub(crate) struct HeadVars {
    pub neighbor: Vec<Var>,
    pub anchor: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// `3d × d`, applied to `[h ‖ e ‖ z]`.
    pub w: Mat,
    /// `1 × d`
    pub b: Mat,
}

impl FusionParams {
    pub fn glorot(dim: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            w: glorot(3 * dim, dim, rng),
            b: Mat::zeros((1, dim)),
        }
    }

    pub(crate) fn on_tape(&self, tape: &mut Tape) -> FusionVars {
        FusionVars {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }
}

pub(crate) struct FusionVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub r1: f64,
    pub r2: f64,
    /// Drop dissimilar neighbours; otherwise every neighbour is kept.
    pub prune_neighbors: bool,
    /// Link users to cluster anchors.
    pub add_anchors: bool,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LsirError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(LsirError::Config("at least one refinement iteration is needed".into()));
        }
        deletion_ratio(0, self.r1)?;
        addition_ratio(0, self.r2)?;
        Ok(())
    }
}

/// The social links used by one refinement iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedSocialGraph {
    /// Kept `(neighbour, weight)` pairs per user, strongest first.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Linked `(cluster, weight)` pairs per user, strongest first.
    pub anchors: Vec<Vec<(usize, f64)>>,
}

pub struct RefineContext<'a> {
    pub social: &'a SocialGraph,
    /// Supplies the interaction counts `|I(u)|`.
    pub train: &'a InteractionGraph,
    pub clusters: &'a ClusterModel,
}

struct DirectedEdges {
    offsets: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl DirectedEdges {
    fn new(social: &SocialGraph) -> Self {
        let mut e = DirectedEdges {
            offsets: Vec::with_capacity(social.num_users() + 1),
            src: Vec::new(),
            dst: Vec::new(),
        };
        for u in 0..social.num_users() {
            e.offsets.push(e.src.len());
            for &v in social.neighbors(u) {
                e.src.push(u);
                e.dst.push(v);
            }
        }
        e.offsets.push(e.src.len());
        e
    }
}

fn mean_vars(tape: &mut Tape, vars: Vec<Var>) -> Var {
    let n = vars.len() as f64;
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    tape.scale(acc, 1.0 / n)
}

fn frozen_edge_index(ctx: &RefineContext, edges: &DirectedEdges, u: usize, v: usize) -> Result<usize> {
    ctx.social
        .neighbors(u)
        .binary_search(&v)
        .map(|p| edges.offsets[u] + p)
        .map_err(|_| LsirError::Incompatible(format!("({u}, {v}) is not a social edge")))
}

/// Runs the refinement on the tape and returns the refined user embeddings
/// with the links chosen at every iteration. With `frozen` the links are
/// replayed instead of re-selected.
pub(crate) fn refine_on(
    tape: &mut Tape,
    h: Var,
    e0: Var,
    ctx: &RefineContext,
    heads: &HeadVars,
    fusion: &FusionVars,
    cfg: &RefineConfig,
    frozen: Option<&[RefinedSocialGraph]>,
) -> Result<(Var, Vec<RefinedSocialGraph>)> {
    cfg.validate()?;
    let m = ctx.social.num_users();
    if let Some(f) = frozen {
        if f.len() != cfg.iterations {
            return Err(LsirError::Incompatible("frozen topology has the wrong depth".into()));
        }
    }
    let edges = DirectedEdges::new(ctx.social);
    let counts: Vec<usize> = (0..m).map(|u| ctx.train.user_degree(u)).collect();
    let anchor_users = &ctx.clusters.anchors;
    let l = anchor_users.len();
    let mut cur = e0;
    let mut topology = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let normed: Vec<Var> = heads
            .neighbor
            .iter()
            .map(|&w| {
                let p = tape.matmul(cur, w);
                tape.row_normalize(p)
            })
            .collect();

        // user-user links
        let dots: Vec<Var> = normed
            .iter()
            .map(|&p| tape.pair_dot(p, p, edges.src.clone(), edges.dst.clone()))
            .collect();
        let edge_sims = mean_vars(tape, dots);
        let mut sel_idx = Vec::new();
        let mut neighbors = vec![Vec::new(); m];
        for u in 0..m {
            let picked: Vec<usize> = match frozen {
                Some(f) => f[t].neighbors[u]
                    .iter()
                    .map(|&(v, _)| frozen_edge_index(ctx, &edges, u, v))
                    .collect::<Result<_>>()?,
                None => {
                    let sims = tape.value(edge_sims);
                    let range = edges.offsets[u]..edges.offsets[u + 1];
                    let scored: Vec<(usize, f64)> = range.map(|k| (k, sims[[k, 0]])).collect();
                    if cfg.prune_neighbors {
                        let p_del = deletion_ratio(counts[u], cfg.r1)?;
                        retain_top(scored, p_del).into_iter().map(|(k, _)| k).collect()
                    } else {
                        scored.into_iter().map(|(k, _)| k).collect()
                    }
                }
            };
            let sims = tape.value(edge_sims);
            neighbors[u] = picked.iter().map(|&k| (edges.dst[k], sims[[k, 0]])).collect();
            sel_idx.extend(picked);
        }
        let src: Vec<usize> = sel_idx.iter().map(|&k| edges.src[k]).collect();
        let dst: Vec<usize> = sel_idx.iter().map(|&k| edges.dst[k]).collect();
        let w = tape.gather_flat(edge_sims, sel_idx);
        let mut msg = tape.aggregate(w, cur, src, dst, m);

        // user-anchor links
        let mut anchors = vec![Vec::new(); m];
        if cfg.add_anchors {
            let a = tape.gather_rows(cur, anchor_users.clone());
            let per_head: Vec<Var> = heads
                .anchor
                .iter()
                .zip(&normed)
                .map(|(&wc, &p)| {
                    let c = tape.matmul(a, wc);
                    let c = tape.row_normalize(c);
                    tape.matmul_t(p, c)
                })
                .collect();
            let anchor_sims = mean_vars(tape, per_head);
            let mut flat = Vec::new();
            let mut src = Vec::new();
            let mut dst = Vec::new();
            for u in 0..m {
                let picked: Vec<usize> = match frozen {
                    Some(f) => {
                        let ks: Vec<usize> = f[t].anchors[u].iter().map(|&(k, _)| k).collect();
                        if ks.iter().any(|&k| k >= l) {
                            return Err(LsirError::Incompatible("frozen anchor out of range".into()));
                        }
                        ks
                    }
                    None => {
                        let sims = tape.value(anchor_sims).row(u).to_vec();
                        let p_add = addition_ratio(counts[u], cfg.r2)?;
                        pick_anchors(u, anchor_users, &sims, p_add)
                            .into_iter()
                            .map(|(k, _)| k)
                            .collect()
                    }
                };
                let sims = tape.value(anchor_sims);
                anchors[u] = picked.iter().map(|&k| (k, sims[[u, k]])).collect();
                for k in picked {
                    flat.push(u * l + k);
                    src.push(u);
                    dst.push(k);
                }
            }
            let w = tape.gather_flat(anchor_sims, flat);
            let anchor_msg = tape.aggregate(w, a, src, dst, m);
            msg = tape.add(msg, anchor_msg);
        }

        let z = tape.lin(msg, cfg.alpha, cur, 1.0 - cfg.alpha);
        let cat = tape.concat_cols(&[h, cur, z]);
        let out = tape.matmul(cat, fusion.w);
        cur = tape.add_bias(out, fusion.b);
        topology.push(RefinedSocialGraph { neighbors, anchors });
    }
    Ok((cur, topology))
}

/// Refines readout user embeddings `e` given projected features `h`.
pub fn refine(
    h: &Mat,
    e: &Mat,
    ctx: &RefineContext,
    heads: &SimilarityHeads,
    fusion: &FusionParams,
    cfg: &RefineConfig,
) -> Result<(Mat, Vec<RefinedSocialGraph>)> {
    let d = e.ncols();
    let m = ctx.social.num_users();
    let heads_ok = !heads.neighbor.is_empty()
        && heads.neighbor.len() == heads.anchor.len()
        && heads.neighbor.iter().chain(&heads.anchor).all(|w| w.dim() == (d, d));
    if h.dim() != (m, d) || e.nrows() != m || !heads_ok || fusion.w.dim() != (3 * d, d) {
        return Err(LsirError::Shape("refinement inputs do not agree on shape".into()));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let ev = tape.constant(e.clone());
    let hvars = heads.on_tape(&mut tape);
    let fvars = fusion.on_tape(&mut tape);
    let (out, topo) = refine_on(&mut tape, hv, ev, ctx, &hvars, &fvars, cfg, None)?;
    Ok((tape.value(out).clone(), topo))
}
