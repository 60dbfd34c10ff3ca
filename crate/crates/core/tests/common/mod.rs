#![allow(dead_code)]

use lsir::config::{Ablation, TrainConfig};
use lsir::data::{
    label_activity, ActivityLabels, ActivityPolicy, Features, InteractionGraph, SocialGraph,
};
use lsir::gsl::{mine_clusters, ClusterModel};
use lsir::mimic::MimicVariant;
use lsir::model::{loss, objective, Frozen, ModelData, ModelParams, TripleBatch};
use lsir::tape::Mat;
use lsir::training::sample_triples;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_mat(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Six users (three active, three inactive), eight items, a small friendship
/// graph and three-dimensional item features.
pub struct Toy {
    pub train: InteractionGraph,
    pub social: SocialGraph,
    pub labels: ActivityLabels,
    pub clusters: ClusterModel,
}

pub fn toy(dense_users: bool, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = [
        (0, 0),
        (0, 1),
        (0, 2),
        (0, 5),
        (1, 3),
        (1, 4),
        (1, 6),
        (1, 7),
        (2, 0),
        (2, 3),
        (2, 5),
        (2, 7),
        (3, 1),
        (4, 4),
        (4, 6),
        (5, 2),
    ];
    let uf = if dense_users {
        Features::Dense(random_mat(6, 3, 1.0, &mut rng))
    } else {
        Features::Identity(6)
    };
    let mut items = random_mat(8, 3, 0.3, &mut rng);
    for i in 0..8 {
        items[[i, 0]] += if i < 4 { 2.0 } else { -2.0 };
    }
    let train = InteractionGraph::from_pairs(6, 8, pairs, uf, Features::Dense(items))
        .unwrap()
        .0;
    let social = SocialGraph::from_edges(
        6,
        [(0, 1), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (3, 5), (0, 5)],
        true,
    )
    .unwrap();
    let labels = label_activity(&train, ActivityPolicy::Threshold(3)).unwrap();
    let clusters = mine_clusters(&train, &labels, 2, seed).unwrap();
    Toy {
        train,
        social,
        labels,
        clusters,
    }
}

pub fn toy_config(ablation: Ablation, variant: MimicVariant) -> TrainConfig {
    TrainConfig {
        dim: 4,
        layers: 2,
        heads: 2,
        iterations: 1,
        clusters: 2,
        lambda: 1e-2,
        xi: 0.5,
        tau: 0.5,
        eta: 2,
        ablation,
        mimic_variant: variant,
        ..TrainConfig::default()
    }
}

pub fn toy_params(cfg: &TrainConfig, toy: &Toy, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(
        cfg,
        toy.train.user_features.width(),
        toy.train.item_features.width(),
        &mut rng,
    );
    // non-trivial biases and slopes so every path carries gradient
    for t in p.tensors_mut() {
        if t.nrows() == 1 {
            t.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
    }
    p
}

pub fn full_batch(train: &InteractionGraph, seed: u64) -> TripleBatch {
    sample_triples(train, usize::MAX, seed).remove(0)
}

#[derive(Debug)]
pub struct GroupError {
    pub name: String,
    pub rel_err: f64,
    pub analytic_norm: f64,
}

/// Central finite differences against the analytic gradient of the total
/// loss, with every discrete choice frozen at the unperturbed point.
pub fn finite_difference_check(
    cfg: &TrainConfig,
    params: &ModelParams,
    data: &ModelData,
    batch: &TripleBatch,
    h: f64,
) -> (Vec<GroupError>, Frozen) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let obj = objective(cfg, params, data, batch, None, &mut rng).unwrap();
    let frozen = obj.frozen.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (g, (k, name)) in obj.grads.iter().zip(names.iter().enumerate()) {
        let mut numeric = Mat::zeros(g.raw_dim());
        for idx in 0..g.len() {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let t = &mut p.tensors_mut()[k];
                let cols = t.ncols();
                t[[idx / cols, idx % cols]] += delta;
                loss(cfg, &p, data, batch, &frozen).unwrap()
            };
            let cols = g.ncols();
            numeric[[idx / cols, idx % cols]] = (shifted(h) - shifted(-h)) / (2.0 * h);
        }
        let diff = (g - &numeric).mapv(|x| x * x).sum().sqrt();
        let na = g.mapv(|x| x * x).sum().sqrt();
        let nn = numeric.mapv(|x| x * x).sum().sqrt();
        out.push(GroupError {
            name: name.clone(),
            rel_err: diff / na.max(nn).max(1e-7),
            analytic_norm: na,
        });
    }
    (out, frozen)
}

/// Dense symmetric-normalised adjacency of the bipartite graph, users first.
pub fn dense_normalized_adjacency(g: &InteractionGraph) -> Mat {
    let (m, n) = (g.num_users(), g.num_items());
    let mut a = Mat::zeros((m + n, m + n));
    for (u, i) in g.pairs() {
        let w = 1.0 / ((g.user_degree(u) * g.item_degree(i)) as f64).sqrt();
        a[[u, m + i]] = w;
        a[[m + i, u]] = w;
    }
    a
}

/// Random bipartite graph with identity features; every user and item may
/// end up isolated.
pub fn random_graph(m: usize, n: usize, density: f64, rng: &mut impl Rng) -> InteractionGraph {
    let mut pairs = Vec::new();
    for u in 0..m {
        for i in 0..n {
            if rng.random_bool(density) {
                pairs.push((u, i));
            }
        }
    }
    InteractionGraph::from_pairs(m, n, pairs, Features::Identity(m), Features::Identity(n))
        .unwrap()
        .0
}

/// Layer-by-layer propagation with the dense adjacency: `X_{k+1} = A X_k`
/// over the stacked `[users; items]` matrix.
pub fn dense_propagation(g: &InteractionGraph, users: &Mat, items: &Mat, layers: usize) -> Vec<Mat> {
    let a = dense_normalized_adjacency(g);
    let mut x = ndarray::concatenate(ndarray::Axis(0), &[users.view(), items.view()]).unwrap();
    let mut out = vec![x.clone()];
    for _ in 0..layers {
        x = a.dot(&x);
        out.push(x.clone());
    }
    out
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Refinement of a small planted-topic dataset under random parameters.
pub struct RefineRun {
    pub ds: lsir::data::SyntheticDataset,
    pub clusters: ClusterModel,
    pub cfg: lsir::gsl::RefineConfig,
    pub topology: Vec<lsir::gsl::RefinedSocialGraph>,
    /// Similarity of every directed edge at the first iteration, from an
    /// unpruned run with the same inputs.
    pub all_first: lsir::gsl::RefinedSocialGraph,
}

pub fn refine_run(seed: u64) -> RefineRun {
    use lsir::data::{generate_synthetic, SynthConfig};
    use lsir::gsl::{refine, FusionParams, RefineConfig, RefineContext, SimilarityHeads};
    let synth = SynthConfig {
        users_per_topic: 30,
        items_per_topic: 40,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&synth, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 8;
    let m = ds.graph.num_users();
    let clusters = mine_clusters(&ds.graph, &ds.labels, 6, seed).unwrap();
    let h = random_mat(m, d, 1.0, &mut rng);
    let e = random_mat(m, d, 1.0, &mut rng);
    let heads = SimilarityHeads::glorot(2, d, &mut rng);
    let fusion = FusionParams::glorot(d, &mut rng);
    let ctx = RefineContext {
        social: &ds.social,
        train: &ds.graph,
        clusters: &clusters,
    };
    let cfg = RefineConfig {
        alpha: 0.5,
        iterations: 2,
        r1: 2.0 + (seed % 5) as f64 * 5.0,
        r2: 10.0,
        prune_neighbors: true,
        add_anchors: true,
    };
    let (_, topology) = refine(&h, &e, &ctx, &heads, &fusion, &cfg).unwrap();
    let open = RefineConfig {
        prune_neighbors: false,
        iterations: 1,
        ..cfg.clone()
    };
    let (_, mut all) = refine(&h, &e, &ctx, &heads, &fusion, &open).unwrap();
    RefineRun {
        ds,
        clusters,
        cfg,
        topology,
        all_first: all.remove(0),
    }
}

/// Checks the per-user link counts after every iteration, the top-score
/// property of the first iteration, and bit-exact similarity symmetry.
pub fn check_selection(run: &RefineRun) -> Result<(), String> {
    use lsir::gsl::{addition_ratio, anchor_count, deletion_ratio, retained_count};
    let g = &run.ds.graph;
    let l = run.clusters.anchors.len();
    for (t, topo) in run.topology.iter().enumerate() {
        for u in 0..g.num_users() {
            let c = g.user_degree(u);
            let deg = run.ds.social.degree(u);
            let want = retained_count(deg, deletion_ratio(c, run.cfg.r1).unwrap());
            if topo.neighbors[u].len() != want {
                return Err(format!("iter {t} user {u}: {} neighbours, want {want}", topo.neighbors[u].len()));
            }
            let own = run.clusters.anchors.iter().filter(|&&a| a == u).count();
            let want = anchor_count(l, addition_ratio(c, run.cfg.r2).unwrap()).min(l - own);
            if topo.anchors[u].len() != want {
                return Err(format!("iter {t} user {u}: {} anchors, want {want}", topo.anchors[u].len()));
            }
            if topo.anchors[u].iter().any(|&(k, _)| run.clusters.anchors[k] == u) {
                return Err(format!("iter {t} user {u} anchored to itself"));
            }
            for &(v, _) in &topo.neighbors[u] {
                if !run.ds.social.has_edge(u, v) {
                    return Err(format!("iter {t}: kept non-edge ({u}, {v})"));
                }
            }
        }
    }
    let all = &run.all_first;
    for u in 0..g.num_users() {
        let kept = &run.topology[0].neighbors[u];
        let floor = kept.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        for &(v, s) in &all.neighbors[u] {
            if !kept.iter().any(|x| x.0 == v) && s > floor {
                return Err(format!("user {u} dropped {v} with similarity {s} above {floor}"));
            }
            let back = all.neighbors[v].iter().find(|x| x.0 == u).ok_or("asymmetric graph")?;
            if back.1.to_bits() != s.to_bits() {
                return Err(format!("similarity ({u}, {v}) = {s:e} but ({v}, {u}) = {:e}", back.1));
            }
        }
    }
    Ok(())
}
