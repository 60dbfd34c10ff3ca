//! One pass of social graph refinement with untrained parameters: how many
//! friends each user keeps and how many interest-cluster anchors they gain,
//! as a function of their interaction count.

use lsir::data::{generate_synthetic, SynthConfig};
use lsir::encoder::{project, propagate, readout, ProjectionParams, ReadoutScale};
use lsir::gsl::{mine_clusters, refine, FusionParams, RefineConfig, RefineContext, SimilarityHeads};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsir::Result<()> {
    let ds = generate_synthetic(&SynthConfig::default(), 3)?;
    let g = &ds.graph;
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = project(&g.user_features, &ProjectionParams::glorot(g.user_features.width(), d, d, &mut rng))?;
    let x = project(&g.item_features, &ProjectionParams::glorot(g.item_features.width(), d, d, &mut rng))?;
    let (e, _) = readout(&propagate(&h, &x, g, 3)?, ReadoutScale::Mean);

    let clusters = mine_clusters(g, &ds.labels, 12, 3)?;
    let ctx = RefineContext {
        social: &ds.social,
        train: g,
        clusters: &clusters,
    };
    let cfg = RefineConfig {
        alpha: 0.5,
        iterations: 1,
        r1: 10.0,
        r2: 10.0,
        prune_neighbors: true,
        add_anchors: true,
    };
    let heads = SimilarityHeads::glorot(2, d, &mut rng);
    let fusion = FusionParams::glorot(d, &mut rng);
    let (refined, topology) = refine(&h, &e, &ctx, &heads, &fusion, &cfg)?;
    println!("refined embeddings: {:?}", refined.dim());

    let t = &topology[0];
    let mut users: Vec<usize> = (0..g.num_users()).collect();
    users.sort_by_key(|&u| g.user_degree(u));
    println!("{:>5} {:>12} {:>8} {:>8}", "user", "interactions", "friends", "anchors");
    for &u in users.iter().step_by(25) {
        println!(
            "{u:>5} {:>12} {:>3} of {:<3} {:>8}",
            g.user_degree(u),
            t.neighbors[u].len(),
            ds.social.degree(u),
            t.anchors[u].len()
        );
    }
    Ok(())
}
