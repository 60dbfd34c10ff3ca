//! Feature projection followed by normalised propagation on the user-item
//! graph, and the layer-mean readout.

use lsir::data::{Features, InteractionGraph};
use lsir::encoder::{project, propagate, readout, ProjectionParams, ReadoutScale};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsir::Result<()> {
    let pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3)];
    let g = InteractionGraph::from_pairs(3, 4, pairs, Features::Identity(3), Features::Identity(4))?.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let users = project(&g.user_features, &ProjectionParams::glorot(3, 4, 4, &mut rng))?;
    let items = project(&g.item_features, &ProjectionParams::glorot(4, 4, 4, &mut rng))?;

    let stack = propagate(&users, &items, &g, 3)?;
    for (k, layer) in stack.users.iter().enumerate() {
        println!("layer {k}, user 0: {:.4}", layer.row(0));
    }
    let (e_users, e_items) = readout(&stack, ReadoutScale::Mean);
    println!("readout user 0: {:.4}", e_users.row(0));
    println!("score(user 0, item 1) = {:.4}", e_users.row(0).dot(&e_items.row(1)));
    Ok(())
}
