//! Generates the planted-topic dataset and writes it as TSV files.
//!
//! `cargo run --example synthetic_dataset -- /tmp/lsir-data`

use lsir::data::{generate_synthetic, write_dataset, IdMap, SynthConfig};

fn main() -> lsir::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-data".into());
    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg, 0)?;
    let g = &ds.graph;
    println!(
        "{} users, {} items, {} interactions, {} social edges, {} inactive",
        g.num_users(),
        g.num_items(),
        g.num_interactions(),
        ds.social.num_edges(),
        ds.labels.inactive_users().len()
    );
    let same_topic = ds
        .social
        .edges()
        .iter()
        .filter(|&&(u, v)| ds.user_topic[u] == ds.user_topic[v])
        .count();
    println!("{same_topic} of the edges join users of the same topic");
    write_dataset(
        out.as_ref(),
        g,
        &ds.social,
        &IdMap::identity(g.num_users(), g.num_items()),
    )?;
    println!("written to {out}");
    Ok(())
}
