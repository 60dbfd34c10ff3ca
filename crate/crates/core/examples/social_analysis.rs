//! Relation-quality statistics: shared-item rates per relation class,
//! degree histograms, and overlap changes on newly formed links.

use lsir::analysis::{degree_distribution, jaccard_delta, nonzero_jaccard_rate, RelationClassReport};
use lsir::data::{generate_snapshots, SynthConfig};

fn show(title: &str, r: &RelationClassReport) {
    println!("{title}");
    for (name, s) in [
        ("inac-inac", &r.inac_inac),
        ("inac-ac", &r.inac_ac),
        ("ac-ac", &r.ac_ac),
        ("random", &r.rand),
    ] {
        println!("  {name:10} {:5} pairs  {:.4}", s.pairs, s.value);
    }
}

fn main() -> lsir::Result<()> {
    let snap = generate_snapshots(&SynthConfig::default(), 300, 2, 0.6, 0.2, 1)?;
    let ds = &snap.first;

    show(
        "share of pairs with a common item",
        &nonzero_jaccard_rate(&ds.social, &ds.graph, &ds.labels, 0),
    );

    let hist = degree_distribution(&ds.social, &ds.labels, &[5, 10, 20])?;
    println!("social degree histogram");
    for (k, b) in hist.buckets.iter().enumerate() {
        println!("  {b:10} active {:.3}  inactive {:.3}", hist.active[k], hist.inactive[k]);
    }

    let delta = jaccard_delta(&snap.new_edges, &ds.social, &ds.graph, &snap.second, &ds.labels, 0)?;
    show("mean overlap change on new links", &delta);
    Ok(())
}
