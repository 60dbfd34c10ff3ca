//! The three ways of turning an active user into a pseudo-inactive one, and
//! the contrastive loss against interest-cluster anchors.

use lsir::mimic::{distribution_shift, inactive_mixture, mimic_loss, random_mask, Moments};
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsir::Result<()> {
    let active = array![[1.0, 2.0, 0.5], [0.8, 1.5, 0.2], [1.2, 2.5, 0.9]];
    let inactive = array![[0.1, 0.3, 0.0], [0.2, 0.1, 0.1]];
    let e = active.row(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    println!("active user      {e:.3}");
    println!("inactive mixture {:.3}", inactive_mixture(e, inactive.row(0), 0.5));
    println!("random mask      {:.3}", random_mask(e, 0.5, &mut rng)?);
    let shifted = distribution_shift(e, &Moments::of_rows(&active, &[0, 1, 2]), &Moments::of_rows(&inactive, &[0, 1]));
    println!("moment shift     {shifted:.3}");

    let anchors = array![[1.0, 2.0, 0.5], [-1.0, 0.0, 1.0]];
    let pseudo = inactive_mixture(e, inactive.row(0), 0.5).insert_axis(ndarray::Axis(0));
    for standard in [false, true] {
        let l = mimic_loss(&pseudo, &[0], &anchors, 0.2, standard)?;
        println!("loss towards own cluster (standard denominator: {standard}): {l:.4}");
    }
    Ok(())
}
