//! Mimic learning: pseudo-inactive users built from active ones are pulled
//! towards the anchor of the active user's own cluster.

use ndarray::{Array1, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::ActivityLabels;
use crate::error::{LsirError, Result};
use crate::gsl::ClusterModel;
use crate::tape::{Mat, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MimicVariant {
    RandomMask,
    DistributionShift,
    #[default]
    InactiveMixture,
}

/// Zeroes each coordinate independently, keeping it with `keep_prob`.
pub fn random_mask(e: ArrayView1<f64>, keep_prob: f64, rng: &mut impl Rng) -> Result<Array1<f64>> {
    let keep = Bernoulli::new(keep_prob)
        .map_err(|_| LsirError::Config(format!("keep probability {keep_prob} is not in [0, 1]")))?;
    Ok(e.mapv(|x| if keep.sample(rng) { x } else { 0.0 }))
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Moments {
    pub fn of_rows(embeddings: &Mat, rows: &[usize]) -> Moments {
        let sel = embeddings.select(Axis(0), rows);
        let mean = sel.mean_axis(Axis(0)).expect("at least one row");
        let std = sel.std_axis(Axis(0), 0.0);
        Moments { mean, std }
    }
}

/// `(e - mu+) * phi- / phi+ + mu-`, per dimension. Dimensions without spread
/// among active users pass through unchanged.
pub fn distribution_shift(e: ArrayView1<f64>, active: &Moments, inactive: &Moments) -> Array1<f64> {
    let (scale, offset) = shift_coefficients(active, inactive);
    &e * &scale + &offset
}

fn shift_coefficients(active: &Moments, inactive: &Moments) -> (Array1<f64>, Array1<f64>) {
    let d = active.mean.len();
    let mut scale = Array1::ones(d);
    let mut offset = Array1::zeros(d);
    for k in 0..d {
        if active.std[k] > 0.0 {
            scale[k] = inactive.std[k] / active.std[k];
            offset[k] = inactive.mean[k] - scale[k] * active.mean[k];
        }
    }
    (scale, offset)
}

/// `beta * e+ + (1 - beta) * e-`.
pub fn inactive_mixture(e_active: ArrayView1<f64>, e_inactive: ArrayView1<f64>, beta: f64) -> Array1<f64> {
    &e_active * beta + &e_inactive * (1.0 - beta)
}

fn check_loss_args(rows: usize, targets: &[usize], clusters: usize, tau: f64) -> Result<()> {
    if clusters < 2 {
        return Err(LsirError::Config("mimic learning needs at least two clusters".into()));
    }
    if !(tau > 0.0) {
        return Err(LsirError::Config(format!("temperature must be positive, got {tau}")));
    }
    if rows != targets.len() || targets.iter().any(|&t| t >= clusters) {
        return Err(LsirError::Shape("mimic targets do not fit".into()));
    }
    Ok(())
}

/// Summed contrastive loss between pseudo-inactive rows and anchor rows,
/// measured by cosine over temperature. By default the positive term is left
/// out of the denominator; `standard` puts it back.
pub fn mimic_loss(pseudo: &Mat, targets: &[usize], anchors: &Mat, tau: f64, standard: bool) -> Result<f64> {
    check_loss_args(pseudo.nrows(), targets, anchors.nrows(), tau)?;
    let mut tape = Tape::new();
    let p = tape.constant(pseudo.clone());
    let a = tape.constant(anchors.clone());
    let loss = contrastive_on(&mut tape, p, a, targets.to_vec(), tau, standard);
    Ok(tape.scalar(loss))
}

fn contrastive_on(tape: &mut Tape, pseudo: Var, anchors: Var, targets: Vec<usize>, tau: f64, standard: bool) -> Var {
    let p = tape.row_normalize(pseudo);
    let a = tape.row_normalize(anchors);
    let logits = tape.matmul_t(p, a);
    tape.info_nce(logits, targets, tau, !standard)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MimicConfig {
    pub variant: MimicVariant,
    pub beta: f64,
    /// Pseudo-inactive samples per active user.
    pub eta: usize,
    pub keep_prob: f64,
    pub tau: f64,
    /// Include the positive term in the denominator.
    pub standard_infonce: bool,
}

impl MimicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(LsirError::Config("beta and keep_prob must lie in [0, 1]".into()));
        }
        if self.eta == 0 {
            return Err(LsirError::Config("eta must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(LsirError::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// How pseudo-inactive rows are produced from gathered active rows.
#[derive(Debug, Clone, PartialEq)]
pub enum PseudoTransform {
    Mixture { partners: Vec<usize>, beta: f64 },
    Mask(Mat),
    Shift { scale: Mat, offset: Mat },
}

/// The random and statistical choices behind one mimic loss evaluation,
/// fixed up front so the loss is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MimicPlan {
    /// Active user behind each pseudo row.
    pub sources: Vec<usize>,
    /// Cluster index of each pseudo row's positive anchor.
    pub targets: Vec<usize>,
    pub transform: PseudoTransform,
}

/// Plans pseudo-inactive samples for the given active users. Returns `None`
/// when there is nothing to mimic: no active users with a cluster, or no
/// inactive users to mix with or measure.
pub fn plan_mimic(
    cfg: &MimicConfig,
    actives: &[usize],
    clusters: &ClusterModel,
    labels: &ActivityLabels,
    embeddings: &Mat,
    rng: &mut impl Rng,
) -> Result<Option<MimicPlan>> {
    cfg.validate()?;
    let actives: Vec<usize> = actives
        .iter()
        .copied()
        .filter(|&u| clusters.user_cluster[u].is_some())
        .collect();
    let inactive = labels.inactive_users();
    if actives.is_empty() || inactive.is_empty() {
        return Ok(None);
    }
    let copies = match cfg.variant {
        MimicVariant::DistributionShift => 1,
        _ => cfg.eta,
    };
    let sources: Vec<usize> = actives
        .iter()
        .flat_map(|&u| std::iter::repeat_n(u, copies))
        .collect();
    let targets = sources
        .iter()
        .map(|&u| clusters.user_cluster[u].expect("filtered"))
        .collect();
    let d = embeddings.ncols();
    let transform = match cfg.variant {
        MimicVariant::InactiveMixture => PseudoTransform::Mixture {
            partners: (0..sources.len())
                .map(|_| inactive[rng.random_range(0..inactive.len())])
                .collect(),
            beta: cfg.beta,
        },
        MimicVariant::RandomMask => {
            let keep = Bernoulli::new(cfg.keep_prob).expect("validated");
            PseudoTransform::Mask(Mat::from_shape_fn((sources.len(), d), |_| {
                if keep.sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }))
        }
        MimicVariant::DistributionShift => {
            let active = Moments::of_rows(embeddings, &labels.active_users());
            let inactive = Moments::of_rows(embeddings, &inactive);
            let (scale, offset) = shift_coefficients(&active, &inactive);
            PseudoTransform::Shift {
                scale: scale.insert_axis(Axis(0)),
                offset: offset.insert_axis(Axis(0)),
            }
        }
    };
    Ok(Some(MimicPlan {
        sources,
        targets,
        transform,
    }))
}

/// Mimic loss on the tape. `users` supplies the rows that are turned into
/// pseudo-inactive samples and `anchor_source` the rows of the anchors.
pub(crate) fn mimic_loss_on(
    tape: &mut Tape,
    users: Var,
    anchor_source: Var,
    plan: &MimicPlan,
    clusters: &ClusterModel,
    cfg: &MimicConfig,
) -> Result<Var> {
    check_loss_args(plan.sources.len(), &plan.targets, clusters.len(), cfg.tau)?;
    let base = tape.gather_rows(users, plan.sources.clone());
    let pseudo = match &plan.transform {
        PseudoTransform::Mixture { partners, beta } => {
            let other = tape.gather_rows(users, partners.clone());
            tape.lin(base, *beta, other, 1.0 - beta)
        }
        PseudoTransform::Mask(mask) => tape.mul_const(base, mask.clone()),
        PseudoTransform::Shift { scale, offset } => {
            let scaled = tape.mul_const(base, scale.clone());
            tape.add_const(scaled, offset.clone())
        }
    };
    let anchors = tape.gather_rows(anchor_source, clusters.anchors.clone());
    Ok(contrastive_on(tape, pseudo, anchors, plan.targets.clone(), cfg.tau, cfg.standard_infonce))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixture_of_orthogonal_units() {
        let out = inactive_mixture(array![1.0, 0.0].view(), array![0.0, 1.0].view(), 0.5);
        assert_eq!(out, array![0.5, 0.5]);
    }

    #[test]
    fn mask_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = array![1.0, -2.0, 3.0];
        assert_eq!(random_mask(e.view(), 1.0, &mut rng).unwrap(), e);
        assert_eq!(random_mask(e.view(), 0.0, &mut rng).unwrap(), Array1::<f64>::zeros(3));
        assert!(random_mask(e.view(), 1.5, &mut rng).is_err());
    }

    #[test]
    fn shift_matches_moments() {
        let active = Moments {
            mean: array![1.0, 2.0],
            std: array![2.0, 0.0],
        };
        let inactive = Moments {
            mean: array![-1.0, 5.0],
            std: array![1.0, 3.0],
        };
        let out = distribution_shift(array![3.0, 7.0].view(), &active, &inactive);
        // first dim: (3 - 1) / 2 * 1 - 1; second dim has no active spread
        assert_eq!(out, array![0.0, 7.0]);
    }

    #[test]
    fn loss_closed_forms() {
        let anchors = array![[1.0, 0.0], [0.0, 1.0]];
        let pseudo = array![[1.0, 0.0], [0.0, 2.0]];
        let tau = 0.5;
        let as_written = mimic_loss(&pseudo, &[0, 1], &anchors, tau, false).unwrap();
        // each row: -(1 / tau) + (0 / tau)
        assert!((as_written - 2.0 * -2.0).abs() < 1e-12);
        let standard = mimic_loss(&pseudo, &[0, 1], &anchors, tau, true).unwrap();
        let row = -(2f64.exp() / (2f64.exp() + 1.0)).ln();
        assert!((standard - 2.0 * row).abs() < 1e-12);
        assert!(mimic_loss(&pseudo, &[0, 1], &anchors.slice(ndarray::s![..1, ..]).to_owned(), tau, false).is_err());
    }
}
