//! The full recommender: parameters, forward pass and training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AnchorSource, TrainConfig};
use crate::data::{ActivityLabels, InteractionGraph, SocialGraph};
use crate::encoder::{self, BipartiteAdjacency, ProjectionParams, ProjectionVars};
use crate::error::{LsirError, Result};
use crate::gsl::{
    self, ClusterModel, FusionParams, FusionVars, HeadVars, RefineContext, RefinedSocialGraph,
    SimilarityHeads,
};
use crate::mimic::{self, MimicPlan};
use crate::tape::{Mat, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub user_proj: ProjectionParams,
    pub item_proj: ProjectionParams,
    pub heads: SimilarityHeads,
    pub fusion: FusionParams,
}

impl ModelParams {
    pub fn init(cfg: &TrainConfig, user_width: usize, item_width: usize, rng: &mut impl Rng) -> Self {
        ModelParams {
            user_proj: ProjectionParams::glorot(user_width, cfg.hidden(), cfg.dim, rng),
            item_proj: ProjectionParams::glorot(item_width, cfg.hidden(), cfg.dim, rng),
            heads: SimilarityHeads::glorot(cfg.heads, cfg.dim, rng),
            fusion: FusionParams::glorot(cfg.dim, rng),
        }
    }

    /// Every learnable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (side, p) in [("user", &self.user_proj), ("item", &self.item_proj)] {
            out.push((format!("{side}_proj.w0"), &p.w0));
            out.push((format!("{side}_proj.b0"), &p.b0));
            out.push((format!("{side}_proj.w1"), &p.w1));
            out.push((format!("{side}_proj.b1"), &p.b1));
            out.push((format!("{side}_proj.slope"), &p.slope));
        }
        for (q, w) in self.heads.neighbor.iter().enumerate() {
            out.push((format!("heads.neighbor.{q}"), w));
        }
        for (q, w) in self.heads.anchor.iter().enumerate() {
            out.push((format!("heads.anchor.{q}"), w));
        }
        out.push(("fusion.w".into(), &self.fusion.w));
        out.push(("fusion.b".into(), &self.fusion.b));
        out
    }

    /// Mutable view in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for p in [&mut self.user_proj, &mut self.item_proj] {
            out.push(&mut p.w0);
            out.push(&mut p.b0);
            out.push(&mut p.w1);
            out.push(&mut p.b1);
            out.push(&mut p.slope);
        }
        out.extend(self.heads.neighbor.iter_mut());
        out.extend(self.heads.anchor.iter_mut());
        out.push(&mut self.fusion.w);
        out.push(&mut self.fusion.b);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn on_tape(&self, tape: &mut Tape) -> ParamVars {
        let user = self.user_proj.on_tape(tape);
        let item = self.item_proj.on_tape(tape);
        let heads = self.heads.on_tape(tape);
        let fusion = self.fusion.on_tape(tape);
        let mut all = user.all().to_vec();
        all.extend(item.all());
        all.extend(&heads.neighbor);
        all.extend(&heads.anchor);
        all.extend([fusion.w, fusion.b]);
        ParamVars {
            user,
            item,
            heads,
            fusion,
            all,
        }
    }

    fn check(&self, cfg: &TrainConfig, data: &ModelData) -> Result<()> {
        let d = cfg.dim;
        let ok = self.user_proj.w0.nrows() == data.train.user_features.width()
            && self.item_proj.w0.nrows() == data.train.item_features.width()
            && self.user_proj.output_dim() == d
            && self.item_proj.output_dim() == d
            && self.heads.neighbor.len() == cfg.heads
            && self.heads.anchor.len() == cfg.heads
            && self.fusion.w.dim() == (3 * d, d);
        if ok {
            Ok(())
        } else {
            Err(LsirError::Shape("parameters do not match the configuration and data".into()))
        }
    }
}

struct ParamVars {
    user: ProjectionVars,
    item: ProjectionVars,
    heads: HeadVars,
    fusion: FusionVars,
    all: Vec<Var>,
}

/// Graphs and mined clusters the model runs on.
pub struct ModelData<'a> {
    pub train: &'a InteractionGraph,
    pub social: &'a SocialGraph,
    pub labels: &'a ActivityLabels,
    pub clusters: &'a ClusterModel,
    adj: BipartiteAdjacency,
}

impl<'a> ModelData<'a> {
    pub fn new(
        train: &'a InteractionGraph,
        social: &'a SocialGraph,
        labels: &'a ActivityLabels,
        clusters: &'a ClusterModel,
    ) -> Result<Self> {
        let m = train.num_users();
        if social.num_users() != m || labels.len() != m || clusters.user_cluster.len() != m {
            return Err(LsirError::Shape("graphs, labels and clusters disagree on users".into()));
        }
        if clusters.item_cluster.len() != train.num_items() {
            return Err(LsirError::Shape("clusters were mined on a different item set".into()));
        }
        Ok(ModelData {
            train,
            social,
            labels,
            clusters,
            adj: BipartiteAdjacency::new(train),
        })
    }
}

/// Sampled `(user, positive, negative)` triples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleBatch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Final embeddings of one forward pass.
#[derive(Debug, Clone)]
pub struct Embeddings {
    /// Refined user embeddings used for scoring.
    pub users: Mat,
    pub items: Mat,
    /// User embeddings before social refinement.
    pub readout_users: Mat,
    pub projected_users: Mat,
    pub topology: Vec<RefinedSocialGraph>,
}

impl Embeddings {
    pub fn score(&self, u: usize, i: usize) -> f64 {
        self.users.row(u).dot(&self.items.row(i))
    }
}

struct Forward {
    tape: Tape,
    vars: ParamVars,
    projected_users: Var,
    readout_users: Var,
    users: Var,
    items: Var,
    topology: Vec<RefinedSocialGraph>,
}

fn forward(
    cfg: &TrainConfig,
    params: &ModelParams,
    data: &ModelData,
    frozen: Option<&[RefinedSocialGraph]>,
) -> Result<Forward> {
    params.check(cfg, data)?;
    let mut tape = Tape::new();
    let vars = params.on_tape(&mut tape);
    let hu = encoder::project_on(&mut tape, &data.train.user_features, &vars.user);
    let hi = encoder::project_on(&mut tape, &data.train.item_features, &vars.item);
    let stack = encoder::propagate_on(&mut tape, hu, hi, &data.adj, cfg.layers);
    let (eu, ei) = encoder::readout_on(&mut tape, &stack, cfg.readout_scale);
    let ctx = RefineContext {
        social: data.social,
        train: data.train,
        clusters: data.clusters,
    };
    let refine = cfg.refine();
    let (users, topology) =
        gsl::refine_on(&mut tape, hu, eu, &ctx, &vars.heads, &vars.fusion, &refine, frozen)?;
    Ok(Forward {
        tape,
        vars,
        projected_users: hu,
        readout_users: eu,
        users,
        items: ei,
        topology,
    })
}

/// Runs the model without the loss.
pub fn embed(cfg: &TrainConfig, params: &ModelParams, data: &ModelData) -> Result<Embeddings> {
    let f = forward(cfg, params, data, None)?;
    Ok(Embeddings {
        users: f.tape.value(f.users).clone(),
        items: f.tape.value(f.items).clone(),
        readout_users: f.tape.value(f.readout_users).clone(),
        projected_users: f.tape.value(f.projected_users).clone(),
        topology: f.topology,
    })
}

/// Discrete choices of one objective evaluation: the selected links and the
/// pseudo-inactive sampling plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Frozen {
    pub topology: Vec<RefinedSocialGraph>,
    pub mimic: Option<MimicPlan>,
}

#[derive(Debug, Clone)]
pub struct Objective {
    /// Ranking loss including the regulariser.
    pub bpr: f64,
    /// Unweighted mimic loss, zero when inactive.
    pub mimic: f64,
    /// `bpr + xi * mimic`.
    pub total: f64,
    /// Gradients in [`ModelParams::tensors`] order: of the total, or of the
    /// ranking loss alone when a separate mimic step size is configured.
    pub grads: Vec<Mat>,
    /// Gradients of `xi * mimic` when a separate mimic step size is configured.
    pub mimic_grads: Option<Vec<Mat>>,
    pub frozen: Frozen,
}

struct Terms {
    bpr: Var,
    mimic: Option<Var>,
    total: Var,
}

fn build_terms(
    cfg: &TrainConfig,
    f: &mut Forward,
    data: &ModelData,
    batch: &TripleBatch,
    plan: Option<&MimicPlan>,
) -> Result<Terms> {
    let tape = &mut f.tape;
    let pos = tape.pair_dot(f.users, f.items, batch.users.clone(), batch.pos.clone());
    let neg = tape.pair_dot(f.users, f.items, batch.users.clone(), batch.neg.clone());
    let diff = tape.sub(pos, neg);
    let data_term = tape.neg_log_sigmoid_sum(diff);
    let mut reg = tape.sum_squares(f.vars.all[0]);
    for &p in &f.vars.all[1..] {
        let s = tape.sum_squares(p);
        reg = tape.add(reg, s);
    }
    let bpr = tape.lin(data_term, 1.0, reg, cfg.lambda);
    let mimic = match plan {
        Some(plan) => {
            let anchors = match cfg.mimic_anchor_source {
                AnchorSource::Readout => f.readout_users,
                AnchorSource::Refined => f.users,
            };
            let mcfg = cfg.mimic();
            Some(mimic::mimic_loss_on(tape, f.readout_users, anchors, plan, data.clusters, &mcfg)?)
        }
        None => None,
    };
    let total = match mimic {
        Some(l) => tape.lin(bpr, 1.0, l, cfg.xi),
        None => bpr,
    };
    Ok(Terms { bpr, mimic, total })
}

fn check_batch(data: &ModelData, batch: &TripleBatch) -> Result<()> {
    let (m, n) = (data.train.num_users(), data.train.num_items());
    let ok = batch.pos.len() == batch.len()
        && batch.neg.len() == batch.len()
        && batch.users.iter().all(|&u| u < m)
        && batch.pos.iter().chain(&batch.neg).all(|&i| i < n);
    if ok {
        Ok(())
    } else {
        Err(LsirError::Shape("triple batch does not fit the graph".into()))
    }
}

fn batch_actives(batch: &TripleBatch, labels: &ActivityLabels) -> Vec<usize> {
    let mut users: Vec<usize> = batch.users.iter().copied().filter(|&u| !labels.is_inactive(u)).collect();
    users.sort_unstable();
    users.dedup();
    users
}

fn prepare(
    cfg: &TrainConfig,
    params: &ModelParams,
    data: &ModelData,
    batch: &TripleBatch,
    frozen: Option<&Frozen>,
    rng: &mut impl Rng,
) -> Result<(Forward, Option<MimicPlan>, Terms)> {
    check_batch(data, batch)?;
    let mut f = forward(cfg, params, data, frozen.map(|fr| fr.topology.as_slice()))?;
    let plan = match frozen {
        Some(fr) => fr.mimic.clone(),
        None if cfg.ablation.uses_mimic() => {
            let e = f.tape.value(f.readout_users).clone();
            let actives = batch_actives(batch, data.labels);
            mimic::plan_mimic(&cfg.mimic(), &actives, data.clusters, data.labels, &e, rng)?
        }
        None => None,
    };
    let terms = build_terms(cfg, &mut f, data, batch, plan.as_ref())?;
    Ok((f, plan, terms))
}

/// Total loss only; with `frozen` every discrete choice is replayed.
pub fn loss(
    cfg: &TrainConfig,
    params: &ModelParams,
    data: &ModelData,
    batch: &TripleBatch,
    frozen: &Frozen,
) -> Result<f64> {
    // every random choice is replayed from `frozen`
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (f, _, terms) = prepare(cfg, params, data, batch, Some(frozen), &mut unused)?;
    Ok(f.tape.scalar(terms.total))
}

fn collect_grads(f: &Forward, root: Var, names: &[String]) -> Result<Vec<Mat>> {
    let g = f.tape.backward(root);
    let grads: Vec<Mat> = f.vars.all.iter().map(|&v| g.get_or_zeros(&f.tape, v)).collect();
    for (name, grad) in names.iter().zip(&grads) {
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(LsirError::NonFiniteGradient { param: name.clone() });
        }
    }
    Ok(grads)
}

/// Loss and gradients for one batch. Discrete choices are made afresh unless
/// `frozen` is given.
pub fn objective(
    cfg: &TrainConfig,
    params: &ModelParams,
    data: &ModelData,
    batch: &TripleBatch,
    frozen: Option<&Frozen>,
    rng: &mut impl Rng,
) -> Result<Objective> {
    let (mut f, plan, terms) = prepare(cfg, params, data, batch, frozen, rng)?;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let (grads, mimic_grads) = match (cfg.mimic_lr, terms.mimic) {
        (Some(_), Some(ml)) => {
            let side = f.tape.scale(ml, cfg.xi);
            (
                collect_grads(&f, terms.bpr, &names)?,
                Some(collect_grads(&f, side, &names)?),
            )
        }
        _ => (collect_grads(&f, terms.total, &names)?, None),
    };
    Ok(Objective {
        bpr: f.tape.scalar(terms.bpr),
        mimic: terms.mimic.map_or(0.0, |v| f.tape.scalar(v)),
        total: f.tape.scalar(terms.total),
        grads,
        mimic_grads,
        frozen: Frozen {
            topology: f.topology,
            mimic: plan,
        },
    })
}
