//! Triple sampling, optimisation and checkpoints.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::data::{
    label_activity, split_train_test, write_atomic, ActivityLabels, DatasetSplit, InteractionGraph,
    SocialGraph,
};
use crate::error::{LsirError, Result};
use crate::gsl::{mine_clusters, ClusterModel};
use crate::model::{objective, ModelData, ModelParams, TripleBatch};
use crate::tape::Mat;

pub const CHECKPOINT_FORMAT: &str = "lsir-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const STREAM_INIT: u64 = 1;
const STREAM_SAMPLING: u64 = 2;
const STREAM_MIMIC: u64 = 3;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One `(u, i, i')` triple per training interaction, shuffled and cut into
/// batches. Negatives are drawn uniformly from the items `u` has not
/// interacted with; users who interacted with every item are skipped.
pub fn sample_epoch(train: &InteractionGraph, batch_size: usize, rng: &mut impl Rng) -> Vec<TripleBatch> {
    let n = train.num_items();
    let mut triples = Vec::with_capacity(train.num_interactions());
    for u in 0..train.num_users() {
        let items = train.items_of(u);
        if items.is_empty() {
            continue;
        }
        if items.len() == n {
            log::warn!("user {u} interacted with every item, no negative exists");
            continue;
        }
        for &i in items {
            let neg = loop {
                let j = rng.random_range(0..n);
                if !train.contains(u, j) {
                    break j;
                }
            };
            triples.push((u, i, neg));
        }
    }
    triples.shuffle(rng);
    triples
        .chunks(batch_size.max(1))
        .map(|chunk| TripleBatch {
            users: chunk.iter().map(|t| t.0).collect(),
            pos: chunk.iter().map(|t| t.1).collect(),
            neg: chunk.iter().map(|t| t.2).collect(),
        })
        .collect()
}

pub fn sample_triples(train: &InteractionGraph, batch_size: usize, seed: u64) -> Vec<TripleBatch> {
    sample_epoch(train, batch_size, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Mat> = params.tensors().iter().map(|(_, t)| Mat::zeros(t.raw_dim())).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &[Mat], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// The data a model is trained and evaluated on, derived deterministically
/// from the full interaction graph and the configuration.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: DatasetSplit,
    pub social: SocialGraph,
    /// Activity labels from the training interactions.
    pub labels: ActivityLabels,
}

impl PreparedData {
    pub fn new(graph: &InteractionGraph, social: SocialGraph, cfg: &TrainConfig) -> Result<Self> {
        if social.num_users() != graph.num_users() {
            return Err(LsirError::Shape("social graph and interactions disagree on users".into()));
        }
        let split = split_train_test(graph, cfg.holdout_fraction, cfg.seed)?;
        let labels = label_activity(&split.train, cfg.activity)?;
        Ok(PreparedData { split, social, labels })
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.split.train, &self.social)
    }
}

/// SHA-256 over the training interactions and the social edges.
pub fn fingerprint(train: &InteractionGraph, social: &SocialGraph) -> String {
    let mut h = Sha256::new();
    h.update(format!("{} {}\n", train.num_users(), train.num_items()));
    for (u, i) in train.pairs() {
        h.update(format!("{u} {i}\n"));
    }
    h.update("social\n");
    for (u, v) in social.edges() {
        h.update(format!("{u} {v}\n"));
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub bpr: f64,
    pub mimic: f64,
    pub total: f64,
}

/// A trained model and everything needed to resume or evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub data_fingerprint: String,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub mimic_optimizer: Option<AdamState>,
    pub clusters: ClusterModel,
    pub loss_curve: Vec<EpochLoss>,
}

impl TrainedModel {
    pub fn epochs_completed(&self) -> usize {
        self.loss_curve.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LsirError::io(path, e))?;
        let model: TrainedModel = serde_json::from_str(&text)
            .map_err(|e| LsirError::Incompatible(format!("{}: {e}", path.display())))?;
        if model.format != CHECKPOINT_FORMAT || model.version != CHECKPOINT_VERSION {
            return Err(LsirError::Incompatible(format!(
                "{} is a {} v{} file",
                path.display(),
                model.format,
                model.version
            )));
        }
        if model.config.hash() != model.config_hash {
            return Err(LsirError::Incompatible("checkpoint config hash does not match".into()));
        }
        Ok(model)
    }

    /// Fails unless the model was trained on exactly this data.
    pub fn check_data(&self, data: &PreparedData) -> Result<()> {
        if self.data_fingerprint != data.fingerprint() {
            return Err(LsirError::Incompatible(
                "checkpoint was trained on a different dataset or split".into(),
            ));
        }
        Ok(())
    }

    pub fn model_data<'a>(&'a self, data: &'a PreparedData) -> Result<ModelData<'a>> {
        ModelData::new(&data.split.train, &data.social, &data.labels, &self.clusters)
    }
}

/// Training stopped early. `last_good` holds the model after the last
/// completed epoch, if any.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: LsirError,
    pub last_good: Option<Box<TrainedModel>>,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for TrainAbort {}

impl From<LsirError> for TrainAbort {
    fn from(error: LsirError) -> Self {
        TrainAbort { error, last_good: None }
    }
}

/// Sets up a fresh model: clusters mined on the training interactions and
/// Glorot-initialised parameters.
pub fn initialise(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainedModel> {
    cfg.validate()?;
    let train = &data.split.train;
    let clusters = mine_clusters(train, &data.labels, cfg.clusters, cfg.seed)?;
    let mut rng = stream(cfg.seed, STREAM_INIT);
    let params = ModelParams::init(
        cfg,
        train.user_features.width(),
        train.item_features.width(),
        &mut rng,
    );
    let optimizer = AdamState::new(&params);
    Ok(TrainedModel {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        data_fingerprint: data.fingerprint(),
        mimic_optimizer: cfg.mimic_lr.map(|_| optimizer.clone()),
        optimizer,
        params,
        clusters,
        loss_curve: Vec::new(),
    })
}

/// Runs one epoch in place.
pub fn train_epoch(model: &mut TrainedModel, data: &PreparedData) -> Result<EpochLoss> {
    let cfg = model.config.clone();
    let epoch = model.epochs_completed() as u64;
    let mut sampler = stream(cfg.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15), STREAM_SAMPLING);
    let mut mimic_rng = stream(cfg.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15), STREAM_MIMIC);
    let batches = sample_epoch(&data.split.train, cfg.batch_size, &mut sampler);
    let mut acc = EpochLoss {
        bpr: 0.0,
        mimic: 0.0,
        total: 0.0,
    };
    for batch in &batches {
        let obj = {
            let md = ModelData::new(&data.split.train, &data.social, &data.labels, &model.clusters)?;
            objective(&cfg, &model.params, &md, batch, None, &mut mimic_rng)?
        };
        if !obj.total.is_finite() {
            return Err(LsirError::Diverged {
                epoch: model.epochs_completed() + 1,
                loss: obj.total,
            });
        }
        model.optimizer.apply(&mut model.params, &obj.grads, cfg.lr);
        if let (Some(lr), Some(grads)) = (cfg.mimic_lr, &obj.mimic_grads) {
            let state = model
                .mimic_optimizer
                .get_or_insert_with(|| AdamState::new(&model.params));
            state.apply(&mut model.params, grads, lr);
        }
        acc.bpr += obj.bpr;
        acc.mimic += obj.mimic;
        acc.total += obj.total;
    }
    let nb = batches.len().max(1) as f64;
    let loss = EpochLoss {
        bpr: acc.bpr / nb,
        mimic: acc.mimic / nb,
        total: acc.total / nb,
    };
    model.loss_curve.push(loss);
    Ok(loss)
}

/// Continues training until `model.config.epochs` epochs are done.
pub fn resume(mut model: TrainedModel, data: &PreparedData) -> std::result::Result<TrainedModel, TrainAbort> {
    model.check_data(data)?;
    while model.epochs_completed() < model.config.epochs {
        let before = model.clone();
        match train_epoch(&mut model, data) {
            Ok(loss) => log::info!(
                "epoch {}: total {:.4} (ranking {:.4}, mimic {:.4})",
                model.epochs_completed(),
                loss.total,
                loss.bpr,
                loss.mimic
            ),
            Err(error) => {
                let last_good = (before.epochs_completed() > 0).then(|| Box::new(before));
                return Err(TrainAbort { error, last_good });
            }
        }
    }
    Ok(model)
}

pub fn train(cfg: &TrainConfig, data: &PreparedData) -> std::result::Result<TrainedModel, TrainAbort> {
    resume(initialise(cfg, data)?, data)
}
