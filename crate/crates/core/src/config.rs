//! Training configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ActivityPolicy;
use crate::encoder::ReadoutScale;
use crate::error::{LsirError, Result};
use crate::gsl::RefineConfig;
use crate::mimic::{MimicConfig, MimicVariant};

/// Model variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Raw social graph, no pruning, no anchors, no mimic loss.
    PlusUu,
    /// No neighbour pruning.
    NoU2u,
    /// No cluster anchors.
    NoU2c,
    /// No mimic loss.
    NoMimic,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::PlusUu,
        Ablation::NoU2u,
        Ablation::NoU2c,
        Ablation::NoMimic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::PlusUu => "plus_uu",
            Ablation::NoU2u => "no_u2u",
            Ablation::NoU2c => "no_u2c",
            Ablation::NoMimic => "no_mimic",
        }
    }

    pub fn prunes_neighbors(self) -> bool {
        !matches!(self, Ablation::PlusUu | Ablation::NoU2u)
    }

    pub fn adds_anchors(self) -> bool {
        !matches!(self, Ablation::PlusUu | Ablation::NoU2c)
    }

    pub fn uses_mimic(self) -> bool {
        !matches!(self, Ablation::PlusUu | Ablation::NoMimic)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = LsirError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| LsirError::Config(format!("unknown ablation '{s}'")))
    }
}

/// Which user embeddings the mimic loss uses for anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    /// Layer-mean embeddings before social refinement.
    #[default]
    Readout,
    /// Embeddings after the last refinement iteration.
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub dim: usize,
    /// Hidden width of the projection MLPs; `dim` when absent.
    pub hidden_dim: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    pub r1: f64,
    pub r2: f64,
    pub clusters: usize,
    pub alpha: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub xi: f64,
    pub tau: f64,
    pub beta: f64,
    pub eta: usize,
    pub keep_prob: f64,
    pub mimic_variant: MimicVariant,
    pub lr: f64,
    /// Separate step size for the mimic gradient. When absent both losses
    /// share one optimiser step.
    pub mimic_lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub holdout_fraction: f64,
    pub activity: ActivityPolicy,
    pub ablation: Ablation,
    pub readout_scale: ReadoutScale,
    pub standard_infonce: bool,
    pub mimic_anchor_source: AnchorSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            dim: 64,
            hidden_dim: None,
            layers: 3,
            heads: 2,
            r1: 10.0,
            r2: 10.0,
            clusters: 30,
            alpha: 0.5,
            iterations: 2,
            lambda: 1e-4,
            xi: 0.1,
            tau: 0.2,
            beta: 0.5,
            eta: 1,
            keep_prob: 0.5,
            mimic_variant: MimicVariant::InactiveMixture,
            lr: 1e-3,
            mimic_lr: None,
            batch_size: 2048,
            epochs: 30,
            holdout_fraction: 0.25,
            activity: ActivityPolicy::Percentile(0.3),
            ablation: Ablation::Full,
            readout_scale: ReadoutScale::Mean,
            standard_infonce: false,
            mimic_anchor_source: AnchorSource::Readout,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| LsirError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LsirError::Config(msg));
        if self.dim == 0 || self.hidden() == 0 {
            return bad("embedding widths must be positive".into());
        }
        if self.layers == 0 {
            return bad("at least one propagation layer is needed".into());
        }
        if self.heads == 0 {
            return bad("at least one similarity head is needed".into());
        }
        if self.clusters < 2 {
            return bad(format!("at least two clusters are needed, got {}", self.clusters));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0) || self.mimic_lr.is_some_and(|r| !(r > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(self.xi >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout fraction must lie in (0, 1), got {}", self.holdout_fraction));
        }
        match self.activity {
            ActivityPolicy::Threshold(0) => return bad("activity threshold must be at least 1".into()),
            ActivityPolicy::Percentile(p) if !(p > 0.0 && p < 1.0) => {
                return bad(format!("activity percentile must lie in (0, 1), got {p}"))
            }
            _ => {}
        }
        self.refine().validate()?;
        self.mimic().validate()
    }

    pub fn refine(&self) -> RefineConfig {
        RefineConfig {
            alpha: self.alpha,
            iterations: self.iterations,
            r1: self.r1,
            r2: self.r2,
            prune_neighbors: self.ablation.prunes_neighbors(),
            add_anchors: self.ablation.adds_anchors(),
        }
    }

    pub fn mimic(&self) -> MimicConfig {
        MimicConfig {
            variant: self.mimic_variant,
            beta: self.beta,
            eta: self.eta,
            keep_prob: self.keep_prob,
            tau: self.tau,
            standard_infonce: self.standard_infonce,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            r#"{"clusters": 1}"#,
            r#"{"r1": 0}"#,
            r#"{"alpha": 1.5}"#,
            r#"{"tau": 0}"#,
            r#"{"eta": 0}"#,
            r#"{"no_such_field": 1}"#,
            r#"{"ablation": "everything"}"#,
        ] {
            assert!(matches!(TrainConfig::from_json(text), Err(LsirError::Config(_))), "{text}");
        }
    }

    #[test]
    fn ablation_flags() {
        assert!(!Ablation::PlusUu.prunes_neighbors() && !Ablation::PlusUu.adds_anchors());
        assert!(!Ablation::NoU2u.prunes_neighbors() && Ablation::NoU2u.adds_anchors());
        assert!(Ablation::NoU2c.prunes_neighbors() && !Ablation::NoU2c.adds_anchors());
        assert!(!Ablation::NoMimic.uses_mimic() && Ablation::Full.uses_mimic());
        assert_eq!("no_u2c".parse::<Ablation>().unwrap(), Ablation::NoU2c);
    }
}
