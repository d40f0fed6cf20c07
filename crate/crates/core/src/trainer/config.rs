use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abema::AbemaConfig;
use crate::encoders::EegEncoderKind;
use crate::error::{Error, Result};
use crate::hypergraph::HypergraphConfig;
use crate::spectral::BandEdges;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Eeg, Modality::Audio, Modality::Video];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Eeg => "eeg",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eeg" => Ok(Modality::Eeg),
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            other => Err(Error::Argument(format!("unknown modality `{other}`"))),
        }
    }
}

/// Which segments go to the held-out side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SplitSpec {
    /// Stratified per subject, union over subjects.
    All { test_fraction: f64 },
    /// One subject only.
    Subject { subject: String, test_fraction: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::All { test_fraction: 0.3 }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::All { test_fraction } => write!(f, "all:{test_fraction}"),
            SplitSpec::Subject { subject, test_fraction } => write!(f, "subject:{subject}:{test_fraction}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    /// `all:0.3` or `subject:<id>:0.3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::Argument(format!("split spec `{s}`; expected `all:<fraction>` or `subject:<id>:<fraction>`"));
        let fraction = |t: &str| t.parse::<f64>().map_err(|_| bad());
        if let Some(rest) = s.strip_prefix("all:") {
            return Ok(SplitSpec::All { test_fraction: fraction(rest)? });
        }
        if let Some(rest) = s.strip_prefix("subject:") {
            let (id, frac) = rest.rsplit_once(':').ok_or_else(bad)?;
            if id.is_empty() {
                return Err(bad());
            }
            return Ok(SplitSpec::Subject { subject: id.to_string(), test_fraction: fraction(frac)? });
        }
        Err(bad())
    }
}

impl TryFrom<String> for SplitSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SplitSpec> for String {
    fn from(s: SplitSpec) -> String {
        s.to_string()
    }
}

/// Component switches used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub no_intra_mca: bool,
    pub no_inter_mca: bool,
    pub no_node_weights: bool,
    pub no_hyperedge_weights: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 4] = ["no_intra_mca", "no_inter_mca", "no_node_weights", "no_hyperedge_weights"];

    pub fn set(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no_intra_mca" => self.no_intra_mca = true,
            "no_inter_mca" => self.no_inter_mca = true,
            "no_node_weights" => self.no_node_weights = true,
            "no_hyperedge_weights" => self.no_hyperedge_weights = true,
            other => return Err(Error::Argument(format!("unknown ablation flag `{other}`"))),
        }
        Ok(())
    }

    pub fn any(&self) -> bool {
        self.no_intra_mca || self.no_inter_mca || self.no_node_weights || self.no_hyperedge_weights
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Dialogues per optimizer step.
    pub batch_size: usize,
    pub dropout: f64,
    pub l2_lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub d: usize,
    pub d_k: usize,
    pub balance_alpha: f64,
    pub transformer_depth: usize,
    pub transformer_heads: usize,
    pub transformer_dim: usize,
    pub hypergraph_layers: usize,
    pub max_segments: usize,
    pub hypergraph_layer_transform: bool,
    pub leaky_slope: f64,
    /// Defaults to `3d/2`.
    pub classifier_hidden: Option<usize>,
    pub eeg_encoder: EegEncoderKind,
    pub band_edges: BandEdges,
    pub modalities: Vec<Modality>,
    pub ablation: AblationFlags,
    pub seed: u64,
    /// Defaults to `seed`.
    pub split_seed: Option<u64>,
    pub split: SplitSpec,
    pub data: Option<String>,
    /// Evaluate on the held-out side every this many epochs (0 disables).
    pub eval_every: usize,
    /// Record eval-mode accuracy on the training side every epoch.
    pub eval_train: bool,
    /// Unseen subjects fall back to the identity channel mix at evaluation.
    pub unseen_subject_identity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 40,
            batch_size: 16,
            dropout: 0.5,
            l2_lambda: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            d: 64,
            d_k: 64,
            balance_alpha: 0.5,
            transformer_depth: 1,
            transformer_heads: 2,
            transformer_dim: 64,
            hypergraph_layers: 2,
            max_segments: 16,
            hypergraph_layer_transform: false,
            leaky_slope: 0.01,
            classifier_hidden: None,
            eeg_encoder: EegEncoderKind::default(),
            band_edges: BandEdges::default(),
            modalities: Modality::ALL.to_vec(),
            ablation: AblationFlags::default(),
            seed: 42,
            split_seed: None,
            split: SplitSpec::default(),
            data: None,
            eval_every: 1,
            eval_train: true,
            unseen_subject_identity: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.l2_lambda >= 0.0) {
            return fail(format!("l2_lambda {}", self.l2_lambda));
        }
        if self.d == 0 || self.d_k == 0 {
            return fail("d and d_k must be positive".into());
        }
        if self.modalities.is_empty() {
            return fail("at least one modality is required".into());
        }
        let mut seen = self.modalities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modalities.len() {
            return fail(format!("repeated modality in {:?}", self.modalities));
        }
        Ok(())
    }

    /// Modalities in canonical (eeg, audio, video) order.
    pub fn active_modalities(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|m| self.modalities.contains(m)).collect()
    }

    pub fn hidden_width(&self) -> usize {
        self.classifier_hidden.unwrap_or(3 * self.d / 2).max(1)
    }

    pub fn abema(&self) -> AbemaConfig {
        AbemaConfig {
            d_k: self.d_k,
            transformer_depth: self.transformer_depth,
            transformer_heads: self.transformer_heads,
            transformer_dim: self.transformer_dim,
            balance_alpha: self.balance_alpha,
            band_edges: self.band_edges,
            intra_mca: !self.ablation.no_intra_mca,
            inter_mca: !self.ablation.no_inter_mca,
        }
    }

    pub fn hypergraph(&self) -> HypergraphConfig {
        HypergraphConfig {
            layers: self.hypergraph_layers,
            max_segments: self.max_segments,
            node_weights: !self.ablation.no_node_weights,
            hyperedge_weights: !self.ablation.no_hyperedge_weights,
            layer_transform: self.hypergraph_layer_transform,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn effective_split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!((c.learning_rate, c.epochs, c.batch_size, c.dropout), (1e-4, 40, 16, 0.5));
        assert_eq!(c.hidden_width(), 96);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rat": 1}"#).is_err());
    }

    #[test]
    fn split_specs_round_trip() {
        for s in ["all:0.3", "subject:s01:0.25", "subject:a:b:0.5"] {
            assert_eq!(s.parse::<SplitSpec>().unwrap().to_string(), s);
        }
        assert!("half".parse::<SplitSpec>().is_err());
        assert!("subject::0.3".parse::<SplitSpec>().is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"split": "subject:s00:0.2"}"#).unwrap();
        assert_eq!(c.split, SplitSpec::Subject { subject: "s00".into(), test_fraction: 0.2 });
    }

    #[test]
    fn ablation_flag_names() {
        let mut f = AblationFlags::default();
        for n in AblationFlags::NAMES {
            f.set(n).unwrap();
        }
        assert!(f.no_intra_mca && f.no_inter_mca && f.no_node_weights && f.no_hyperedge_weights);
        assert!(f.set("no_everything").is_err());
    }
}
