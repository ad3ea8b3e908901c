//! Text checkpoints (TOML): mask, optimizer moments, config echo and a
//! fingerprint of the input files. Floats are written at full precision so a
//! save/load/save cycle is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::training::{AdamState, TrainConfig, TrainOutcome};
use crate::types::{validate_stages, FeatureSet, Mask, MaskResolution, StageSpec};

pub const CHECKPOINT_FORMAT: &str = "hyperagg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stages: Vec<StageSpec>,
    pub mask: Mask,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub fingerprint: String,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl Checkpoint {
    pub fn from_outcome(
        outcome: TrainOutcome,
        stages: &[StageSpec],
        config: &TrainConfig,
        fingerprint: String,
    ) -> Self {
        Self {
            stages: stages.to_vec(),
            mask: outcome.mask,
            adam: outcome.adam,
            config: config.clone(),
            fingerprint,
            best_epoch: outcome.best_epoch,
            train_loss: outcome.train_loss,
            val_loss: outcome.val_loss,
        }
    }

    /// Untrained checkpoint holding the identity mask.
    pub fn identity(stages: &[StageSpec], resolution: MaskResolution) -> Self {
        let mask = Mask::identity(resolution, stages);
        let adam = AdamState::for_mask(&mask);
        Self {
            stages: stages.to_vec(),
            mask,
            adam,
            config: TrainConfig {
                resolution,
                epochs: 0,
                ..Default::default()
            },
            fingerprint: String::new(),
            best_epoch: 0,
            train_loss: 0.0,
            val_loss: 0.0,
        }
    }

    /// Check that the checkpoint's mask fits a FeatureSet's stage layout.
    pub fn check_features(&self, features: &FeatureSet) -> Result<()> {
        if features.stages() != self.stages.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint stages {} do not match feature stages {}",
                describe(&self.stages),
                describe(features.stages())
            )));
        }
        self.mask.check_compatible(features.stages())
    }

    pub fn to_toml(&self) -> Result<String> {
        let doc = Document {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            fingerprint: self.fingerprint.clone(),
            best_epoch: self.best_epoch as u64,
            train_loss: self.train_loss,
            val_loss: self.val_loss,
            resolution: self.mask.resolution(),
            stages: self
                .stages
                .iter()
                .map(|s| StageDoc {
                    name: s.name.clone(),
                    channels: s.channels as u64,
                    spatial: s.spatial as u64,
                })
                .collect(),
            coefficients: self.mask.coefficients().to_vec(),
            optimizer: OptimizerDoc {
                step: self.adam.step,
                m: self.adam.m.clone(),
                v: self.adam.v.clone(),
            },
            config: self.config.clone(),
        };
        toml::to_string(&doc).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: Document = toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint: format {:?}",
                doc.format
            )));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                doc.version
            )));
        }
        let stages: Vec<StageSpec> = doc
            .stages
            .into_iter()
            .map(|s| StageSpec::new(s.name, s.channels as usize, s.spatial as usize))
            .collect();
        validate_stages(&stages).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mask = Mask::from_coefficients(doc.resolution, &stages, doc.coefficients)?;
        let n = mask.num_coefficients();
        if doc.optimizer.m.len() != n || doc.optimizer.v.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "optimizer moments have {}/{} entries, mask has {n}",
                doc.optimizer.m.len(),
                doc.optimizer.v.len()
            )));
        }
        if doc.config.resolution != doc.resolution {
            return Err(Error::Checkpoint(
                "config resolution disagrees with mask".into(),
            ));
        }
        Ok(Self {
            stages,
            mask,
            adam: AdamState {
                step: doc.optimizer.step,
                m: doc.optimizer.m,
                v: doc.optimizer.v,
            },
            config: doc.config,
            fingerprint: doc.fingerprint,
            best_epoch: doc.best_epoch as usize,
            train_loss: doc.train_loss,
            val_loss: doc.val_loss,
        })
    }
}

fn describe(stages: &[StageSpec]) -> String {
    let parts: Vec<String> = stages
        .iter()
        .map(|s| format!("{}:{}x{}", s.name, s.channels, s.spatial))
        .collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    fingerprint: String,
    best_epoch: u64,
    train_loss: f64,
    val_loss: f64,
    resolution: MaskResolution,
    coefficients: Vec<Vec<f32>>,
    stages: Vec<StageDoc>,
    optimizer: OptimizerDoc,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct StageDoc {
    name: String,
    channels: u64,
    spatial: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerDoc {
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), checkpoint.to_toml()?.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: not UTF-8", path.display())))?;
    Checkpoint::from_toml(&text)
}

/// Load and validate against the FeatureSet the checkpoint will be applied to.
pub fn load_checkpoint_for(path: impl AsRef<Path>, features: &FeatureSet) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.check_features(features)?;
    Ok(ckpt)
}
