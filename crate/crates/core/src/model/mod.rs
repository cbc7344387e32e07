//! Binary patch classifier: losses, the reference CNN, training and weight
//! persistence.

pub mod loss;
pub mod network;
pub mod persist;
pub mod scalar;
pub mod train;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{resize, GeometryError, Interpolation};
use crate::raster::Raster;
use crate::sampler::PatchSet;

pub use loss::{cross_entropy, focal_loss, focal_loss_grad, LossKind, LossParams};
pub use network::Architecture;
pub use train::{train_prepared, TrainConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("patch set is empty")]
    EmptyPatchSet,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid weight file: {0}")]
    BadWeightFile(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Anything that maps an RGB patch to a late-blight probability.
pub trait PatchClassifier: Sync {
    /// Side of the square input the classifier expects.
    fn input_size(&self) -> usize;

    /// Probability for a patch already resized to `input_size`.
    fn predict_proba(&self, patch: &Raster) -> Result<f64, ModelError>;

    fn predict_batch(&self, patches: &[Raster]) -> Result<Vec<f64>, ModelError> {
        patches.par_iter().map(|p| self.predict_proba(p)).collect()
    }
}

/// A network input: CHW floats in `[0, 1]` plus the binary target.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub input: Vec<f32>,
    pub target: u8,
}

/// Bilinear resize to `s x s`, then channel-major floats scaled to `[0, 1]`.
pub fn to_input(patch: &Raster, s: usize) -> Result<Vec<f32>, ModelError> {
    if patch.channels() != 3 {
        return Err(ModelError::ArchitectureMismatch(format!(
            "expected an RGB patch, got {} channel(s)",
            patch.channels()
        )));
    }
    let resized = resize(patch, s, Interpolation::Bilinear)?;
    let hw = s * s;
    let mut out = vec![0f32; 3 * hw];
    for (i, px) in resized.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * hw + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

pub fn prepare_patchset(
    set: &PatchSet,
    input_size: usize,
) -> Result<Vec<PreparedSample>, ModelError> {
    set.patches
        .par_iter()
        .map(|p| {
            Ok(PreparedSample {
                input: to_input(&p.pixels, input_size)?,
                target: p.label.as_target(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: Option<TrainConfig>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub data_digest: String,
    pub sample_count: usize,
}

/// Architecture, weights and training provenance of a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub architecture: Architecture,
    pub weights: Vec<Vec<f32>>,
    pub metadata: TrainingMetadata,
}

impl ModelState {
    /// Freshly initialized, untrained network.
    pub fn initialized(architecture: Architecture, seed: u64) -> Result<Self, ModelError> {
        architecture.validate().map_err(ModelError::InvalidConfig)?;
        let weights = architecture.init_weights(&mut crate::rng::Stream::new(
            crate::rng::derive_seed(seed, "init"),
            0,
        ));
        Ok(Self {
            architecture,
            weights,
            metadata: TrainingMetadata::default(),
        })
    }

    /// Logit for a prepared input.
    pub fn logit(&self, input: &[f32]) -> f32 {
        let mut ws = network::Workspace::new(&self.architecture);
        network::forward(&self.architecture, &self.weights, input, &mut ws)
    }

    pub fn predict_prepared(&self, input: &[f32]) -> f64 {
        loss::sigmoid(self.logit(input) as f64)
    }

    /// SHA-256 of the architecture and weight bytes (metadata excluded).
    pub fn weight_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.architecture).expect("architecture serializes"));
        for t in &self.weights {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        persist::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        persist::from_bytes(bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        persist::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        persist::load(path)
    }
}

impl PatchClassifier for ModelState {
    fn input_size(&self) -> usize {
        self.architecture.input_size
    }

    fn predict_proba(&self, patch: &Raster) -> Result<f64, ModelError> {
        let input = to_input(patch, self.architecture.input_size)?;
        Ok(self.predict_prepared(&input))
    }
}

/// Resizes every patch to the configured input size and trains.
pub fn train(set: &PatchSet, config: &TrainConfig) -> Result<ModelState, ModelError> {
    if set.is_empty() {
        return Err(ModelError::EmptyPatchSet);
    }
    config.validate()?;
    let samples = prepare_patchset(set, config.input_size)?;
    train_prepared(&samples, config, &set.digest())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_model_predicts_one_half() {
        let model = ModelState::initialized(Architecture::reference(16), 3).unwrap();
        let patch = Raster::from_fn(40, 40, 3, |x, y| [x as u8, y as u8, 7]);
        assert_eq!(model.predict_proba(&patch).unwrap(), 0.5);
    }

    #[test]
    fn mask_shaped_input_is_rejected() {
        let model = ModelState::initialized(Architecture::reference(16), 3).unwrap();
        let mask = Raster::filled(16, 16, 1, 0);
        assert!(matches!(
            model.predict_proba(&mask),
            Err(ModelError::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn to_input_is_channel_major() {
        let patch = Raster::from_fn(2, 2, 3, |x, y| [(x * 255) as u8, (y * 255) as u8, 51]);
        let v = to_input(&patch, 2).unwrap();
        assert_eq!(&v[0..4], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&v[4..8], &[0.0, 0.0, 1.0, 1.0]);
        assert!(v[8..].iter().all(|&x| (x - 0.2).abs() < 1e-7));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig {
            input_size: 16,
            ..TrainConfig::default()
        };
        ok.validate().unwrap();
        for bad in [
            TrainConfig {
                input_size: 4,
                ..ok.clone()
            },
            TrainConfig {
                epochs: 0,
                ..ok.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..ok.clone()
            },
            TrainConfig {
                loss_params: LossParams {
                    alpha: 0.0,
                    gamma: 2.0,
                },
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(ModelError::InvalidConfig(_))));
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = TrainConfig {
            input_size: 16,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_prepared::<PreparedSample>(&[], &cfg, ""),
            Err(ModelError::EmptyPatchSet)
        ));
    }

    #[test]
    fn corrupt_weight_files_are_rejected() {
        let model = ModelState::initialized(Architecture::reference(16), 3).unwrap();
        let bytes = model.to_bytes();
        assert!(ModelState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelState::from_bytes(&extra).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(ModelState::from_bytes(&wrong_magic).is_err());
        assert_eq!(ModelState::from_bytes(&bytes).unwrap(), model);
    }
}
