//! Built-in image classifier, checkpoints, and evaluation metrics.

mod image;
mod metrics;
mod network;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use image::ImageTensor;
pub use metrics::{
    confusion, f1_score, format_ratio, metrics, ConfusionCounts, Metrics, Ratio, POSITIVE_CLASS,
};
pub use network::{
    argmax, softmax, train, Architecture, DropoutMask, Model, Optimizer, TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("input shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dropout rate {0} is outside [0, 1)")]
    InvalidDropout(f64),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged to {loss} at epoch {epoch}{}", batch.map(|b| format!(", batch {b}")).unwrap_or_default())]
    Diverged {
        epoch: usize,
        batch: Option<usize>,
        loss: f64,
    },
    #[error("model parameters contain non-finite values")]
    NonFiniteParameters,
    #[error("confusion counts need a binary model, this one has {0} classes")]
    NotBinary(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Anything that maps an input tensor to class probabilities.
pub trait Predictor {
    fn classes(&self) -> usize;
    fn predict_probs(&self, input: &ImageTensor) -> Result<Vec<f64>, ClassifierError>;
}

const CHECKPOINT_FORMAT: &str = "proteoknight-cnn";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: Architecture,
    dropout: f64,
    parameters: Vec<f64>,
}

impl Model {
    /// JSON checkpoint: format tag, version, architecture, flat parameters.
    pub fn to_checkpoint(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            architecture: self.architecture().clone(),
            dropout: self.dropout(),
            parameters: self.parameters().to_vec(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, ClassifierError> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ClassifierError::Checkpoint(format!(
                "unexpected format tag '{}'",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ClassifierError::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        Model::from_parameters(ckpt.architecture, ckpt.dropout, ckpt.parameters)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_checkpoint())
            .map_err(|e| ClassifierError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClassifierError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&text)
    }
}
