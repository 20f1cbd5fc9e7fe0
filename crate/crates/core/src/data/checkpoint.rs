use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::observations::ClassVocabulary;
use crate::error::{Result, RfnError};
use crate::features::{CategoryVocabulary, FeatureScaling};
use crate::learn::{TrainConfig, Trained};
use crate::model::{Hyper, ModelKind};

pub const CHECKPOINT_FORMAT: &str = "rfn-ckpt-1";

/// Everything needed to run a trained model on another network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub hyper: Hyper,
    pub trained: Trained,
    pub scaling: FeatureScaling,
    pub vocabulary: CategoryVocabulary,
    /// Class labels of the speed-limit task.
    pub classes: Option<ClassVocabulary>,
    pub include_u_turns: bool,
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    sha256: String,
    checkpoint: T,
}

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        if let Some(params) = self.trained.model.params() {
            if let Some(i) = params.values().iter().position(|t| !t.is_finite()) {
                return Err(RfnError::Format(format!("parameter {} is not finite", params.names()[i])));
            }
        }
        let body = serde_json::to_string(self).map_err(|e| RfnError::Format(e.to_string()))?;
        let envelope = Envelope {
            format: CHECKPOINT_FORMAT.to_string(),
            sha256: digest(&body),
            checkpoint: self,
        };
        serde_json::to_string(&envelope).map_err(|e| RfnError::Format(e.to_string()))
    }

    /// Parses and verifies a checkpoint. The checksum covers the canonical
    /// serialization of the checkpoint body, so any change to its content
    /// is rejected.
    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let parse = |e: serde_json::Error| RfnError::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        };
        let envelope: Envelope<serde_json::Value> = serde_json::from_str(text).map_err(parse)?;
        if envelope.format != CHECKPOINT_FORMAT {
            return Err(RfnError::Format(format!(
                "{source_name}: checkpoint format `{}` is not supported (expected `{CHECKPOINT_FORMAT}`)",
                envelope.format
            )));
        }
        let ckpt: Checkpoint = serde_json::from_value(envelope.checkpoint).map_err(parse)?;
        let body = serde_json::to_string(&ckpt).map_err(|e| RfnError::Format(e.to_string()))?;
        if digest(&body) != envelope.sha256 {
            return Err(RfnError::Parse {
                source_name: source_name.to_string(),
                message: "checksum mismatch; the checkpoint is corrupted".into(),
            });
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let text = ckpt.to_json()?;
    std::fs::write(path, text).map_err(|e| RfnError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RfnError::io(path, e))?;
    Checkpoint::from_json(&text, &path.display().to_string())
}
