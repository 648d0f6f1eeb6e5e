//! Checkpoint persistence: a versioned JSON container with every network
//! parameter, batch-norm statistic, hyperparameter, and the seed/epoch pair
//! that pins the RNG streams.

use std::path::Path;

use super::train::TrainedModel;
use crate::error::{Result, TrackerError};

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(model)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let json = std::fs::read_to_string(path)?;
    let mut model: TrainedModel = serde_json::from_str(&json)?;
    if model.version != CHECKPOINT_VERSION {
        return Err(TrackerError::Config(format!(
            "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
            model.version
        )));
    }
    model.policy.mean_net.rebuild_layout()?;
    model.policy.std_net.rebuild_layout()?;
    model.value_net.rebuild_layout()?;
    Ok(model)
}
