//! Checkpoints: one safetensors archive holding both parameter groups, with
//! the run-config snapshot, compat hash and step in the header metadata.
//! Loading refuses to run when the stored hash disagrees with the runtime
//! configuration.

use std::collections::HashMap;
use std::path::Path;

use svs_core::config::RunConfig;
use svs_core::lexicon::PhonemeVocab;

use crate::error::{ModelError, Result};
use crate::model::AcousticModel;

const META_HASH: &str = "config_hash";
const META_STEP: &str = "step";
const META_CONFIG: &str = "run_config";

pub fn save(model: &AcousticModel, vocab: &PhonemeVocab, step: u64, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    for (name, var) in model.gen_store.named_vars() {
        tensors.push((format!("gen.{name}"), var.as_tensor().clone()));
    }
    for (name, var) in model.disc_store.named_vars() {
        tensors.push((format!("disc.{name}"), var.as_tensor().clone()));
    }
    let mut metadata = HashMap::new();
    metadata.insert(META_HASH.to_string(), model.cfg.compat_hash(vocab));
    metadata.insert(META_STEP.to_string(), step.to_string());
    metadata.insert(
        META_CONFIG.to_string(),
        serde_json::to_string(&model.cfg).expect("run config serializes"),
    );

    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(tensors, Some(metadata), &tmp)
        .map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?;
    Ok(())
}

pub struct CheckpointInfo {
    pub step: u64,
    pub config: RunConfig,
}

pub fn read_info(path: &Path) -> Result<CheckpointInfo> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::CheckpointReadFailure(e.to_string()))?;
    let (_, metadata) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| ModelError::CheckpointReadFailure(e.to_string()))?;
    let meta = metadata
        .metadata()
        .as_ref()
        .ok_or_else(|| ModelError::CheckpointReadFailure("checkpoint has no metadata".into()))?;
    let step = meta
        .get(META_STEP)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelError::CheckpointReadFailure("missing step".into()))?;
    let config: RunConfig = serde_json::from_str(
        meta.get(META_CONFIG)
            .ok_or_else(|| ModelError::CheckpointReadFailure("missing run config".into()))?,
    )
    .map_err(|e| ModelError::CheckpointReadFailure(format!("bad run config: {e}")))?;
    Ok(CheckpointInfo { step, config })
}

/// Load weights into a freshly built model after verifying the compat hash.
pub fn load(model: &mut AcousticModel, vocab: &PhonemeVocab, path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::CheckpointReadFailure(e.to_string()))?;
    let (_, metadata) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| ModelError::CheckpointReadFailure(e.to_string()))?;
    let meta = metadata
        .metadata()
        .as_ref()
        .ok_or_else(|| ModelError::CheckpointReadFailure("checkpoint has no metadata".into()))?;

    let runtime = model.cfg.compat_hash(vocab);
    let stored = meta
        .get(META_HASH)
        .ok_or_else(|| ModelError::CheckpointReadFailure("missing config hash".into()))?;
    if *stored != runtime {
        return Err(ModelError::ConfigHashMismatch { stored: stored.clone(), runtime });
    }
    let step = meta.get(META_STEP).and_then(|s| s.parse().ok()).unwrap_or(0);

    let tensors = candle_core::safetensors::load(path, &model.device)?;
    let keys: Vec<String> = model
        .gen_store
        .named_vars()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    for name in keys {
        let stored = tensors
            .get(&format!("gen.{name}"))
            .ok_or_else(|| ModelError::CheckpointReadFailure(format!("missing tensor gen.{name}")))?;
        model.gen_store.set(&name, stored)?;
    }
    let keys: Vec<String> = model
        .disc_store
        .named_vars()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    for name in keys {
        let stored = tensors
            .get(&format!("disc.{name}"))
            .ok_or_else(|| ModelError::CheckpointReadFailure(format!("missing tensor disc.{name}")))?;
        model.disc_store.set(&name, stored)?;
    }
    Ok(step)
}
