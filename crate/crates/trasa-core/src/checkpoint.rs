//! Checkpoint persistence: model parameters together with the configuration
//! that shaped them, in the named-tensor container format.

use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{validate_inventory, ModelConfig};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::store::TensorStore;

/// Marker stored in the container metadata so other container files are
/// rejected early with a clear message.
pub const CHECKPOINT_KIND: &str = "trasa-checkpoint";

/// Write parameters and their configuration to one file. The inventory is
/// validated first so a checkpoint can never hold a store that its own
/// configuration would reject.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    store: &TensorStore<S>,
    cfg: &ModelConfig,
) -> Result<()> {
    cfg.validate()?;
    validate_inventory(cfg, store)?;
    let meta = json!({ "kind": CHECKPOINT_KIND, "model": cfg });
    store.save(path, meta)
}

/// Load a checkpoint, validating the kind marker, the configuration, and
/// the parameter inventory against it.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(TensorStore<S>, ModelConfig)> {
    let (store, meta) = TensorStore::<S>::load(path)?;
    let cfg = config_from_meta(&meta, path)?;
    validate_inventory(&cfg, &store)?;
    Ok((store, cfg))
}

/// Read only the header: element type and configuration. Lets a caller
/// dispatch on the stored precision before loading the tensors.
pub fn peek_checkpoint(path: &Path) -> Result<(Dtype, ModelConfig)> {
    let (dtype, meta) = TensorStore::<f64>::peek(path)?;
    let cfg = config_from_meta(&meta, path)?;
    Ok((dtype, cfg))
}

fn config_from_meta(meta: &serde_json::Value, path: &Path) -> Result<ModelConfig> {
    let kind = meta.get("kind").and_then(|v| v.as_str());
    if kind != Some(CHECKPOINT_KIND) {
        return Err(Error::Format(format!(
            "{} is not a model checkpoint (kind: {})",
            path.display(),
            kind.unwrap_or("missing")
        )));
    }
    let model = meta
        .get("model")
        .cloned()
        .ok_or_else(|| Error::Format(format!("{}: checkpoint lacks a model configuration", path.display())))?;
    let cfg: ModelConfig = serde_json::from_value(model)
        .map_err(|e| Error::Format(format!("{}: invalid model configuration: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
