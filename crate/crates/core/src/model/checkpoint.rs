//! Single-file checkpoints: a safetensors archive whose metadata carries the
//! model configuration as JSON.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor};

use super::{ModelConfig, RefCut};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";
const CONFIG_KEY: &str = "refcut.config";
const VERSION_KEY: &str = "refcut.format_version";

impl RefCut {
    /// Write config and every named weight to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_metadata(path, HashMap::new())
    }

    pub fn save_with_metadata(
        &self,
        path: impl AsRef<Path>,
        mut extra: HashMap<String, String>,
    ) -> Result<()> {
        let data = self.varmap().data().lock().expect("varmap lock");
        let mut tensors: Vec<(String, Tensor)> = data
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        drop(data);
        tensors.sort_by(|a, b| a.0.cmp(&b.0));
        extra.insert(CONFIG_KEY.into(), serde_json::to_string(self.config())?);
        extra.insert(VERSION_KEY.into(), FORMAT_VERSION.into());
        safetensors::serialize_to_file(tensors, Some(extra), path.as_ref())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Rebuild a model from a checkpoint, validating that every weight
    /// exists with the shape implied by the stored config.
    pub fn load(path: impl AsRef<Path>, dtype: DType) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = meta.metadata().clone().unwrap_or_default();
        let config_json = meta
            .get(CONFIG_KEY)
            .ok_or_else(|| Error::Checkpoint("missing model config".into()))?;
        let config: ModelConfig = serde_json::from_str(config_json)?;
        let model = RefCut::new(config, 0, dtype)?;

        let mut stored = candle_core::safetensors::load_buffer(&bytes, model.device())?;
        let data = model.varmap().data().lock().expect("varmap lock");
        for (name, var) in data.iter() {
            let t = stored
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing weight {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "weight {name} has shape {:?}, config implies {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(dtype)?)?;
        }
        if let Some(name) = stored.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected weight {name}")));
        }
        drop(data);
        Ok(model)
    }

    /// Metadata entries stored alongside the weights.
    pub fn read_metadata(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
        let bytes = std::fs::read(path.as_ref())?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(meta.metadata().clone().unwrap_or_default())
    }
}
